#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vtn/tensor.hpp"

namespace vtn {

/// Hyperparameters of the VTN decoder and its classifier head.
struct DecoderConfig {
  std::uint32_t d = 512;           // frame embedding width seen by the blocks
  std::uint32_t heads = 8;         // M
  std::uint32_t d_k = 64;          // query/key width per head
  std::uint32_t d_v = 64;          // value width per head
  std::uint32_t d_ff = 1024;       // hidden width of the kernel-1 feedforward
  std::uint32_t blocks = 4;        // N
  std::uint32_t t = 16;            // clip length used for cost accounting
  std::uint32_t num_classes = 400;
  std::uint32_t input_dim = 512;   // width of incoming clips; != d only with input projection

  // Structural variants. Each one is persisted as a flag in the model file.
  bool attention_residual = true;       // x + MHSA(x) before the feedforward
  bool input_projection = false;        // learned input_dim -> d affine map before block 0
  bool post_concat_projection = false;  // learned (M*d_v) -> d affine map after head concat

  std::size_t concat_width() const { return std::size_t{heads} * d_v; }

  /// Throws ConfigError when the combination cannot form a valid decoder.
  void validate() const;

  bool operator==(const DecoderConfig&) const = default;
};

template <typename T>
struct HeadWeights {
  Matrix<T> w_q, b_q;
  Matrix<T> w_k, b_k;
  Matrix<T> w_v, b_v;
};

template <typename T>
struct BlockWeights {
  std::vector<HeadWeights<T>> heads;
  Matrix<T> w_o, b_o;  // empty unless config.post_concat_projection
  Matrix<T> w_ff1, b_ff1;
  Matrix<T> w_ff2, b_ff2;
};

/// Every learned parameter of the decoder. Biases are 1 x n rows.
template <typename T>
struct DecoderWeights {
  DecoderConfig config;
  Matrix<T> w_in, b_in;  // empty unless config.input_projection
  std::vector<BlockWeights<T>> blocks;
  Matrix<T> w_cls, b_cls;

  /// Parameter tensors in canonical serialization order, with stable names
  /// such as "block1.head0.w_q".
  std::vector<std::pair<std::string, Matrix<T>*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix<T>*>> named_tensors() const;

  std::size_t parameter_count() const;

  template <typename U>
  DecoderWeights<U> cast() const;
};

/// Gradients share the exact layout of the weights they differentiate.
using DecoderGradients = DecoderWeights<double>;

/// All-zero parameters shaped for `config`.
template <typename T>
DecoderWeights<T> zero_weights(const DecoderConfig& config);

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) matrices and zero biases.
template <typename T>
DecoderWeights<T> init_weights(const DecoderConfig& config, std::uint64_t seed);

template <typename T>
struct AttentionOutput {
  Matrix<T> q, k, v;
  Matrix<T> attention;  // t x t, rows sum to one
  Matrix<T> out;        // t x d_v
};

/// softmax(Q K^T / sqrt(d_k)) V for one head, keeping the intermediates.
template <typename T>
AttentionOutput<T> attention_head_detailed(const Matrix<T>& x, const HeadWeights<T>& w);

template <typename T>
Matrix<T> attention_head(const Matrix<T>& x, const HeadWeights<T>& w) {
  return attention_head_detailed(x, w).out;
}

/// Column concatenation of every head output, in head order.
template <typename T>
Matrix<T> multi_head_self_attention(const Matrix<T>& x, std::span<const HeadWeights<T>> heads);

/// x + relu(x W1 + b1) W2 + b2, independently per row.
template <typename T>
Matrix<T> pointwise_feedforward(const Matrix<T>& x, const BlockWeights<T>& w);

template <typename T>
Matrix<T> decoder_block(const Matrix<T>& x, const BlockWeights<T>& w, const DecoderConfig& config);

/// Optional input projection followed by every decoder block.
template <typename T>
Matrix<T> decoder_forward(const Matrix<T>& x, const DecoderWeights<T>& w);

template <typename T>
struct ClipPrediction {
  Matrix<T> frame_logits;         // t x num_classes
  std::vector<T> clip_logits;     // mean of frame_logits over t
  std::vector<T> clip_probs;      // softmax(clip_logits)
};

class DecoderTape;

template <typename T>
ClipPrediction<T> classify_clip(const Matrix<T>& x, const DecoderWeights<T>& w);

/// Forward pass that records the intermediates needed by decoder_backward.
ClipPrediction<double> classify_clip(const Tensor2D& x, const DecoderWeights<double>& w,
                                     DecoderTape& tape);

/// Lowest class index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> values);

struct BackwardResult {
  DecoderGradients weights;
  Tensor2D input;  // dL/dx for the clip that was recorded
};

/// Cached intermediates of one classify_clip forward pass (64-bit only).
class DecoderTape {
 public:
  bool recorded() const noexcept { return recorded_; }
  void clear();

  /// Attention matrices of the recorded pass, block-major then head order.
  std::vector<const Tensor2D*> attention_maps() const;

 private:
  friend ClipPrediction<double> classify_clip(const Tensor2D&, const DecoderWeights<double>&,
                                              DecoderTape&);
  friend BackwardResult decoder_backward(const DecoderTape&, const DecoderWeights<double>&,
                                         std::span<const double>);

  struct HeadRecord {
    Tensor2D q, k, v, attention;
  };
  struct BlockRecord {
    Tensor2D input;
    std::vector<HeadRecord> heads;
    Tensor2D concat;
    Tensor2D mixed;   // attention output (+ residual) fed to the feedforward
    Tensor2D hidden_pre;
  };

  bool recorded_ = false;
  Tensor2D input;
  Tensor2D projected;
  std::vector<BlockRecord> blocks;
  Tensor2D decoded;
};

/// Analytic gradients given dL/d(clip_logits). Throws StateError when the
/// tape holds no recorded forward pass.
BackwardResult decoder_backward(const DecoderTape& tape, const DecoderWeights<double>& w,
                                std::span<const double> clip_logit_grad);

}  // namespace vtn
