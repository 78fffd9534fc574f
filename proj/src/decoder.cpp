#include "vtn/decoder.hpp"

#include <cmath>
#include <random>

namespace vtn {

void DecoderConfig::validate() const {
  auto positive = [](std::uint32_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("decoder config: ") + name + " must be >= 1");
  };
  positive(d, "d");
  positive(heads, "heads");
  positive(d_k, "d_k");
  positive(d_v, "d_v");
  positive(d_ff, "d_ff");
  positive(blocks, "blocks");
  positive(t, "t");
  positive(num_classes, "num_classes");
  positive(input_dim, "input_dim");
  if (!post_concat_projection && concat_width() != d) {
    throw ConfigError("decoder config: heads * d_v = " + std::to_string(concat_width()) +
                      " must equal d = " + std::to_string(d) +
                      " without a post-concatenation projection");
  }
  if (!input_projection && input_dim != d) {
    throw ConfigError("decoder config: input_dim " + std::to_string(input_dim) +
                      " differs from d " + std::to_string(d) + " without an input projection");
  }
}

template <typename T>
std::vector<std::pair<std::string, Matrix<T>*>> DecoderWeights<T>::named_tensors() {
  std::vector<std::pair<std::string, Matrix<T>*>> out;
  if (config.input_projection) {
    out.emplace_back("input.w", &w_in);
    out.emplace_back("input.b", &b_in);
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& block = blocks[b];
    const std::string prefix = "block" + std::to_string(b) + ".";
    for (std::size_t h = 0; h < block.heads.size(); ++h) {
      auto& head = block.heads[h];
      const std::string hp = prefix + "head" + std::to_string(h) + ".";
      out.emplace_back(hp + "w_q", &head.w_q);
      out.emplace_back(hp + "b_q", &head.b_q);
      out.emplace_back(hp + "w_k", &head.w_k);
      out.emplace_back(hp + "b_k", &head.b_k);
      out.emplace_back(hp + "w_v", &head.w_v);
      out.emplace_back(hp + "b_v", &head.b_v);
    }
    if (config.post_concat_projection) {
      out.emplace_back(prefix + "w_o", &block.w_o);
      out.emplace_back(prefix + "b_o", &block.b_o);
    }
    out.emplace_back(prefix + "w_ff1", &block.w_ff1);
    out.emplace_back(prefix + "b_ff1", &block.b_ff1);
    out.emplace_back(prefix + "w_ff2", &block.w_ff2);
    out.emplace_back(prefix + "b_ff2", &block.b_ff2);
  }
  out.emplace_back("classifier.w", &w_cls);
  out.emplace_back("classifier.b", &b_cls);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Matrix<T>*>> DecoderWeights<T>::named_tensors() const {
  auto mutable_view = const_cast<DecoderWeights<T>*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Matrix<T>*>> out;
  out.reserve(mutable_view.size());
  for (auto& [name, ptr] : mutable_view) out.emplace_back(std::move(name), ptr);
  return out;
}

template <typename T>
std::size_t DecoderWeights<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& entry : named_tensors()) total += entry.second->size();
  return total;
}

template <typename T>
template <typename U>
DecoderWeights<U> DecoderWeights<T>::cast() const {
  DecoderWeights<U> out = zero_weights<U>(config);
  auto src = named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
  return out;
}

template <typename T>
DecoderWeights<T> zero_weights(const DecoderConfig& config) {
  config.validate();
  DecoderWeights<T> w;
  w.config = config;
  if (config.input_projection) {
    w.w_in = Matrix<T>(config.input_dim, config.d);
    w.b_in = Matrix<T>(1, config.d);
  }
  w.blocks.resize(config.blocks);
  for (auto& block : w.blocks) {
    block.heads.resize(config.heads);
    for (auto& head : block.heads) {
      head.w_q = Matrix<T>(config.d, config.d_k);
      head.b_q = Matrix<T>(1, config.d_k);
      head.w_k = Matrix<T>(config.d, config.d_k);
      head.b_k = Matrix<T>(1, config.d_k);
      head.w_v = Matrix<T>(config.d, config.d_v);
      head.b_v = Matrix<T>(1, config.d_v);
    }
    if (config.post_concat_projection) {
      block.w_o = Matrix<T>(config.concat_width(), config.d);
      block.b_o = Matrix<T>(1, config.d);
    }
    block.w_ff1 = Matrix<T>(config.d, config.d_ff);
    block.b_ff1 = Matrix<T>(1, config.d_ff);
    block.w_ff2 = Matrix<T>(config.d_ff, config.d);
    block.b_ff2 = Matrix<T>(1, config.d);
  }
  w.w_cls = Matrix<T>(config.d, config.num_classes);
  w.b_cls = Matrix<T>(1, config.num_classes);
  return w;
}

template <typename T>
DecoderWeights<T> init_weights(const DecoderConfig& config, std::uint64_t seed) {
  DecoderWeights<T> w = zero_weights<T>(config);
  std::mt19937_64 rng(seed);
  for (auto& [name, tensor] : w.named_tensors()) {
    if (name[name.rfind('.') + 1] == 'b') continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(tensor->rows() + tensor->cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : tensor->data()) v = static_cast<T>(dist(rng));
  }
  return w;
}

template <typename T>
AttentionOutput<T> attention_head_detailed(const Matrix<T>& x, const HeadWeights<T>& w) {
  if (x.cols() != w.w_q.rows()) {
    throw ShapeError("attention_head: input " + x.shape() + " incompatible with W_q " +
                     w.w_q.shape());
  }
  AttentionOutput<T> r;
  r.q = affine(x, w.w_q, w.b_q);
  r.k = affine(x, w.w_k, w.b_k);
  r.v = affine(x, w.w_v, w.b_v);
  const T inv_sqrt_dk = T{1} / std::sqrt(static_cast<T>(w.w_q.cols()));
  r.attention = softmax_rows(scale(matmul(r.q, transpose(r.k)), inv_sqrt_dk));
  r.out = matmul(r.attention, r.v);
  return r;
}

template <typename T>
Matrix<T> multi_head_self_attention(const Matrix<T>& x, std::span<const HeadWeights<T>> heads) {
  if (heads.empty()) throw ShapeError("multi_head_self_attention: no heads");
  std::vector<Matrix<T>> outs;
  outs.reserve(heads.size());
  for (const auto& head : heads) outs.push_back(attention_head(x, head));
  return concat_cols(std::span<const Matrix<T>>(outs));
}

template <typename T>
Matrix<T> pointwise_feedforward(const Matrix<T>& x, const BlockWeights<T>& w) {
  if (x.cols() != w.w_ff1.rows()) {
    throw ShapeError("pointwise_feedforward: input " + x.shape() + " incompatible with W_ff1 " +
                     w.w_ff1.shape());
  }
  Matrix<T> hidden = relu(affine(x, w.w_ff1, w.b_ff1));
  return add(x, affine(hidden, w.w_ff2, w.b_ff2));
}

namespace {

template <typename T>
struct BlockTrace {
  std::vector<AttentionOutput<T>> heads;
  Matrix<T> concat;
  Matrix<T> mixed;
  Matrix<T> hidden_pre;
  Matrix<T> out;
};

template <typename T>
BlockTrace<T> block_forward(const Matrix<T>& x, const BlockWeights<T>& w,
                            const DecoderConfig& config) {
  BlockTrace<T> tr;
  std::vector<Matrix<T>> outs;
  tr.heads.reserve(w.heads.size());
  outs.reserve(w.heads.size());
  for (const auto& head : w.heads) {
    tr.heads.push_back(attention_head_detailed(x, head));
    outs.push_back(tr.heads.back().out);
  }
  tr.concat = concat_cols(std::span<const Matrix<T>>(outs));
  Matrix<T> attended =
      config.post_concat_projection ? affine(tr.concat, w.w_o, w.b_o) : tr.concat;
  tr.mixed = config.attention_residual ? add(x, attended) : std::move(attended);
  tr.hidden_pre = affine(tr.mixed, w.w_ff1, w.b_ff1);
  tr.out = add(tr.mixed, affine(relu(tr.hidden_pre), w.w_ff2, w.b_ff2));
  return tr;
}

template <typename T>
void check_input(const Matrix<T>& x, const DecoderConfig& config) {
  if (x.cols() != config.input_dim) {
    throw ShapeError("decoder: input " + x.shape() + " expects " +
                     std::to_string(config.input_dim) + " columns");
  }
}

template <typename T>
ClipPrediction<T> head_from_decoded(const Matrix<T>& decoded, const DecoderWeights<T>& w) {
  ClipPrediction<T> p;
  p.frame_logits = affine(decoded, w.w_cls, w.b_cls);
  const std::size_t classes = p.frame_logits.cols();
  p.clip_logits.assign(classes, T{0});
  for (std::size_t i = 0; i < p.frame_logits.rows(); ++i) {
    auto r = p.frame_logits.row(i);
    for (std::size_t c = 0; c < classes; ++c) p.clip_logits[c] += r[c];
  }
  const T inv_t = T{1} / static_cast<T>(p.frame_logits.rows());
  for (auto& v : p.clip_logits) v *= inv_t;
  p.clip_probs = softmax<T>(p.clip_logits);
  return p;
}

}  // namespace

template <typename T>
Matrix<T> decoder_block(const Matrix<T>& x, const BlockWeights<T>& w, const DecoderConfig& config) {
  if (x.cols() != config.d) {
    throw ShapeError("decoder_block: input " + x.shape() + " expects " + std::to_string(config.d) +
                     " columns");
  }
  return block_forward(x, w, config).out;
}

template <typename T>
Matrix<T> decoder_forward(const Matrix<T>& x, const DecoderWeights<T>& w) {
  check_input(x, w.config);
  Matrix<T> h = w.config.input_projection ? affine(x, w.w_in, w.b_in) : x;
  for (const auto& block : w.blocks) h = block_forward(h, block, w.config).out;
  return h;
}

template <typename T>
ClipPrediction<T> classify_clip(const Matrix<T>& x, const DecoderWeights<T>& w) {
  return head_from_decoded(decoder_forward(x, w), w);
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw ShapeError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void DecoderTape::clear() {
  recorded_ = false;
  blocks.clear();
  input = {};
  projected = {};
  decoded = {};
}

std::vector<const Tensor2D*> DecoderTape::attention_maps() const {
  std::vector<const Tensor2D*> out;
  for (const auto& b : blocks)
    for (const auto& h : b.heads) out.push_back(&h.attention);
  return out;
}

ClipPrediction<double> classify_clip(const Tensor2D& x, const DecoderWeights<double>& w,
                                     DecoderTape& tape) {
  tape.clear();
  check_input(x, w.config);
  tape.input = x;
  Tensor2D h = w.config.input_projection ? affine(x, w.w_in, w.b_in) : x;
  if (w.config.input_projection) tape.projected = h;
  tape.blocks.reserve(w.blocks.size());
  for (const auto& block : w.blocks) {
    BlockTrace<double> tr = block_forward(h, block, w.config);
    DecoderTape::BlockRecord rec;
    rec.input = std::move(h);
    for (auto& head : tr.heads) {
      rec.heads.push_back({std::move(head.q), std::move(head.k), std::move(head.v),
                           std::move(head.attention)});
    }
    rec.concat = std::move(tr.concat);
    rec.mixed = std::move(tr.mixed);
    rec.hidden_pre = std::move(tr.hidden_pre);
    tape.blocks.push_back(std::move(rec));
    h = std::move(tr.out);
  }
  tape.decoded = h;
  tape.recorded_ = true;
  return head_from_decoded(h, w);
}

BackwardResult decoder_backward(const DecoderTape& tape, const DecoderWeights<double>& w,
                                std::span<const double> clip_logit_grad) {
  if (!tape.recorded()) throw StateError("decoder_backward: no recorded forward pass");
  const DecoderConfig& cfg = w.config;
  if (clip_logit_grad.size() != cfg.num_classes) {
    throw ShapeError("decoder_backward: gradient has " + std::to_string(clip_logit_grad.size()) +
                     " entries, expected " + std::to_string(cfg.num_classes));
  }
  if (tape.blocks.size() != w.blocks.size() || tape.decoded.cols() != cfg.d) {
    throw StateError("decoder_backward: tape was recorded with a different configuration");
  }

  BackwardResult result{zero_weights<double>(cfg), {}};
  DecoderGradients& g = result.weights;
  const std::size_t t = tape.decoded.rows();

  // The clip logits are the mean of the frame logits: each frame receives g / t.
  Tensor2D d_frame(t, cfg.num_classes);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
      d_frame(i, c) = clip_logit_grad[c] / static_cast<double>(t);
  g.w_cls = matmul(transpose(tape.decoded), d_frame);
  g.b_cls = column_sums(d_frame);
  Tensor2D dh = matmul(d_frame, transpose(w.w_cls));

  for (std::size_t bi = w.blocks.size(); bi-- > 0;) {
    const auto& block = w.blocks[bi];
    const auto& rec = tape.blocks[bi];
    auto& gb = g.blocks[bi];

    // Feedforward with its residual.
    const Tensor2D hidden = relu(rec.hidden_pre);
    gb.w_ff2 = matmul(transpose(hidden), dh);
    gb.b_ff2 = column_sums(dh);
    Tensor2D d_hidden = matmul(dh, transpose(block.w_ff2));
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
      if (rec.hidden_pre.data()[i] <= 0.0) d_hidden.data()[i] = 0.0;
    }
    gb.w_ff1 = matmul(transpose(rec.mixed), d_hidden);
    gb.b_ff1 = column_sums(d_hidden);
    Tensor2D d_mixed = add(dh, matmul(d_hidden, transpose(block.w_ff1)));

    Tensor2D dx = cfg.attention_residual ? d_mixed : Tensor2D(t, cfg.d);
    Tensor2D d_concat = d_mixed;
    if (cfg.post_concat_projection) {
      gb.w_o = matmul(transpose(rec.concat), d_mixed);
      gb.b_o = column_sums(d_mixed);
      d_concat = matmul(d_mixed, transpose(block.w_o));
    }

    for (std::size_t hi = 0; hi < block.heads.size(); ++hi) {
      const auto& hw = block.heads[hi];
      const auto& hr = rec.heads[hi];
      auto& gh = gb.heads[hi];
      const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));

      const Tensor2D d_out = slice_cols(d_concat, hi * cfg.d_v, cfg.d_v);
      const Tensor2D d_attn = matmul(d_out, transpose(hr.v));
      const Tensor2D d_v = matmul(transpose(hr.attention), d_out);

      // Row-wise softmax Jacobian: dS = A * (dA - rowsum(dA * A)).
      Tensor2D d_scores(t, t);
      for (std::size_t i = 0; i < t; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < t; ++j) dot += d_attn(i, j) * hr.attention(i, j);
        for (std::size_t j = 0; j < t; ++j)
          d_scores(i, j) = hr.attention(i, j) * (d_attn(i, j) - dot) * inv_sqrt_dk;
      }
      const Tensor2D d_q = matmul(d_scores, hr.k);
      const Tensor2D d_k = matmul(transpose(d_scores), hr.q);

      const Tensor2D xt = transpose(rec.input);
      gh.w_q = matmul(xt, d_q);
      gh.b_q = column_sums(d_q);
      gh.w_k = matmul(xt, d_k);
      gh.b_k = column_sums(d_k);
      gh.w_v = matmul(xt, d_v);
      gh.b_v = column_sums(d_v);
      accumulate(dx, matmul(d_q, transpose(hw.w_q)));
      accumulate(dx, matmul(d_k, transpose(hw.w_k)));
      accumulate(dx, matmul(d_v, transpose(hw.w_v)));
    }
    dh = std::move(dx);
  }

  if (cfg.input_projection) {
    g.w_in = matmul(transpose(tape.input), dh);
    g.b_in = column_sums(dh);
    dh = matmul(dh, transpose(w.w_in));
  }
  result.input = std::move(dh);
  return result;
}

#define VTN_INSTANTIATE(T)                                                                       \
  template struct DecoderWeights<T>;                                                             \
  template DecoderWeights<T> zero_weights<T>(const DecoderConfig&);                              \
  template DecoderWeights<T> init_weights<T>(const DecoderConfig&, std::uint64_t);               \
  template AttentionOutput<T> attention_head_detailed<T>(const Matrix<T>&, const HeadWeights<T>&); \
  template Matrix<T> multi_head_self_attention<T>(const Matrix<T>&,                              \
                                                  std::span<const HeadWeights<T>>);              \
  template Matrix<T> pointwise_feedforward<T>(const Matrix<T>&, const BlockWeights<T>&);         \
  template Matrix<T> decoder_block<T>(const Matrix<T>&, const BlockWeights<T>&,                  \
                                      const DecoderConfig&);                                     \
  template Matrix<T> decoder_forward<T>(const Matrix<T>&, const DecoderWeights<T>&);             \
  template ClipPrediction<T> classify_clip<T>(const Matrix<T>&, const DecoderWeights<T>&);       \
  template std::size_t argmax<T>(std::span<const T>);

VTN_INSTANTIATE(float)
VTN_INSTANTIATE(double)
#undef VTN_INSTANTIATE

template DecoderWeights<float> DecoderWeights<double>::cast<float>() const;
template DecoderWeights<double> DecoderWeights<float>::cast<double>() const;
template DecoderWeights<double> DecoderWeights<double>::cast<double>() const;

}  // namespace vtn
