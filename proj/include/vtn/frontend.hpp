#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtn/tensor.hpp"

namespace vtn {

/// Decoded video: planar 8-bit frames (channel, row, column per frame) plus
/// per-channel normalization applied to [0,1]-scaled pixels.
struct FrameSequence {
  std::uint32_t num_frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::vector<std::uint8_t> pixels;
  std::vector<float> mean{0.5f, 0.5f, 0.5f};
  std::vector<float> stddev{0.5f, 0.5f, 0.5f};

  std::size_t frame_size() const { return std::size_t{height} * width * channels; }
  std::span<const std::uint8_t> frame(std::size_t index) const;

  /// Throws ConfigError on inconsistent dimensions or normalization.
  void validate() const;
};

/// Real-valued planar image (normalized frame or frame difference).
struct FramePlane {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> values;
};

/// One sampled clip: clip_len frames taken every `stride` frames from
/// segment_start.
struct ClipSpec {
  std::size_t segment_start = 0;
  std::size_t stride = 2;
  std::size_t clip_len = 16;

  std::size_t receptive_field() const { return stride * clip_len; }
};

enum class Modality : std::uint8_t { kRgb, kRgbDiff, kStacked };

const char* to_string(Modality m);

struct EmbeddingClip {
  Tensor2D embeddings;  // t x d
  std::optional<std::size_t> label;
  Modality modality = Modality::kRgb;
};

/// Contiguous run of table rows that belong to one video.
struct VideoRecord {
  std::uint64_t first_row = 0;
  std::uint64_t row_count = 0;
  std::int32_t label = -1;  // -1 when unlabeled

  bool operator==(const VideoRecord&) const = default;
};

/// Per-frame embeddings of one or more videos, as stored on disk.
struct EmbeddingTable {
  std::uint32_t d = 0;
  std::uint64_t rows = 0;
  std::vector<float> values;         // rows x d, row-major
  std::vector<VideoRecord> videos;   // empty: the whole table is one unlabeled video

  std::span<const float> row(std::size_t index) const;
  /// Recorded videos, or a single unlabeled record spanning all rows.
  std::vector<VideoRecord> video_records() const;
  /// Throws ConfigError when values or records disagree with the header.
  void validate() const;

  bool operator==(const EmbeddingTable&) const = default;
};

/// Non-overlapping windows starting at 0, window, 2*window, ...; a trailing
/// partial window is dropped. Each spec samples window / stride frames.
std::vector<ClipSpec> enumerate_segments(std::size_t num_frames, std::size_t window = 32,
                                         std::size_t stride = 2);

/// segment_start + stride * i for i in [0, clip_len). Throws BoundsError
/// when the receptive field overruns the video.
std::vector<std::size_t> sample_clip(std::size_t num_frames, const ClipSpec& spec);
std::vector<std::size_t> sample_clip(const FrameSequence& frames, const ClipSpec& spec);

/// (pixel / 255 - mean[c]) / stddev[c] for one frame.
FramePlane normalize_frame(const FrameSequence& frames, std::size_t index);

/// Normalized frame at each sampled position minus the normalized frame
/// `stride` earlier. The first position uses the frame before
/// segment_start when one exists, otherwise its difference is all zeros.
std::vector<FramePlane> rgb_diff(const FrameSequence& frames, const ClipSpec& spec);

/// What a provider sees for one clip position.
struct FrameInput {
  std::size_t frame_index = 0;
  const FramePlane* plane = nullptr;  // null for index-addressed providers
};

/// Maps one frame to a d-dimensional embedding. Implementations are
/// read-only after construction.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(const FrameInput& input) const = 0;
};

/// Serves stored rows of an EmbeddingTable by frame index.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit FileEmbeddingProvider(EmbeddingTable table);

  std::size_t dim() const override { return table_.d; }
  std::vector<double> embed(const FrameInput& input) const override;
  const EmbeddingTable& table() const { return table_; }

 private:
  EmbeddingTable table_;
};

/// Deterministic stand-in for a pretrained CNN: 8x8 grayscale area
/// downsampling, a fixed seeded affine map 64 -> d, then tanh.
class ToyEncoder final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kGrid = 8;

  ToyEncoder(std::size_t dim, std::uint64_t seed);

  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(const FrameInput& input) const override;

  /// tanh of the bias, i.e. the embedding of an all-zero plane.
  std::vector<double> zero_response() const;

  /// Grayscale 8x8 grid of the plane, row-major.
  static std::vector<double> downsample(const FramePlane& plane);

 private:
  std::size_t dim_;
  Tensor2D weight_;  // 64 x d
  Tensor2D bias_;    // 1 x d
};

/// One provider call per input, assembled into a t x d clip. Throws
/// ConfigError when the provider width differs from expected_dim.
EmbeddingClip embed_clip(const EmbeddingProvider& provider, std::span<const FrameInput> inputs,
                         std::size_t expected_dim, Modality modality);

/// Samples `spec` from the frames, normalizes, and embeds each position.
EmbeddingClip embed_rgb_clip(const EmbeddingProvider& provider, const FrameSequence& frames,
                             const ClipSpec& spec, std::size_t expected_dim);

/// Embeds the rgb_diff planes of `spec`.
EmbeddingClip embed_diff_clip(const EmbeddingProvider& provider, const FrameSequence& frames,
                              const ClipSpec& spec, std::size_t expected_dim);

/// Table rows addressed by the sampled indices of `spec`, relative to the
/// first row of `video`.
EmbeddingClip embed_table_clip(const FileEmbeddingProvider& provider, const VideoRecord& video,
                               const ClipSpec& spec, std::size_t expected_dim);

/// Per-position concatenation [rgb | diff] tagged as stacked.
EmbeddingClip stack_modalities(const EmbeddingClip& rgb, const EmbeddingClip& diff);

}  // namespace vtn
