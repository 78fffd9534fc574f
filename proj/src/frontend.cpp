#include "vtn/frontend.hpp"

#include <cmath>
#include <random>

namespace vtn {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::kRgb:
      return "rgb";
    case Modality::kRgbDiff:
      return "rgbdiff";
    case Modality::kStacked:
      return "stacked";
  }
  return "unknown";
}

std::span<const std::uint8_t> FrameSequence::frame(std::size_t index) const {
  if (index >= num_frames) {
    throw BoundsError("frame " + std::to_string(index) + " outside video of " +
                      std::to_string(num_frames) + " frames");
  }
  return std::span<const std::uint8_t>(pixels).subspan(index * frame_size(), frame_size());
}

void FrameSequence::validate() const {
  if (num_frames == 0) throw ConfigError("frame sequence: no frames");
  if (height == 0 || width == 0 || channels == 0) throw ConfigError("frame sequence: empty frame");
  if (pixels.size() != frame_size() * num_frames) {
    throw ConfigError("frame sequence: expected " + std::to_string(frame_size() * num_frames) +
                      " pixel bytes, got " + std::to_string(pixels.size()));
  }
  if (mean.size() != channels || stddev.size() != channels) {
    throw ConfigError("frame sequence: normalization needs one mean/std per channel");
  }
  for (float s : stddev) {
    if (!(s > 0.0f)) throw ConfigError("frame sequence: std must be positive");
  }
}

std::span<const float> EmbeddingTable::row(std::size_t index) const {
  if (index >= rows) {
    throw BoundsError("embedding row " + std::to_string(index) + " outside table of " +
                      std::to_string(rows) + " rows");
  }
  return std::span<const float>(values).subspan(index * d, d);
}

std::vector<VideoRecord> EmbeddingTable::video_records() const {
  if (!videos.empty()) return videos;
  return {VideoRecord{0, rows, -1}};
}

void EmbeddingTable::validate() const {
  if (d == 0) throw ConfigError("embedding table: d must be >= 1");
  if (values.size() != rows * d) {
    throw ConfigError("embedding table: " + std::to_string(values.size()) +
                      " values do not match " + std::to_string(rows) + " x " + std::to_string(d));
  }
  for (const auto& v : videos) {
    if (v.first_row > rows || v.row_count > rows - v.first_row) {
      throw ConfigError("embedding table: video record [" + std::to_string(v.first_row) + ", +" +
                        std::to_string(v.row_count) + ") outside " + std::to_string(rows) +
                        " rows");
    }
    if (v.label < -1) throw ConfigError("embedding table: negative label");
  }
}

std::vector<ClipSpec> enumerate_segments(std::size_t num_frames, std::size_t window,
                                         std::size_t stride) {
  if (stride == 0 || window == 0 || window % stride != 0) {
    throw ConfigError("enumerate_segments: window " + std::to_string(window) +
                      " must be a positive multiple of stride " + std::to_string(stride));
  }
  std::vector<ClipSpec> out;
  out.reserve(num_frames / window);
  for (std::size_t start = 0; start + window <= num_frames; start += window) {
    out.push_back(ClipSpec{start, stride, window / stride});
  }
  return out;
}

std::vector<std::size_t> sample_clip(std::size_t num_frames, const ClipSpec& spec) {
  if (spec.stride == 0 || spec.clip_len == 0) {
    throw ConfigError("sample_clip: stride and clip_len must be >= 1");
  }
  if (spec.segment_start + spec.receptive_field() > num_frames) {
    throw BoundsError("sample_clip: window [" + std::to_string(spec.segment_start) + ", " +
                      std::to_string(spec.segment_start + spec.receptive_field()) +
                      ") overruns video of " + std::to_string(num_frames) + " frames");
  }
  std::vector<std::size_t> out(spec.clip_len);
  for (std::size_t i = 0; i < spec.clip_len; ++i) out[i] = spec.segment_start + spec.stride * i;
  return out;
}

std::vector<std::size_t> sample_clip(const FrameSequence& frames, const ClipSpec& spec) {
  return sample_clip(frames.num_frames, spec);
}

FramePlane normalize_frame(const FrameSequence& frames, std::size_t index) {
  const auto bytes = frames.frame(index);
  FramePlane plane{frames.channels, frames.height, frames.width,
                   std::vector<float>(bytes.size())};
  const std::size_t area = std::size_t{frames.height} * frames.width;
  for (std::size_t c = 0; c < frames.channels; ++c) {
    const float m = frames.mean[c];
    const float s = frames.stddev[c];
    for (std::size_t p = 0; p < area; ++p) {
      const std::size_t i = c * area + p;
      plane.values[i] = (static_cast<float>(bytes[i]) / 255.0f - m) / s;
    }
  }
  return plane;
}

std::vector<FramePlane> rgb_diff(const FrameSequence& frames, const ClipSpec& spec) {
  frames.validate();
  const auto indices = sample_clip(frames, spec);
  std::vector<FramePlane> out;
  out.reserve(indices.size());

  std::optional<FramePlane> previous;
  if (spec.segment_start >= spec.stride) {
    previous = normalize_frame(frames, spec.segment_start - spec.stride);
  }
  for (std::size_t index : indices) {
    FramePlane current = normalize_frame(frames, index);
    FramePlane diff{current.channels, current.height, current.width,
                    std::vector<float>(current.values.size(), 0.0f)};
    if (previous) {
      for (std::size_t i = 0; i < diff.values.size(); ++i)
        diff.values[i] = current.values[i] - previous->values[i];
    }
    out.push_back(std::move(diff));
    previous = std::move(current);
  }
  return out;
}

FileEmbeddingProvider::FileEmbeddingProvider(EmbeddingTable table) : table_(std::move(table)) {
  table_.validate();
}

std::vector<double> FileEmbeddingProvider::embed(const FrameInput& input) const {
  const auto r = table_.row(input.frame_index);
  return std::vector<double>(r.begin(), r.end());
}

ToyEncoder::ToyEncoder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), weight_(kGrid * kGrid, dim), bias_(1, dim) {
  std::mt19937_64 rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(kGrid * kGrid + dim));
  std::uniform_real_distribution<double> w(-limit, limit);
  for (auto& v : weight_.data()) v = w(rng);
  std::uniform_real_distribution<double> b(-0.5, 0.5);
  for (auto& v : bias_.data()) v = b(rng);
}

std::vector<double> ToyEncoder::downsample(const FramePlane& plane) {
  if (plane.channels == 0 || plane.height == 0 || plane.width == 0) {
    throw ShapeError("toy encoder: empty plane");
  }
  const std::size_t area = std::size_t{plane.height} * plane.width;
  std::vector<double> grid(kGrid * kGrid, 0.0);
  for (std::size_t gy = 0; gy < kGrid; ++gy) {
    const std::size_t y0 = gy * plane.height / kGrid;
    const std::size_t y1 = std::max(y0 + 1, (gy + 1) * plane.height / kGrid);
    for (std::size_t gx = 0; gx < kGrid; ++gx) {
      const std::size_t x0 = gx * plane.width / kGrid;
      const std::size_t x1 = std::max(x0 + 1, (gx + 1) * plane.width / kGrid);
      double acc = 0.0;
      for (std::size_t c = 0; c < plane.channels; ++c)
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) acc += plane.values[c * area + y * plane.width + x];
      grid[gy * kGrid + gx] =
          acc / static_cast<double>(plane.channels * (y1 - y0) * (x1 - x0));
    }
  }
  return grid;
}

std::vector<double> ToyEncoder::embed(const FrameInput& input) const {
  if (input.plane == nullptr) throw ConfigError("toy encoder needs pixel planes");
  const auto grid = downsample(*input.plane);
  const Tensor2D x(1, grid.size(), grid);
  const Tensor2D y = affine(x, weight_, bias_);
  std::vector<double> out(dim_);
  for (std::size_t j = 0; j < dim_; ++j) out[j] = std::tanh(y(0, j));
  return out;
}

std::vector<double> ToyEncoder::zero_response() const {
  std::vector<double> out(dim_);
  for (std::size_t j = 0; j < dim_; ++j) out[j] = std::tanh(bias_(0, j));
  return out;
}

EmbeddingClip embed_clip(const EmbeddingProvider& provider, std::span<const FrameInput> inputs,
                         std::size_t expected_dim, Modality modality) {
  if (provider.dim() != expected_dim) {
    throw ConfigError("embedding provider width " + std::to_string(provider.dim()) +
                      " differs from decoder width " + std::to_string(expected_dim));
  }
  if (inputs.empty()) throw ShapeError("embed_clip: empty clip");
  Tensor2D out(inputs.size(), expected_dim);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto e = provider.embed(inputs[i]);
    if (e.size() != expected_dim) {
      throw ConfigError("embedding provider returned " + std::to_string(e.size()) + " values");
    }
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return EmbeddingClip{std::move(out), std::nullopt, modality};
}

EmbeddingClip embed_rgb_clip(const EmbeddingProvider& provider, const FrameSequence& frames,
                             const ClipSpec& spec, std::size_t expected_dim) {
  frames.validate();
  const auto indices = sample_clip(frames, spec);
  std::vector<FramePlane> planes;
  planes.reserve(indices.size());
  for (std::size_t idx : indices) planes.push_back(normalize_frame(frames, idx));
  std::vector<FrameInput> inputs;
  for (std::size_t i = 0; i < indices.size(); ++i) inputs.push_back({indices[i], &planes[i]});
  return embed_clip(provider, inputs, expected_dim, Modality::kRgb);
}

EmbeddingClip embed_diff_clip(const EmbeddingProvider& provider, const FrameSequence& frames,
                              const ClipSpec& spec, std::size_t expected_dim) {
  const auto planes = rgb_diff(frames, spec);
  const auto indices = sample_clip(frames, spec);
  std::vector<FrameInput> inputs;
  for (std::size_t i = 0; i < indices.size(); ++i) inputs.push_back({indices[i], &planes[i]});
  return embed_clip(provider, inputs, expected_dim, Modality::kRgbDiff);
}

EmbeddingClip embed_table_clip(const FileEmbeddingProvider& provider, const VideoRecord& video,
                               const ClipSpec& spec, std::size_t expected_dim) {
  const auto indices = sample_clip(video.row_count, spec);
  std::vector<FrameInput> inputs;
  inputs.reserve(indices.size());
  for (std::size_t idx : indices) inputs.push_back({video.first_row + idx, nullptr});
  auto clip = embed_clip(provider, inputs, expected_dim, Modality::kRgb);
  if (video.label >= 0) clip.label = static_cast<std::size_t>(video.label);
  return clip;
}

EmbeddingClip stack_modalities(const EmbeddingClip& rgb, const EmbeddingClip& diff) {
  if (rgb.embeddings.rows() != diff.embeddings.rows() ||
      rgb.embeddings.cols() != diff.embeddings.cols()) {
    throw ShapeError("stack_modalities: rgb " + rgb.embeddings.shape() + " vs diff " +
                     diff.embeddings.shape());
  }
  return EmbeddingClip{concat_cols({rgb.embeddings, diff.embeddings}),
                       rgb.label ? rgb.label : diff.label, Modality::kStacked};
}

}  // namespace vtn
