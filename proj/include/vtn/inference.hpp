#pragma once

#include <cstddef>
#include <vector>

#include "vtn/decoder.hpp"
#include "vtn/frontend.hpp"

namespace vtn {

/// How segment predictions are combined into a video prediction.
enum class Aggregation { kProbabilityMean, kLogitMean };

struct SegmentPrediction {
  std::size_t index = 0;
  std::vector<double> probs;
  std::size_t top1 = 0;
};

struct VideoPrediction {
  std::vector<SegmentPrediction> segments;
  std::vector<double> probs;
  std::size_t top1 = 0;
};

/// Classifies every non-overlapping segment of `video` (window = stride * t)
/// and aggregates. Throws BoundsError when the video holds no full segment.
VideoPrediction predict_video(const DecoderWeights<double>& weights,
                              const FileEmbeddingProvider& provider, const VideoRecord& video,
                              std::size_t stride, Aggregation aggregation);

struct VideoAccuracy {
  std::size_t videos = 0;
  std::size_t correct = 0;
  double accuracy() const { return videos == 0 ? 0.0 : double(correct) / double(videos); }
};

/// Video@1 over the labeled videos of the table.
VideoAccuracy video_accuracy(const DecoderWeights<double>& weights,
                             const FileEmbeddingProvider& provider, std::size_t stride,
                             Aggregation aggregation);

}  // namespace vtn
