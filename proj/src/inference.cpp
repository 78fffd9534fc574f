#include "vtn/inference.hpp"

#include <cmath>
#include <string>

namespace vtn {

VideoPrediction predict_video(const DecoderWeights<double>& weights,
                              const FileEmbeddingProvider& provider, const VideoRecord& video,
                              std::size_t stride, Aggregation aggregation) {
  const std::size_t t = weights.config.t;
  const auto specs = enumerate_segments(video.row_count, stride * t, stride);
  if (specs.empty()) {
    throw BoundsError("video at row " + std::to_string(video.first_row) + " has " +
                      std::to_string(video.row_count) + " frames, fewer than one " +
                      std::to_string(stride * t) + "-frame segment");
  }
  const std::size_t classes = weights.config.num_classes;
  VideoPrediction out;
  std::vector<double> accum(classes, 0.0);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto clip = embed_table_clip(provider, video, specs[s], weights.config.input_dim);
    auto pred = classify_clip(clip.embeddings, weights);
    const auto& source = aggregation == Aggregation::kProbabilityMean ? pred.clip_probs
                                                                      : pred.clip_logits;
    for (std::size_t k = 0; k < classes; ++k) accum[k] += source[k];
    const std::size_t top = argmax<double>(pred.clip_probs);
    out.segments.push_back({s, std::move(pred.clip_probs), top});
  }
  for (auto& v : accum) v /= static_cast<double>(specs.size());
  out.probs = aggregation == Aggregation::kProbabilityMean ? std::move(accum)
                                                           : softmax<double>(accum);
  out.top1 = argmax<double>(out.probs);
  return out;
}

VideoAccuracy video_accuracy(const DecoderWeights<double>& weights,
                             const FileEmbeddingProvider& provider, std::size_t stride,
                             Aggregation aggregation) {
  VideoAccuracy acc;
  for (const auto& video : provider.table().videos) {
    if (video.label < 0) continue;
    const auto pred = predict_video(weights, provider, video, stride, aggregation);
    ++acc.videos;
    if (pred.top1 == static_cast<std::size_t>(video.label)) ++acc.correct;
  }
  return acc;
}

}  // namespace vtn
