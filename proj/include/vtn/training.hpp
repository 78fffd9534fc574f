#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "vtn/decoder.hpp"
#include "vtn/frontend.hpp"

namespace vtn {

struct LossResult {
  double loss = 0;
  std::vector<double> grad;  // d loss / d logits
  bool clamped = false;      // a teacher probability was clamped (kd_loss only)
};

/// -log softmax(logits)[label] and softmax(logits) - onehot(label).
LossResult cross_entropy(std::span<const double> logits, std::size_t label);

struct KDConfig {
  double temperature = 4.0;
  double alpha = 0.5;  // weight of the soft (distillation) term

  void validate() const;
};

inline constexpr double kTeacherProbabilityFloor = 1e-12;

/// (1 - alpha) * CE(student, label)
///   + alpha * tau^2 * KL(softmax(log p_teacher / tau) || softmax(student / tau)).
/// Teacher probabilities below 1e-12 are clamped and reported via `clamped`.
LossResult kd_loss(std::span<const double> student_logits, std::span<const double> teacher_probs,
                   std::size_t label, const KDConfig& config);

enum class FusionMode { kProbabilityMean, kLogitMean };

/// Mean of two probability vectors, renormalized. kLogitMean averages the
/// log-probabilities instead and renormalizes with softmax.
std::vector<double> fuse_predictions(std::span<const double> p1, std::span<const double> p2,
                                     FusionMode mode = FusionMode::kProbabilityMean);

struct AdamHyperparameters {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;  // decoupled: w -= lr * weight_decay * w
};

/// One bias-corrected Adam update over a flat parameter block. `step` is the
/// 1-based index of this update.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, const AdamHyperparameters& hp, std::uint64_t step);

struct OptimizerState {
  AdamHyperparameters hp;
  std::uint64_t step = 0;
  DecoderWeights<double> first_moment;
  DecoderWeights<double> second_moment;

  static OptimizerState for_weights(const DecoderWeights<double>& weights,
                                    const AdamHyperparameters& hp);
};

/// Throws NumericError (before touching any weight) on a non-finite gradient.
void adam_step(DecoderWeights<double>& weights, const DecoderGradients& grads,
               OptimizerState& state);

/// Reduce-on-plateau schedule over validation loss.
struct PlateauSchedule {
  double lr = 1e-4;
  std::size_t patience = 5;
  double factor = 0.1;
  double min_lr = 1e-7;
  double threshold = 1e-4;  // absolute improvement that resets the counter
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
};

/// Returns true when the learning rate was reduced.
bool plateau_step(PlateauSchedule& schedule, double val_loss);

struct LabeledDataset {
  std::vector<EmbeddingClip> clips;

  /// Throws ConfigError unless every clip is labeled, fits the decoder
  /// input width and has a label below num_classes.
  void validate(const DecoderConfig& config) const;
};

/// Every full segment of every labeled video in the table becomes one clip.
LabeledDataset dataset_from_table(const EmbeddingTable& table, std::size_t stride,
                                  std::size_t clip_len);

struct TrainConfig {
  std::uint64_t seed = 0;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch = 8;
  std::size_t epochs = 50;  // cap
  KDConfig kd;
  FusionMode fusion = FusionMode::kProbabilityMean;
  std::size_t patience = 5;
  double factor = 0.1;
  double min_lr = 1e-7;
  DecoderConfig model;
  std::size_t clip_stride = 2;

  void validate() const;
};

/// key=value lines; '#' starts a comment. Unknown keys are a ConfigError.
TrainConfig parse_run_config(std::istream& in);
TrainConfig load_run_config(const std::filesystem::path& path);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double lr = 0;  // rate used during this epoch
};

struct TrainResult {
  DecoderWeights<double> weights;
  std::vector<EpochRecord> history;
  std::size_t clamped_teacher_probabilities = 0;
};

/// One teacher model and the first input column it reads from each clip.
struct Teacher {
  const DecoderWeights<double>* weights = nullptr;
  std::size_t column_offset = 0;
};

/// Teachers whose input width equals the clip width read the whole clip;
/// the others read consecutive column slices in the given order.
std::vector<Teacher> assign_teacher_columns(std::span<const DecoderWeights<double>> teachers,
                                            std::size_t clip_width);

/// Per-clip teacher probabilities, fused when there are two teachers.
std::vector<std::vector<double>> teacher_targets(std::span<const Teacher> teachers,
                                                 const LabeledDataset& dataset,
                                                 FusionMode mode);

struct Evaluation {
  double loss = 0;      // mean cross-entropy
  double accuracy = 0;  // clip top-1
};

Evaluation evaluate(const DecoderWeights<double>& weights, const LabeledDataset& dataset);

/// Epoch loop: forward, loss, backward, Adam, plateau schedule on the
/// validation loss. With soft targets every training clip uses kd_loss.
/// Stops at the epoch cap or once the rate has decayed to min_lr.
TrainResult train(const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const TrainConfig& config,
                  const std::vector<std::vector<double>>* soft_targets = nullptr);

/// Same as train() but starting from the given weights.
TrainResult train_from(DecoderWeights<double> initial, const LabeledDataset& train_set,
                       const LabeledDataset& val_set, const TrainConfig& config,
                       const std::vector<std::vector<double>>* soft_targets = nullptr);

/// Columns: epoch,train_loss,val_loss,val_acc,lr
void write_history_csv(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace vtn
