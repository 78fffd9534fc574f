#include "vtn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

namespace vtn {

namespace {

double log_sum_exp(std::span<const double> x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double total = 0;
  for (double v : x) total += std::exp(v - peak);
  return peak + std::log(total);
}

std::vector<double> log_softmax(std::span<const double> x) {
  const double lse = log_sum_exp(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

void require_normalized(std::span<const double> p, const char* what) {
  double total = 0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string(what) + ": probabilities must be finite and nonnegative");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DomainError(std::string(what) + ": probabilities sum to " + std::to_string(total));
  }
}

}  // namespace

LossResult cross_entropy(std::span<const double> logits, std::size_t label) {
  if (logits.empty()) throw ShapeError("cross_entropy: empty logits");
  if (label >= logits.size()) {
    throw DomainError("cross_entropy: label " + std::to_string(label) + " outside " +
                      std::to_string(logits.size()) + " classes");
  }
  require_finite(logits, "cross_entropy");
  const auto logp = log_softmax(logits);
  LossResult r;
  r.loss = -logp[label];
  r.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logp[i]);
  r.grad[label] -= 1.0;
  return r;
}

void KDConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("kd: temperature must be > 0");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("kd: alpha must lie in [0, 1]");
}

LossResult kd_loss(std::span<const double> student_logits, std::span<const double> teacher_probs,
                   std::size_t label, const KDConfig& config) {
  config.validate();
  if (teacher_probs.size() != student_logits.size()) {
    throw ShapeError("kd_loss: " + std::to_string(teacher_probs.size()) +
                     " teacher classes vs " + std::to_string(student_logits.size()) +
                     " student classes");
  }
  require_normalized(teacher_probs, "kd_loss teacher");
  LossResult hard = cross_entropy(student_logits, label);
  if (config.alpha == 0.0) return hard;

  const double tau = config.temperature;
  const std::size_t n = student_logits.size();
  LossResult r;
  std::vector<double> teacher_scaled(n), student_scaled(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p = teacher_probs[i];
    if (p < kTeacherProbabilityFloor) {
      p = kTeacherProbabilityFloor;
      r.clamped = true;
    }
    teacher_scaled[i] = std::log(p) / tau;
    student_scaled[i] = student_logits[i] / tau;
  }
  const auto log_qt = log_softmax(teacher_scaled);
  const auto log_qs = log_softmax(student_scaled);
  double kl = 0;
  for (std::size_t i = 0; i < n; ++i) kl += std::exp(log_qt[i]) * (log_qt[i] - log_qs[i]);

  const double a = config.alpha;
  r.loss = (1.0 - a) * hard.loss + a * tau * tau * kl;
  r.grad.resize(n);
  // d(tau^2 KL)/dz = tau (q_s - q_t)
  for (std::size_t i = 0; i < n; ++i) {
    r.grad[i] = (1.0 - a) * hard.grad[i] + a * tau * (std::exp(log_qs[i]) - std::exp(log_qt[i]));
  }
  return r;
}

std::vector<double> fuse_predictions(std::span<const double> p1, std::span<const double> p2,
                                     FusionMode mode) {
  if (p1.size() != p2.size() || p1.empty()) {
    throw ShapeError("fuse_predictions: " + std::to_string(p1.size()) + " vs " +
                     std::to_string(p2.size()) + " classes");
  }
  require_normalized(p1, "fuse_predictions");
  require_normalized(p2, "fuse_predictions");
  std::vector<double> out(p1.size());
  if (mode == FusionMode::kProbabilityMean) {
    double total = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = 0.5 * (p1[i] + p2[i]);
      total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * (std::log(std::max(p1[i], kTeacherProbabilityFloor)) +
                    std::log(std::max(p2[i], kTeacherProbabilityFloor)));
  }
  return softmax<double>(out);
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, const AdamHyperparameters& hp, std::uint64_t step) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw DomainError("adam_update: step is 1-based");
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    params[i] -= hp.lr * (m_hat / (std::sqrt(v_hat) + hp.epsilon) + hp.weight_decay * params[i]);
  }
}

OptimizerState OptimizerState::for_weights(const DecoderWeights<double>& weights,
                                           const AdamHyperparameters& hp) {
  if (!(hp.lr > 0.0)) throw ConfigError("adam: lr must be > 0");
  return OptimizerState{hp, 0, zero_weights<double>(weights.config),
                        zero_weights<double>(weights.config)};
}

void adam_step(DecoderWeights<double>& weights, const DecoderGradients& grads,
               OptimizerState& state) {
  auto w = weights.named_tensors();
  const auto g = grads.named_tensors();
  auto m = state.first_moment.named_tensors();
  auto v = state.second_moment.named_tensors();
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw ShapeError("adam_step: gradient/moment layout differs from weights");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (g[i].second->size() != w[i].second->size()) {
      throw ShapeError("adam_step: gradient shape differs for " + w[i].first);
    }
    for (double x : g[i].second->data()) {
      if (!std::isfinite(x)) throw NumericError("adam_step: non-finite gradient in " + g[i].first);
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < w.size(); ++i) {
    adam_update(w[i].second->data(), g[i].second->data(), m[i].second->data(),
                v[i].second->data(), state.hp, state.step);
  }
}

bool plateau_step(PlateauSchedule& s, double val_loss) {
  if (!std::isfinite(val_loss)) throw NumericError("plateau_step: non-finite validation loss");
  if (val_loss < s.best_loss - s.threshold) {
    s.best_loss = val_loss;
    s.bad_epochs = 0;
    return false;
  }
  if (++s.bad_epochs < s.patience) return false;
  s.bad_epochs = 0;
  const double reduced = std::max(s.lr * s.factor, s.min_lr);
  const bool changed = reduced < s.lr;
  s.lr = reduced;
  return changed;
}

void LabeledDataset::validate(const DecoderConfig& config) const {
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    if (!c.label) throw ConfigError("dataset clip " + std::to_string(i) + " has no label");
    if (*c.label >= config.num_classes) {
      throw ConfigError("dataset clip " + std::to_string(i) + " label " +
                        std::to_string(*c.label) + " outside " +
                        std::to_string(config.num_classes) + " classes");
    }
    if (c.embeddings.cols() != config.input_dim) {
      throw ConfigError("dataset clip " + std::to_string(i) + " has width " +
                        std::to_string(c.embeddings.cols()) + ", decoder expects " +
                        std::to_string(config.input_dim));
    }
  }
}

LabeledDataset dataset_from_table(const EmbeddingTable& table, std::size_t stride,
                                  std::size_t clip_len) {
  const FileEmbeddingProvider provider(table);
  LabeledDataset out;
  for (const auto& video : table.videos) {
    if (video.label < 0) continue;
    for (const auto& spec : enumerate_segments(video.row_count, stride * clip_len, stride)) {
      out.clips.push_back(embed_table_clip(provider, video, spec, table.d));
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch == 0) throw ConfigError("train: batch must be >= 1");
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("train: schedule.factor must lie in (0, 1)");
  if (!(min_lr > 0.0) || min_lr > lr) throw ConfigError("train: schedule.min_lr must lie in (0, lr]");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (clip_stride == 0) throw ConfigError("train: clip.stride must be >= 1");
  kd.validate();
  model.validate();
}

TrainConfig parse_run_config(std::istream& in) {
  TrainConfig c;
  using Setter = std::function<void(const std::string&)>;
  auto u64 = [](auto& field) {
    return Setter([&field](const std::string& v) {
      std::size_t used = 0;
      const unsigned long long x = std::stoull(v, &used);
      if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
      field = static_cast<std::remove_reference_t<decltype(field)>>(x);
    });
  };
  auto real = [](double& field) {
    return Setter([&field](const std::string& v) {
      std::size_t used = 0;
      field = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    });
  };
  auto flag = [](bool& field) {
    return Setter([&field](const std::string& v) {
      if (v == "1" || v == "true") field = true;
      else if (v == "0" || v == "false") field = false;
      else throw std::invalid_argument(v);
    });
  };
  const std::map<std::string, Setter> setters{
      {"seed", u64(c.seed)},
      {"lr", real(c.lr)},
      {"weight_decay", real(c.weight_decay)},
      {"batch", u64(c.batch)},
      {"epochs", u64(c.epochs)},
      {"kd.tau", real(c.kd.temperature)},
      {"kd.alpha", real(c.kd.alpha)},
      {"kd.fusion",
       [&c](const std::string& v) {
         if (v == "prob") c.fusion = FusionMode::kProbabilityMean;
         else if (v == "logit") c.fusion = FusionMode::kLogitMean;
         else throw std::invalid_argument(v);
       }},
      {"schedule.patience", u64(c.patience)},
      {"schedule.factor", real(c.factor)},
      {"schedule.min_lr", real(c.min_lr)},
      {"clip.stride", u64(c.clip_stride)},
      {"model.d", u64(c.model.d)},
      {"model.heads", u64(c.model.heads)},
      {"model.d_k", u64(c.model.d_k)},
      {"model.d_v", u64(c.model.d_v)},
      {"model.d_ff", u64(c.model.d_ff)},
      {"model.blocks", u64(c.model.blocks)},
      {"model.t", u64(c.model.t)},
      {"model.classes", u64(c.model.num_classes)},
      {"model.input_dim", u64(c.model.input_dim)},
      {"model.attention_residual", flag(c.model.attention_residual)},
      {"model.input_projection", flag(c.model.input_projection)},
      {"model.post_concat_projection", flag(c.model.post_concat_projection)},
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("run config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("run config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      if (value.empty()) throw std::invalid_argument(value);
      it->second(value);
    } catch (const std::logic_error&) {
      throw ConfigError("run config line " + std::to_string(line_no) + ": bad value '" + value +
                        "' for " + key);
    }
  }
  c.validate();
  return c;
}

TrainConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  return parse_run_config(in);
}

std::vector<Teacher> assign_teacher_columns(std::span<const DecoderWeights<double>> teachers,
                                            std::size_t clip_width) {
  if (teachers.empty() || teachers.size() > 2) {
    throw ConfigError("distillation needs one or two teachers, got " +
                      std::to_string(teachers.size()));
  }
  std::vector<Teacher> out;
  std::size_t offset = 0;
  bool sliced = false;
  for (const auto& t : teachers) {
    const std::size_t width = t.config.input_dim;
    if (width == clip_width) {
      out.push_back({&t, 0});
      continue;
    }
    out.push_back({&t, offset});
    offset += width;
    sliced = true;
  }
  if (sliced && offset != clip_width) {
    throw ConfigError("teacher input widths cover " + std::to_string(offset) +
                      " columns of a clip with " + std::to_string(clip_width));
  }
  return out;
}

std::vector<std::vector<double>> teacher_targets(std::span<const Teacher> teachers,
                                                 const LabeledDataset& dataset,
                                                 FusionMode mode) {
  if (teachers.empty() || teachers.size() > 2) {
    throw ConfigError("distillation needs one or two teachers");
  }
  std::vector<std::vector<double>> out;
  out.reserve(dataset.clips.size());
  for (const auto& clip : dataset.clips) {
    std::vector<std::vector<double>> probs;
    for (const auto& t : teachers) {
      const auto& cfg = t.weights->config;
      const Tensor2D x = (t.column_offset == 0 && cfg.input_dim == clip.embeddings.cols())
                             ? clip.embeddings
                             : slice_cols(clip.embeddings, t.column_offset, cfg.input_dim);
      probs.push_back(classify_clip(x, *t.weights).clip_probs);
    }
    out.push_back(probs.size() == 1 ? probs[0] : fuse_predictions(probs[0], probs[1], mode));
  }
  return out;
}

Evaluation evaluate(const DecoderWeights<double>& weights, const LabeledDataset& dataset) {
  dataset.validate(weights.config);
  Evaluation e;
  if (dataset.clips.empty()) return e;
  std::size_t correct = 0;
  for (const auto& clip : dataset.clips) {
    const auto p = classify_clip(clip.embeddings, weights);
    e.loss += cross_entropy(p.clip_logits, *clip.label).loss;
    if (argmax<double>(p.clip_probs) == *clip.label) ++correct;
  }
  e.loss /= static_cast<double>(dataset.clips.size());
  e.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.clips.size());
  return e;
}

TrainResult train(const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const TrainConfig& config,
                  const std::vector<std::vector<double>>* soft_targets) {
  config.validate();
  return train_from(init_weights<double>(config.model, config.seed), train_set, val_set, config,
                    soft_targets);
}

TrainResult train_from(DecoderWeights<double> initial, const LabeledDataset& train_set,
                       const LabeledDataset& val_set, const TrainConfig& config,
                       const std::vector<std::vector<double>>* soft_targets) {
  config.validate();
  if (!(initial.config == config.model)) {
    throw ConfigError("train: initial weights were built for a different model config");
  }
  if (train_set.clips.empty()) throw ConfigError("train: empty training set");
  train_set.validate(config.model);
  val_set.validate(config.model);
  if (soft_targets != nullptr) {
    if (soft_targets->size() != train_set.clips.size()) {
      throw ConfigError("train: " + std::to_string(soft_targets->size()) +
                        " soft targets for " + std::to_string(train_set.clips.size()) + " clips");
    }
    for (const auto& s : *soft_targets) {
      if (s.size() != config.model.num_classes) {
        throw ConfigError("train: soft target width differs from the class count");
      }
    }
  }
  const LabeledDataset& validation = val_set.clips.empty() ? train_set : val_set;

  TrainResult result{std::move(initial), {}, 0};
  AdamHyperparameters hp;
  hp.lr = config.lr;
  hp.weight_decay = config.weight_decay;
  OptimizerState opt = OptimizerState::for_weights(result.weights, hp);
  PlateauSchedule schedule;
  schedule.lr = config.lr;
  schedule.patience = config.patience;
  schedule.factor = config.factor;
  schedule.min_lr = config.min_lr;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.clips.size());
  std::iota(order.begin(), order.end(), 0);
  DecoderTape tape;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    opt.hp.lr = schedule.lr;
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      DecoderGradients batch_grad = zero_weights<double>(config.model);
      auto accum = batch_grad.named_tensors();
      for (std::size_t k = start; k < end; ++k) {
        const auto& clip = train_set.clips[order[k]];
        const auto pred = classify_clip(clip.embeddings, result.weights, tape);
        if (argmax<double>(pred.clip_probs) == *clip.label) ++correct;
        LossResult loss = soft_targets == nullptr
                              ? cross_entropy(pred.clip_logits, *clip.label)
                              : kd_loss(pred.clip_logits, (*soft_targets)[order[k]], *clip.label,
                                        config.kd);
        if (loss.clamped) ++result.clamped_teacher_probabilities;
        loss_sum += loss.loss;
        const auto back = decoder_backward(tape, result.weights, loss.grad);
        const auto parts = back.weights.named_tensors();
        for (std::size_t i = 0; i < accum.size(); ++i) accumulate(*accum[i].second, *parts[i].second);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& [name, tensor] : accum)
        for (auto& v : tensor->data()) v *= inv;
      adam_step(result.weights, batch_grad, opt);
    }

    const Evaluation val = evaluate(result.weights, validation);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.lr = schedule.lr;
    result.history.push_back(rec);

    plateau_step(schedule, val.loss);
    if (schedule.lr <= schedule.min_lr && rec.lr <= schedule.min_lr) break;
  }
  return result;
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,val_loss,val_acc,lr\n";
  for (const auto& r : history) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.6f,%.9g\n", r.epoch, r.train_loss, r.val_loss,
                  r.val_accuracy, r.lr);
    out << buf;
  }
}

}  // namespace vtn
