// vtn: command-line front end for the decoder runtime.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data integrity error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vtn/bench.hpp"
#include "vtn/inference.hpp"
#include "vtn/model_io.hpp"
#include "vtn/training.hpp"

namespace {

using namespace vtn;

constexpr int kExitUsage = 2;
constexpr int kExitIntegrity = 3;

Aggregation parse_aggregation(const std::string& s) {
  if (s == "prob") return Aggregation::kProbabilityMean;
  if (s == "logit") return Aggregation::kLogitMean;
  throw ConfigError("unknown aggregation '" + s + "' (expected prob or logit)");
}

DecoderWeights<double> load_decoder(const std::string& path) {
  return load_model(path).cast<double>();
}

struct InferArgs {
  std::string model, embeddings, segments = "all", aggregate = "prob";
  std::size_t stride = 2;
};

int run_infer(const InferArgs& a) {
  if (a.segments != "all" && a.segments != "first") {
    throw ConfigError("--segments must be all or first");
  }
  const auto w = load_decoder(a.model);
  const FileEmbeddingProvider provider(load_embeddings(a.embeddings, w.config.input_dim));
  const auto aggregation = parse_aggregation(a.aggregate);
  for (auto video : provider.table().video_records()) {
    if (a.segments == "first") {
      video.row_count = std::min<std::uint64_t>(video.row_count, a.stride * w.config.t);
    }
    const auto pred = predict_video(w, provider, video, a.stride, aggregation);
    for (const auto& s : pred.segments) {
      std::printf("%zu, %zu, %.6f\n", s.index, s.top1, s.probs[s.top1]);
    }
    std::printf("video, %zu, %.6f\n", pred.top1, pred.probs[pred.top1]);
  }
  return 0;
}

struct EvalArgs {
  std::string model, dataset, aggregate = "prob";
  std::size_t stride = 2;
};

int run_eval(const EvalArgs& a) {
  const auto w = load_decoder(a.model);
  const FileEmbeddingProvider provider(load_embeddings(a.dataset, w.config.input_dim));
  const auto acc = video_accuracy(w, provider, a.stride, parse_aggregation(a.aggregate));
  if (acc.videos == 0) throw ConfigError("dataset " + a.dataset + " has no labeled videos");
  std::printf("Video@1: %.4f (%zu/%zu videos)\n", acc.accuracy(), acc.correct, acc.videos);
  return 0;
}

struct TrainArgs {
  std::string config, train, val, out, history;
  std::vector<std::string> teachers;
  std::optional<std::uint64_t> seed;
};

LabeledDataset load_dataset(const std::string& path, const TrainConfig& cfg) {
  const auto table = load_embeddings(path, cfg.model.input_dim);
  return dataset_from_table(table, cfg.clip_stride, cfg.model.t);
}

int run_train(const TrainArgs& a, bool distill) {
  TrainConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto train_set = load_dataset(a.train, cfg);
  if (train_set.clips.empty()) throw ConfigError(a.train + " yields no labeled clips");
  const LabeledDataset val_set = a.val.empty() ? LabeledDataset{} : load_dataset(a.val, cfg);

  std::vector<std::vector<double>> targets;
  if (distill) {
    if (a.teachers.empty() || a.teachers.size() > 2) {
      throw ConfigError("distill needs one or two --teacher models");
    }
    std::vector<DecoderWeights<double>> teachers;
    for (const auto& path : a.teachers) teachers.push_back(load_decoder(path));
    for (const auto& t : teachers) {
      if (t.config.num_classes != cfg.model.num_classes || t.config.t != cfg.model.t) {
        throw ConfigError("teacher classes or clip length differ from the student config");
      }
    }
    const auto columns = assign_teacher_columns(teachers, cfg.model.input_dim);
    targets = teacher_targets(columns, train_set, cfg.fusion);
  }

  const auto result = train(train_set, val_set, cfg, distill ? &targets : nullptr);
  save_model(result.weights, a.out);
  if (!a.history.empty()) {
    std::ofstream csv(a.history);
    if (!csv) throw ConfigError("cannot write " + a.history);
    write_history_csv(csv, result.history);
  }
  const auto& last = result.history.back();
  std::printf("epochs %zu  train_loss %.6f  val_loss %.6f  val_acc %.4f  lr %.3g\n", last.epoch,
              last.train_loss, last.val_loss, last.val_accuracy, last.lr);
  if (result.clamped_teacher_probabilities > 0) {
    std::fprintf(stderr, "warning: %zu teacher probability vectors were clamped at %.0e\n",
                 result.clamped_teacher_probabilities, kTeacherProbabilityFloor);
  }
  std::printf("saved %s\n", a.out.c_str());
  return 0;
}

struct BenchArgs {
  std::string model;
  BenchOptions options;
};

int run_bench(const BenchArgs& a) {
  DecoderWeights<float> w = a.model.empty() ? init_weights<float>(DecoderConfig{}, 0)
                                            : load_model(a.model);
  if (a.model.empty()) std::printf("model: default configuration, seeded initialization\n");
  print_cost_report(std::cout, run_benchmark(w, a.options));
  return 0;
}

struct ParamsArgs {
  std::string config;
  std::optional<std::uint32_t> classes, t;
  std::optional<double> encoder_params, encoder_macs;
};

int run_params(const ParamsArgs& a) {
  DecoderConfig model = a.config.empty() ? DecoderConfig{} : load_run_config(a.config).model;
  if (a.classes) model.num_classes = *a.classes;
  if (a.t) model.t = *a.t;
  model.validate();
  print_cost_report(std::cout, analytic_report(model));
  if (a.encoder_params || a.encoder_macs) {
    print_reconciliation(std::cout,
                         reconcile(model, a.encoder_params.value_or(0), a.encoder_macs.value_or(0)));
  }
  return 0;
}

struct EmbedArgs {
  std::string frames, out, modality = "rgb";
  std::size_t dim = 512, stride = 2;
  std::uint64_t seed = 0;
  int label = -1;
};

int run_embed(const EmbedArgs& a) {
  if (a.modality != "rgb" && a.modality != "diff" && a.modality != "stacked") {
    throw ConfigError("--modality must be rgb, diff or stacked");
  }
  const auto frames = load_frames(a.frames);
  const ToyEncoder encoder(a.dim, a.seed);
  const bool rgb = a.modality != "diff";
  const bool diff = a.modality != "rgb";
  EmbeddingTable table;
  table.d = static_cast<std::uint32_t>(a.dim * (rgb && diff ? 2 : 1));
  table.rows = frames.num_frames;
  table.values.reserve(table.rows * table.d);
  auto append = [&](const FramePlane& plane, std::size_t index) {
    for (double v : encoder.embed({index, &plane})) table.values.push_back(static_cast<float>(v));
  };
  for (std::size_t i = 0; i < frames.num_frames; ++i) {
    const FramePlane current = normalize_frame(frames, i);
    if (rgb) append(current, i);
    if (diff) {
      FramePlane d = current;
      if (i >= a.stride) {
        const FramePlane previous = normalize_frame(frames, i - a.stride);
        for (std::size_t k = 0; k < d.values.size(); ++k) d.values[k] -= previous.values[k];
      } else {
        std::fill(d.values.begin(), d.values.end(), 0.0f);
      }
      append(d, i);
    }
  }
  if (a.label >= 0) table.videos = {{0, table.rows, a.label}};
  save_embeddings(table, a.out);
  std::printf("wrote %llu x %u embeddings to %s\n", static_cast<unsigned long long>(table.rows),
              table.d, a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video transformer decoder runtime"};
  app.require_subcommand(1);

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Per-segment and video-level predictions");
  infer_cmd->add_option("--model", infer.model, "Model file")->required();
  infer_cmd->add_option("--embeddings", infer.embeddings, "Embedding file")->required();
  infer_cmd->add_option("--segments", infer.segments, "all or first")->capture_default_str();
  infer_cmd->add_option("--aggregate", infer.aggregate, "prob or logit")->capture_default_str();
  infer_cmd->add_option("--stride", infer.stride, "Frame sampling stride")->capture_default_str();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Video@1 accuracy on a labeled embedding file");
  eval_cmd->add_option("--model", eval.model, "Model file")->required();
  eval_cmd->add_option("--dataset", eval.dataset, "Labeled embedding file")->required();
  eval_cmd->add_option("--aggregate", eval.aggregate, "prob or logit")->capture_default_str();
  eval_cmd->add_option("--stride", eval.stride, "Frame sampling stride")->capture_default_str();

  TrainArgs train_args;
  auto add_train_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", train_args.config, "Run configuration (key=value)")->required();
    cmd->add_option("--train", train_args.train, "Labeled embedding file")->required();
    cmd->add_option("--val", train_args.val, "Validation embedding file");
    cmd->add_option("--out", train_args.out, "Output model file")->required();
    cmd->add_option("--history", train_args.history, "Write per-epoch CSV here");
    cmd->add_option("--seed", train_args.seed, "Override the configured seed");
  };
  auto* train_cmd = app.add_subcommand("train", "Train a decoder with cross-entropy");
  add_train_options(train_cmd);
  auto* distill_cmd = app.add_subcommand("distill", "Train with soft targets from teacher models");
  add_train_options(distill_cmd);
  distill_cmd->add_option("--teacher", train_args.teachers, "Teacher model (one or two)")
      ->required();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time decoder forward passes");
  bench_cmd->add_option("--model", bench.model, "Model file (default: seeded default config)");
  bench_cmd->add_option("--repeats", bench.options.repeats)->capture_default_str();
  bench_cmd->add_option("--warmup", bench.options.warmup)->capture_default_str();
  bench_cmd->add_option("--threads", bench.options.threads)->capture_default_str();
  bench_cmd->add_option("--seed", bench.options.seed)->capture_default_str();

  ParamsArgs params;
  auto* params_cmd = app.add_subcommand("params", "Closed-form parameter and MAC table");
  params_cmd->add_option("--config", params.config, "Run configuration (model.* keys)");
  params_cmd->add_option("--classes", params.classes, "Override the class count");
  params_cmd->add_option("--t", params.t, "Override the clip length");
  params_cmd->add_option("--encoder-params", params.encoder_params, "Encoder parameter count");
  params_cmd->add_option("--encoder-macs", params.encoder_macs, "Encoder MACs per frame");

  EmbedArgs embed;
  auto* embed_cmd = app.add_subcommand("embed", "Toy-encoder embeddings of a frame file");
  embed_cmd->add_option("--frames", embed.frames, "Frame file")->required();
  embed_cmd->add_option("--out", embed.out, "Output embedding file")->required();
  embed_cmd->add_option("--dim", embed.dim)->capture_default_str();
  embed_cmd->add_option("--seed", embed.seed)->capture_default_str();
  embed_cmd->add_option("--modality", embed.modality, "rgb, diff or stacked")->capture_default_str();
  embed_cmd->add_option("--stride", embed.stride, "Difference offset")->capture_default_str();
  embed_cmd->add_option("--label", embed.label, "Store the file as one labeled video");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*infer_cmd) return run_infer(infer);
    if (*eval_cmd) return run_eval(eval);
    if (*train_cmd) return run_train(train_args, false);
    if (*distill_cmd) return run_train(train_args, true);
    if (*bench_cmd) return run_bench(bench);
    if (*params_cmd) return run_params(params);
    if (*embed_cmd) return run_embed(embed);
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == LoadErrorKind::kIo ? kExitUsage : kExitIntegrity;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const BoundsError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
