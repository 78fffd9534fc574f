#include "vtn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "vtn/tensor.hpp"

namespace vtn {

TimingStats summarize_timings(std::vector<double> samples) {
  if (samples.empty()) throw DomainError("summarize_timings: no samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    return samples[std::clamp<std::size_t>(k, 1, n) - 1];
  };
  TimingStats s;
  s.repeats = n;
  s.median_ms = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  s.p95_ms = rank(0.95);
  s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  return s;
}

std::string hardware_description() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        model = line.substr(line.find_first_not_of(" \t", colon + 1));
        break;
      }
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " logical cores";
}

CostReport analytic_report(const DecoderConfig& config) {
  config.validate();
  CostReport r;
  r.config = config;
  r.params = count_params(config);
  r.macs = count_macs(config);
  return r;
}

CostReport run_benchmark(const DecoderWeights<float>& weights, const BenchOptions& options) {
  if (options.repeats == 0) throw ConfigError("bench: repeats must be >= 1");
  if (options.threads == 0) throw ConfigError("bench: threads must be >= 1");
  CostReport r = analytic_report(weights.config);
  r.threads = options.threads;
  r.hardware = hardware_description();

  const unsigned previous_threads = num_threads();
  set_num_threads(static_cast<unsigned>(options.threads));
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor2DF x(weights.config.t, weights.config.input_dim);
  for (auto& v : x.data()) v = dist(rng);

  float sink = 0;
  for (std::size_t i = 0; i < options.warmup; ++i) sink += classify_clip(x, weights).clip_probs[0];
  std::vector<double> samples;
  samples.reserve(options.repeats);
  for (std::size_t i = 0; i < options.repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    sink += classify_clip(x, weights).clip_probs[0];
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  set_num_threads(previous_threads);
  if (!std::isfinite(sink)) throw NumericError("bench: non-finite decoder output");

  r.timing = summarize_timings(std::move(samples));
  const double seconds = std::max(r.timing->median_ms, 1e-9) / 1000.0;
  r.clips_per_second = 1.0 / seconds;
  r.frames_per_second = static_cast<double>(weights.config.t) / seconds;
  return r;
}

void print_cost_report(std::ostream& out, const CostReport& r) {
  char buf[256];
  out << "component,params,macs\n";
  // Parameter and MAC breakdowns share component prefixes; list each once.
  std::vector<std::string> names;
  for (const auto& i : r.params.items) names.push_back(i.component);
  for (const auto& i : r.macs.items)
    if (std::find(names.begin(), names.end(), i.component) == names.end()) names.push_back(i.component);
  auto lookup = [](const CostBreakdown& b, const std::string& name) {
    for (const auto& i : b.items)
      if (i.component == name) return i.value;
    return std::uint64_t{0};
  };
  for (const auto& n : names) {
    out << n << ',' << lookup(r.params, n) << ',' << lookup(r.macs, n) << '\n';
  }
  out << "total," << r.params.total() << ',' << r.macs.total() << '\n';
  std::snprintf(buf, sizeof(buf), "decoder params: %llu (%.2fM)\ndecoder MACs per clip (t=%u): %llu (%.3f GMAC)\n",
                static_cast<unsigned long long>(r.params.total()), r.params.total() / 1e6, r.config.t,
                static_cast<unsigned long long>(r.macs.total()), r.macs.total() / 1e9);
  out << buf;
  if (r.timing) {
    std::snprintf(buf, sizeof(buf),
                  "timing: repeats=%zu threads=%zu median=%.3f ms p95=%.3f ms mean=%.3f ms\n"
                  "throughput: %.1f frames/s, %.2f clips/s\n",
                  r.timing->repeats, r.threads, r.timing->median_ms, r.timing->p95_ms,
                  r.timing->mean_ms, r.frames_per_second, r.clips_per_second);
    out << buf;
    out << "hardware: " << r.hardware << '\n';
  }
  out << kReferenceContext << '\n';
}

Reconciliation reconcile(const DecoderConfig& config, double encoder_params, double encoder_macs) {
  if (encoder_params < 0 || encoder_macs < 0) throw ConfigError("encoder figures must be >= 0");
  Reconciliation r;
  r.decoder_params = static_cast<double>(count_params(config).total());
  r.encoder_params = encoder_params;
  r.total_params = r.decoder_params + encoder_params;
  r.decoder_macs_per_clip = static_cast<double>(count_macs(config).total());
  r.encoder_macs = encoder_macs;
  r.total_macs_per_clip = encoder_macs + r.decoder_macs_per_clip;
  r.total_macs_per_frame = encoder_macs + r.decoder_macs_per_clip / config.t;
  return r;
}

void print_reconciliation(std::ostream& out, const Reconciliation& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "params: decoder %.0f + encoder %.0f = %.0f (%.2fM)\n"
                "MACs: encoder %.3f G + decoder %.3f G per clip = %.3f G\n"
                "MACs: encoder %.3f G + decoder %.4f G per frame = %.3f G\n",
                r.decoder_params, r.encoder_params, r.total_params, r.total_params / 1e6,
                r.encoder_macs / 1e9, r.decoder_macs_per_clip / 1e9, r.total_macs_per_clip / 1e9,
                r.encoder_macs / 1e9, (r.total_macs_per_frame - r.encoder_macs) / 1e9,
                r.total_macs_per_frame / 1e9);
  out << buf;
}

}  // namespace vtn
