#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vtn/cost.hpp"
#include "vtn/decoder.hpp"

namespace vtn {

inline constexpr const char* kReferenceContext =
    "encoder-inclusive reference 3.77 GMAC / 56 FPS; benchmark excludes encoder";

struct TimingStats {
  std::size_t repeats = 0;
  double median_ms = 0;
  double p95_ms = 0;
  double mean_ms = 0;
};

/// Nearest-rank percentiles over the samples (milliseconds).
TimingStats summarize_timings(std::vector<double> samples_ms);

struct CostReport {
  DecoderConfig config;
  CostBreakdown params;
  CostBreakdown macs;
  std::optional<TimingStats> timing;
  std::size_t threads = 1;
  double frames_per_second = 0;  // t / median clip time
  double clips_per_second = 0;   // 1 / median clip time
  std::string hardware;
};

struct BenchOptions {
  std::size_t repeats = 100;
  std::size_t warmup = 10;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

/// Times decoder_forward + classifier on random t x input_dim float clips.
CostReport run_benchmark(const DecoderWeights<float>& weights, const BenchOptions& options);

/// Closed-form columns only.
CostReport analytic_report(const DecoderConfig& config);

/// CPU model name from /proc/cpuinfo plus the logical core count.
std::string hardware_description();

void print_cost_report(std::ostream& out, const CostReport& report);

/// Decoder figures combined with externally supplied encoder figures.
struct Reconciliation {
  double decoder_params = 0;
  double encoder_params = 0;
  double total_params = 0;
  double decoder_macs_per_clip = 0;
  double encoder_macs = 0;
  double total_macs_per_clip = 0;    // encoder + whole-clip decoder MACs
  double total_macs_per_frame = 0;   // encoder + decoder MACs amortized over t
};

Reconciliation reconcile(const DecoderConfig& config, double encoder_params, double encoder_macs);

void print_reconciliation(std::ostream& out, const Reconciliation& r);

}  // namespace vtn
