#pragma once

// Synthetic embedding datasets for training tests.

#include <cmath>
#include <random>
#include <vector>

#include "vtn/training.hpp"

namespace vtn::synthetic {

inline DecoderConfig small_model(std::size_t d, std::size_t t, std::size_t classes) {
  DecoderConfig c;
  c.d = static_cast<std::uint32_t>(d);
  c.heads = 2;
  c.d_k = static_cast<std::uint32_t>(d / 2);
  c.d_v = static_cast<std::uint32_t>(d / 2);
  c.d_ff = static_cast<std::uint32_t>(2 * d);
  c.blocks = 2;
  c.t = static_cast<std::uint32_t>(t);
  c.num_classes = static_cast<std::uint32_t>(classes);
  c.input_dim = static_cast<std::uint32_t>(d);
  return c;
}

inline std::vector<double> unit_direction(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> u(d);
  double norm = 0;
  for (auto& v : u) {
    v = n(rng);
    norm += v * v;
  }
  for (auto& v : u) v /= std::sqrt(norm);
  return u;
}

/// Two classes whose frames sit at +/- margin along a fixed direction plus
/// gaussian noise; every clip's frame mean already separates the classes.
inline LabeledDataset separable(std::size_t clips, std::size_t d, std::size_t t,
                                std::uint64_t seed, double margin = 1.0, double noise = 0.3) {
  const auto u = unit_direction(d, 12345);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  LabeledDataset out;
  for (std::size_t i = 0; i < clips; ++i) {
    const std::size_t label = i % 2;
    const double sign = label == 0 ? 1.0 : -1.0;
    Tensor2D x(t, d);
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < d; ++c) x(r, c) = sign * margin * std::sqrt(double(d)) * u[c] + n(rng);
    out.clips.push_back({std::move(x), label, Modality::kRgb});
  }
  return out;
}

struct TwoModalitySplit {
  LabeledDataset a;        // modality A only
  LabeledDataset b;        // modality B only
  LabeledDataset stacked;  // [A | B] per frame
};

/// Four classes. Modality A encodes y / 2, modality B encodes y % 2, so each
/// single modality is at best 50% accurate and only both together identify y.
/// A fraction `label_noise` of the stored labels is replaced by a random
/// class; the frames always follow the true class.
inline TwoModalitySplit two_modality(std::size_t clips, std::size_t d, std::size_t t,
                                     std::uint64_t seed, double noise, double label_noise) {
  const auto ua = unit_direction(d, 777);
  const auto ub = unit_direction(d, 778);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_class(0, 3);
  TwoModalitySplit out;
  for (std::size_t i = 0; i < clips; ++i) {
    const std::size_t y = i % 4;
    const double sa = (y / 2) == 0 ? 1.0 : -1.0;
    const double sb = (y % 2) == 0 ? 1.0 : -1.0;
    Tensor2D a(t, d), b(t, d);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        a(r, c) = sa * std::sqrt(double(d)) * ua[c] + n(rng);
        b(r, c) = sb * std::sqrt(double(d)) * ub[c] + n(rng);
      }
    }
    std::size_t stored = y;
    if (coin(rng) < label_noise) stored = any_class(rng);
    EmbeddingClip ca{std::move(a), stored, Modality::kRgb};
    EmbeddingClip cb{std::move(b), stored, Modality::kRgbDiff};
    out.stacked.clips.push_back(stack_modalities(ca, cb));
    out.a.clips.push_back(std::move(ca));
    out.b.clips.push_back(std::move(cb));
  }
  return out;
}

inline bool bit_identical(const DecoderWeights<double>& x, const DecoderWeights<double>& y) {
  const auto a = x.named_tensors();
  const auto b = y.named_tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(*a[i].second == *b[i].second)) return false;
  return true;
}

}  // namespace vtn::synthetic
