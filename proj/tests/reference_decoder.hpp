#pragma once

// Straight-line reference evaluation of the decoder on nested std::vector
// rows. Shares no code with the library forward path and serves as an
// oracle in tests.

#include <cmath>
#include <vector>

#include "vtn/decoder.hpp"

namespace vtn::reference {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Tensor2D& m) {
  Rows out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

// out[i][j] = sum_k x[i][k] * w(k, j) + b(0, j)
inline Rows affine(const Rows& x, const Tensor2D& w, const Tensor2D& b) {
  Rows out(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w(k, j);
      out[i][j] = s;
    }
  }
  return out;
}

struct HeadEval {
  Rows attention;
  Rows out;
};

inline HeadEval attention(const Rows& x, const HeadWeights<double>& h) {
  const Rows q = affine(x, h.w_q, h.b_q);
  const Rows k = affine(x, h.w_k, h.b_k);
  const Rows v = affine(x, h.w_v, h.b_v);
  const std::size_t t = x.size();
  const double dk = static_cast<double>(h.w_q.cols());
  HeadEval r;
  r.attention.assign(t, std::vector<double>(t));
  r.out.assign(t, std::vector<double>(h.w_v.cols(), 0.0));
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<double> s(t);
    double peak = -1e300;
    for (std::size_t j = 0; j < t; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
      s[j] = dot / std::sqrt(dk);
      peak = std::max(peak, s[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < t; ++j) z += std::exp(s[j] - peak);
    for (std::size_t j = 0; j < t; ++j) r.attention[i][j] = std::exp(s[j] - peak) / z;
    for (std::size_t c = 0; c < v[0].size(); ++c) {
      double acc = 0;
      for (std::size_t j = 0; j < t; ++j) acc += r.attention[i][j] * v[j][c];
      r.out[i][c] = acc;
    }
  }
  return r;
}

inline Rows block(const Rows& x, const BlockWeights<double>& w, const DecoderConfig& cfg) {
  const std::size_t t = x.size();
  Rows concat(t);
  for (const auto& head : w.heads) {
    const Rows o = attention(x, head).out;
    for (std::size_t i = 0; i < t; ++i) concat[i].insert(concat[i].end(), o[i].begin(), o[i].end());
  }
  Rows attended = cfg.post_concat_projection ? affine(concat, w.w_o, w.b_o) : concat;
  Rows mixed = attended;
  if (cfg.attention_residual) {
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < mixed[i].size(); ++j) mixed[i][j] += x[i][j];
  }
  Rows hidden = affine(mixed, w.w_ff1, w.b_ff1);
  for (auto& r : hidden)
    for (auto& v : r) v = std::max(v, 0.0);
  Rows out = affine(hidden, w.w_ff2, w.b_ff2);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += mixed[i][j];
  return out;
}

inline Rows forward(const Rows& x, const DecoderWeights<double>& w) {
  Rows h = w.config.input_projection ? affine(x, w.w_in, w.b_in) : x;
  for (const auto& b : w.blocks) h = block(h, b, w.config);
  return h;
}

inline std::vector<double> clip_probs(const Rows& x, const DecoderWeights<double>& w) {
  const Rows logits = affine(forward(x, w), w.w_cls, w.b_cls);
  std::vector<double> mean(logits[0].size(), 0.0);
  for (const auto& r : logits)
    for (std::size_t c = 0; c < r.size(); ++c) mean[c] += r[c] / static_cast<double>(logits.size());
  double peak = -1e300;
  for (double v : mean) peak = std::max(peak, v);
  double z = 0;
  for (double v : mean) z += std::exp(v - peak);
  for (double& v : mean) v = std::exp(v - peak) / z;
  return mean;
}

}  // namespace vtn::reference
