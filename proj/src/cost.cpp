#include "vtn/cost.hpp"

namespace vtn {

std::uint64_t CostBreakdown::total() const {
  std::uint64_t sum = 0;
  for (const auto& item : items) sum += item.value;
  return sum;
}

std::uint64_t CostBreakdown::subtotal(const std::string& prefix) const {
  std::uint64_t sum = 0;
  for (const auto& item : items) {
    if (item.component.starts_with(prefix)) sum += item.value;
  }
  return sum;
}

namespace {
std::uint64_t affine_params(std::uint64_t in, std::uint64_t out) { return in * out + out; }
}  // namespace

CostBreakdown count_params(const DecoderConfig& c) {
  c.validate();
  const std::uint64_t d = c.d, heads = c.heads, dk = c.d_k, dv = c.d_v, dff = c.d_ff;
  CostBreakdown out;
  if (c.input_projection) out.items.push_back({"input_projection", affine_params(c.input_dim, d)});
  for (std::uint32_t b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    out.items.push_back(
        {p + "attention_qkv", heads * (2 * affine_params(d, dk) + affine_params(d, dv))});
    if (c.post_concat_projection) {
      out.items.push_back({p + "post_concat_projection", affine_params(heads * dv, d)});
    }
    out.items.push_back({p + "feedforward", affine_params(d, dff) + affine_params(dff, d)});
  }
  out.items.push_back({"classifier", affine_params(d, c.num_classes)});
  return out;
}

CostBreakdown count_macs(const DecoderConfig& c) {
  c.validate();
  const std::uint64_t t = c.t, d = c.d, heads = c.heads, dk = c.d_k, dv = c.d_v, dff = c.d_ff;
  CostBreakdown out;
  if (c.input_projection) out.items.push_back({"input_projection", t * c.input_dim * d});
  for (std::uint32_t b = 0; b < c.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    out.items.push_back({p + "attention_qkv", t * d * (2 * dk + dv) * heads});
    // Q K^T and A V per head.
    out.items.push_back({p + "attention_scores", t * t * dk * heads + t * t * dv * heads});
    if (c.post_concat_projection) {
      out.items.push_back({p + "post_concat_projection", t * heads * dv * d});
    }
    out.items.push_back({p + "feedforward", t * d * dff + t * dff * d});
  }
  out.items.push_back({"classifier", t * d * c.num_classes});
  return out;
}

}  // namespace vtn
