#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtn/decoder.hpp"

namespace vtn {

/// Named per-component counts whose total is the sum of the components.
struct CostBreakdown {
  struct Item {
    std::string component;
    std::uint64_t value = 0;
  };
  std::vector<Item> items;

  std::uint64_t total() const;
  /// Sum over components whose name starts with `prefix`.
  std::uint64_t subtotal(const std::string& prefix) const;
};

/// Closed-form learned-parameter count (weights and biases).
CostBreakdown count_params(const DecoderConfig& config);

/// Closed-form multiply-accumulate count of one clip of config.t frames.
/// Bias additions, scaling and softmax are not MACs.
CostBreakdown count_macs(const DecoderConfig& config);

}  // namespace vtn
