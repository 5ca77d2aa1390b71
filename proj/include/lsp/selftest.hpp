#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsp/network.hpp"

namespace lsp {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Runtime gradient checks (central differences, double precision) and
/// invariant checks over the core numerical kernels and a tiny model.
std::vector<SelftestResult> run_selftest(std::uint64_t seed);

/// Tensor names an encoder archive must contain, with their shapes.
std::vector<std::pair<std::string, std::string>> encoder_tensor_names(Backbone backbone, int in_channels);

}  // namespace lsp
