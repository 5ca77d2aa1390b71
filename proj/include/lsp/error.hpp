#pragma once

#include <stdexcept>
#include <string>

namespace lsp {

/// Input outside an operation's mathematical domain (z <= 0, non-unit quaternion).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// NaN/Inf or a degenerate value produced or consumed by a numeric routine.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented contract: shape mismatch, unnormalized heatmap, ...
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed or missing dataset files, manifests and checkpoints.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid model/training configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace lsp
