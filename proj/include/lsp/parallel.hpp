#pragma once

#include <cstddef>
#include <functional>

namespace lsp {

/// Worker count: LSP_NUM_WORKERS if set, else hardware concurrency.
int num_workers();

/// Runs fn(i) for i in [0, n) across num_workers() threads. Work items must
/// be independent; the first exception thrown is rethrown after joining.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lsp
