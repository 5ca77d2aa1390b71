#pragma once

#include <string_view>

namespace lsp {

/// Diagnostics go to stderr; LSP_QUIET=1 silences info-level messages.
void log_info(std::string_view msg);
void log_warn(std::string_view msg);

}  // namespace lsp
