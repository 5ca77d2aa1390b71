#include "lsp/log.hpp"

#include <cstdlib>
#include <iostream>

namespace lsp {

namespace {
bool quiet() {
  const char* q = std::getenv("LSP_QUIET");
  return q != nullptr && q[0] != '\0' && q[0] != '0';
}
}  // namespace

void log_info(std::string_view msg) {
  if (!quiet()) std::cerr << "[lsp] " << msg << '\n';
}

void log_warn(std::string_view msg) { std::cerr << "[lsp] warning: " << msg << '\n'; }

}  // namespace lsp
