#include "lsp/losses.hpp"

#include <cmath>

namespace lsp {

LossBreakdown compose_losses(const LossParts& p) {
  const std::pair<const char*, double> terms[] = {{"position", p.position},
                                                  {"euc", p.euc},
                                                  {"reg", p.reg},
                                                  {"center", p.center},
                                                  {"rotation", p.rotation}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string("compose_losses: non-finite ") + name + " loss");
    }
  }
  LossBreakdown b;
  b.position = p.position;
  b.euc = p.euc;
  b.reg = p.reg;
  b.center = p.center;
  b.rotation = p.rotation;
  b.translation = p.position + p.center;
  b.pose = b.translation + p.rotation;
  return b;
}

}  // namespace lsp
