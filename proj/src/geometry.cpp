#include "lsp/geometry.hpp"

#include <sstream>

namespace lsp {

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0) || width <= 0 || height <= 0) {
    std::ostringstream os;
    os << "invalid camera intrinsics: fx=" << fx << " fy=" << fy << " size=" << width << "x"
       << height;
    throw DomainError(os.str());
  }
}

PixelCoord project_center(const Vec3d& t, const CameraIntrinsics& k, const std::string& what) {
  if (!(t.z() > 0)) {
    std::ostringstream os;
    os << "project_center: non-positive depth z=" << t.z();
    if (!what.empty()) os << " (" << what << ")";
    throw DomainError(os.str());
  }
  return {k.fx * t.x() / t.z() + k.cx, k.fy * t.y() / t.z() + k.cy};
}

}  // namespace lsp
