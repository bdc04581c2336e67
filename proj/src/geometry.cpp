#include "epigraf/geometry.hpp"

#include <cmath>
#include <string>

namespace epigraf {

namespace {
constexpr double kCubeCornerDistance = 1.7320508075688772935274463415059;  // sqrt(3) * kSceneBound
}

void CameraPose::validate() const {
  if (!(radius > 0.0)) throw ContractViolation("camera radius must be positive");
  if (!(fov > 0.0 && fov < std::numbers::pi)) throw ContractViolation("camera fov must lie in (0, pi)");
  if (!(pitch >= 0.0 && pitch <= std::numbers::pi)) throw ContractViolation("camera pitch must lie in [0, pi]");
  if (!std::isfinite(yaw)) throw ContractViolation("camera yaw must be finite");
}

Vec3 CameraPose::position() const {
  return radius * Vec3(std::sin(pitch) * std::cos(yaw), std::sin(pitch) * std::sin(yaw), std::cos(pitch));
}

void PatchSpec::validate() const {
  if (patch_res <= 0 || full_res <= 0) throw ContractViolation("patch resolutions must be positive");
  if (patch_res > full_res) throw ContractViolation("patch_res must not exceed full_res");
  const double min_scale = static_cast<double>(patch_res) / full_res;
  // Tolerate one ulp-scale rounding from samplers that compute s and δ in floating point.
  constexpr double slack = 1e-12;
  if (!(scale >= min_scale - slack && scale <= 1.0 + slack)) {
    throw ContractViolation("patch scale " + std::to_string(scale) + " outside [r/R, 1]");
  }
  if (!(offset_x >= -slack && offset_x + scale <= 1.0 + slack)) throw ContractViolation("offset_x outside [0, 1 - s]");
  if (!(offset_y >= -slack && offset_y + scale <= 1.0 + slack)) throw ContractViolation("offset_y outside [0, 1 - s]");
}

NdcPoint patch_pixel_to_ndc(const PatchSpec& spec, int i, int j) {
  if (i < 0 || j < 0 || i >= spec.patch_res || j >= spec.patch_res) {
    throw ContractViolation("patch pixel index out of range");
  }
  const double r = spec.patch_res;
  return {spec.offset_x + spec.scale * (i + 0.5) / r, spec.offset_y + spec.scale * (j + 0.5) / r};
}

Ray camera_ray(const CameraPose& pose, double u, double v, double aspect) {
  const Vec3 origin = pose.position();
  const Vec3 forward = (-origin).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitY());
  right.normalize();
  const Vec3 up = right.cross(forward);

  const double tan_half = std::tan(0.5 * pose.fov);
  const double x = (2.0 * u - 1.0) * tan_half;
  const double y = (2.0 * v - 1.0) * tan_half / aspect;

  Ray ray;
  ray.origin = origin;
  ray.direction = (forward + x * right - y * up).normalized();
  ray.t_near = std::max(0.0, pose.radius - kCubeCornerDistance);
  ray.t_far = pose.radius + kCubeCornerDistance;
  return ray;
}

RayGrid patch_rays(const CameraPose& pose, const PatchSpec& spec) {
  pose.validate();
  spec.validate();
  RayGrid grid;
  grid.resolution = spec.patch_res;
  grid.rays.reserve(static_cast<std::size_t>(spec.patch_res) * spec.patch_res);
  for (int j = 0; j < spec.patch_res; ++j) {
    for (int i = 0; i < spec.patch_res; ++i) {
      const NdcPoint p = patch_pixel_to_ndc(spec, i, j);
      grid.rays.push_back(camera_ray(pose, p.u, p.v));
    }
  }
  return grid;
}

RayGrid image_rays(const CameraPose& pose, int resolution) {
  pose.validate();
  if (resolution <= 0) throw ContractViolation("image resolution must be positive");
  RayGrid grid;
  grid.resolution = resolution;
  grid.rays.reserve(static_cast<std::size_t>(resolution) * resolution);
  for (int j = 0; j < resolution; ++j) {
    for (int i = 0; i < resolution; ++i) {
      grid.rays.push_back(camera_ray(pose, (i + 0.5) / resolution, (j + 0.5) / resolution));
    }
  }
  return grid;
}

}  // namespace epigraf
