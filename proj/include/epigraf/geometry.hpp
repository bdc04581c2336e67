#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace epigraf {

using Vec3 = Eigen::Vector3d;

/// Thrown when a precondition stated on an operation is violated.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown for malformed user-provided data (shapes, files, configs).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Half-extent of the scene cube [-1, 1]^3.
inline constexpr double kSceneBound = 1.0;

/// Spherical camera looking at the world origin. Pitch is the colatitude
/// measured from +z (world up), yaw the azimuth from +x towards +y, fov the
/// full horizontal opening angle.
struct CameraPose {
  double yaw = 0.0;
  double pitch = std::numbers::pi / 2;
  double radius = 3.5;
  double fov = std::numbers::pi / 4;

  void validate() const;
  Vec3 position() const;
};

/// Square crop of the unit image plane: covers [offset, offset + scale]^2 in
/// normalized coordinates and is rasterized at patch_res^2 pixels. A full
/// frame of full_res^2 pixels corresponds to scale = 1 with patch_res = full_res.
struct PatchSpec {
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  int patch_res = 64;
  int full_res = 64;

  void validate() const;
  static PatchSpec full_frame(int resolution) { return {1.0, 0.0, 0.0, resolution, resolution}; }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct NdcPoint {
  double u = 0.0;
  double v = 0.0;
};

/// Pixel-center mapping of patch pixel (i = column, j = row) to the unit image plane.
NdcPoint patch_pixel_to_ndc(const PatchSpec& spec, int i, int j);

/// Pinhole ray through (u, v); v grows downwards. Near/far bracket the
/// scene cube from the camera distance: [radius - sqrt(3), radius + sqrt(3)],
/// clamped at zero. At pitch 0 or pi the camera up vector falls back to +y.
Ray camera_ray(const CameraPose& pose, double u, double v, double aspect = 1.0);

/// r×r rays, row-major (index j*r + i).
struct RayGrid {
  int resolution = 0;
  std::vector<Ray> rays;

  const Ray& at(int i, int j) const { return rays[static_cast<std::size_t>(j) * resolution + i]; }
};

RayGrid patch_rays(const CameraPose& pose, const PatchSpec& spec);

/// Full-frame grid computed directly from pixel centers ((i + 0.5)/R, (j + 0.5)/R).
RayGrid image_rays(const CameraPose& pose, int resolution);

}  // namespace epigraf
