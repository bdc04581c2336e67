#include <doctest.h>

#include <cmath>
#include <numbers>

#include "epigraf/geometry.hpp"
#include "epigraf/random.hpp"

using namespace epigraf;

TEST_CASE("patch_pixel_to_ndc: pixel centers") {
  const PatchSpec full{1.0, 0.0, 0.0, 64, 64};
  const auto p = patch_pixel_to_ndc(full, 0, 0);
  CHECK(p.u == 0.5 / 64);
  CHECK(p.v == 0.5 / 64);

  const PatchSpec half{0.5, 0.25, 0.0, 64, 128};
  const auto q = patch_pixel_to_ndc(half, 31, 0);
  CHECK(q.u == doctest::Approx(0.49609375).epsilon(1e-15));
  CHECK(q.v == doctest::Approx(0.00390625).epsilon(1e-15));

  const PatchSpec corner{0.125, 0.875, 0.875, 64, 512};
  const auto c = patch_pixel_to_ndc(corner, 63, 63);
  CHECK(c.u == doctest::Approx(0.99902).epsilon(1e-5));
  CHECK(c.u < 1.0);
}

TEST_CASE("patch_pixel_to_ndc: out of range") {
  const PatchSpec spec{1.0, 0.0, 0.0, 8, 8};
  CHECK_THROWS_AS(patch_pixel_to_ndc(spec, 8, 0), ContractViolation);
  CHECK_THROWS_AS(patch_pixel_to_ndc(spec, 0, -1), ContractViolation);
}

TEST_CASE("patch_pixel_to_ndc: u strictly increasing in i") {
  const PatchSpec spec{0.3, 0.1, 0.2, 16, 32};
  for (int i = 0; i + 1 < 16; ++i) CHECK(patch_pixel_to_ndc(spec, i, 3).u < patch_pixel_to_ndc(spec, i + 1, 3).u);
}

TEST_CASE("camera_ray: principal ray and camera placement") {
  const CameraPose pose;  // yaw 0, equator, radius 3.5
  const Ray ray = camera_ray(pose, 0.5, 0.5);
  CHECK(ray.origin.norm() == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(std::abs(ray.origin.z()) < 1e-12);
  const Vec3 expected = -ray.origin / ray.origin.norm();
  CHECK((ray.direction - expected).norm() < 1e-12);
  CHECK(ray.t_near == doctest::Approx(3.5 - std::sqrt(3.0)).epsilon(1e-15));
  CHECK(ray.t_far == doctest::Approx(3.5 + std::sqrt(3.0)).epsilon(1e-15));
  CHECK(ray.t_near == doctest::Approx(1.768).epsilon(1e-3));
  CHECK(ray.t_far == doctest::Approx(5.232).epsilon(1e-3));
}

TEST_CASE("camera_ray: pinhole angles and orientation") {
  CameraPose pose;
  pose.yaw = 0.7;
  pose.pitch = 1.1;
  const Vec3 forward = -pose.position().normalized();
  RandomStream rng(3);
  for (int k = 0; k < 100; ++k) {
    const double u = rng.uniform(), v = rng.uniform();
    const Ray ray = camera_ray(pose, u, v);
    const double x = (2 * u - 1) * std::tan(pose.fov / 2);
    const double y = (2 * v - 1) * std::tan(pose.fov / 2);
    // Angle off the optical axis of a pinhole with unit focal length.
    CHECK(std::acos(std::clamp(ray.direction.dot(forward), -1.0, 1.0)) ==
          doctest::Approx(std::atan(std::hypot(x, y))).epsilon(1e-9));
  }
  // Camera on +x looking at the origin with +z up: image right is +y, image
  // down (larger v) is -z.
  const CameraPose front;
  const Ray right = camera_ray(front, 0.9, 0.5);
  const Ray low = camera_ray(front, 0.5, 0.9);
  CHECK(right.direction.y() > 0.0);
  CHECK(low.direction.z() < 0.0);
}

TEST_CASE("camera_ray: poles use the fallback basis") {
  for (double pitch : {0.0, std::numbers::pi}) {
    CameraPose pose;
    pose.pitch = pitch;
    for (double u : {0.0, 0.3, 1.0}) {
      const Ray ray = camera_ray(pose, u, 0.8);
      CHECK(std::isfinite(ray.direction.norm()));
      CHECK(std::abs(ray.direction.norm() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("CameraPose validation") {
  CameraPose bad;
  bad.radius = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = CameraPose{};
  bad.fov = std::numbers::pi;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = CameraPose{};
  bad.pitch = -0.1;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("PatchSpec validation") {
  CHECK_THROWS_AS((PatchSpec{0.1, 0.0, 0.0, 16, 64}).validate(), ContractViolation);  // s < r/R
  CHECK_THROWS_AS((PatchSpec{0.5, 0.6, 0.0, 16, 64}).validate(), ContractViolation);  // δx + s > 1
  CHECK_THROWS_AS((PatchSpec{1.0, 0.0, 0.0, 65, 64}).validate(), ContractViolation);  // r > R
  CHECK_NOTHROW((PatchSpec{0.25, 0.75, 0.0, 16, 64}).validate());
}

TEST_CASE("patch_rays: identity patch equals the full-frame grid bitwise") {
  CameraPose pose;
  pose.yaw = 1.3;
  pose.pitch = 0.9;
  const RayGrid a = patch_rays(pose, PatchSpec::full_frame(32));
  const RayGrid b = image_rays(pose, 32);
  REQUIRE(a.rays.size() == b.rays.size());
  for (std::size_t k = 0; k < a.rays.size(); ++k) {
    CHECK(a.rays[k].direction == b.rays[k].direction);
    CHECK(a.rays[k].origin == b.rays[k].origin);
  }
}

TEST_CASE("patch_rays: shifting by one patch pixel shifts the grid by one column") {
  const CameraPose pose;
  const PatchSpec a{0.5, 0.125, 0.25, 16, 64};
  PatchSpec b = a;
  b.offset_x += a.scale / a.patch_res;
  const RayGrid ga = patch_rays(pose, a);
  const RayGrid gb = patch_rays(pose, b);
  for (int j = 0; j < 16; ++j) {
    for (int i = 0; i + 1 < 16; ++i) CHECK((ga.at(i + 1, j).direction - gb.at(i, j).direction).norm() < 1e-12);
  }
}

TEST_CASE("patch_rays: native-resolution crop is a block of the full grid") {
  CameraPose pose;
  pose.yaw = -0.4;
  const int r = 8, R = 32;
  const PatchSpec spec{static_cast<double>(r) / R, 12.0 / R, 20.0 / R, r, R};
  const RayGrid patch = patch_rays(pose, spec);
  const RayGrid full = image_rays(pose, R);
  for (int j = 0; j < r; ++j) {
    for (int i = 0; i < r; ++i) CHECK((patch.at(i, j).direction - full.at(i + 12, j + 20).direction).norm() < 1e-12);
  }
}

TEST_CASE("patch_rays: unit directions and agreement with camera_ray") {
  RandomStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    CameraPose pose;
    pose.yaw = rng.uniform(-4, 4);
    pose.pitch = rng.uniform(0, std::numbers::pi);
    const double s = rng.uniform(0.25, 1.0);
    const PatchSpec spec{s, rng.uniform(0, 1 - s), rng.uniform(0, 1 - s), 8, 32};
    const RayGrid grid = patch_rays(pose, spec);
    for (int j = 0; j < 8; ++j) {
      for (int i = 0; i < 8; ++i) {
        const auto p = patch_pixel_to_ndc(spec, i, j);
        const Ray ray = camera_ray(pose, p.u, p.v);
        CHECK(ray.direction == grid.at(i, j).direction);
        CHECK(std::abs(grid.at(i, j).direction.norm() - 1.0) < 1e-6);
        CHECK(grid.at(i, j).t_near < grid.at(i, j).t_far);
      }
    }
  }
}
