#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "epigraf/random.hpp"
#include "epigraf/triplane_field.hpp"
#include "oracles.hpp"

using namespace epigraf;
namespace fs = std::filesystem;

namespace {

const TriPlaneShape kSmall{8, 4, 6};

Vec3 random_point(RandomStream& rng) { return {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}; }

double node_coord(int k, int rp) { return -1.0 + 2.0 * k / (rp - 1); }

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "epigraf_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("plane_features: nodes, cell centers and constants") {
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 1);
  const int rp = kSmall.plane_res;
  // Grid node (ix, iy, iz): xy node (row iy, col ix), yz (row iz, col iy), xz (row iz, col ix).
  const int ix = 2, iy = 5, iz = 7;
  const Vec3 x(node_coord(ix, rp), node_coord(iy, rp), node_coord(iz, rp));
  const auto f = plane_features(scene, x);
  for (int k = 0; k < kSmall.features; ++k) {
    const double expected = scene.plane_features(Plane::xy, iy, ix)[k] + scene.plane_features(Plane::yz, iz, iy)[k] +
                            scene.plane_features(Plane::xz, iz, ix)[k];
    CHECK(f[k] == doctest::Approx(expected).epsilon(1e-14));
  }

  const double c = 0.5 * (node_coord(3, rp) + node_coord(4, rp));
  const auto g = plane_features(scene, Vec3(c, c, c));
  for (int k = 0; k < kSmall.features; ++k) {
    double expected = 0;
    for (Plane p : {Plane::xy, Plane::yz, Plane::xz}) {
      expected += 0.25 * (scene.plane_features(p, 3, 3)[k] + scene.plane_features(p, 3, 4)[k] +
                          scene.plane_features(p, 4, 3)[k] + scene.plane_features(p, 4, 4)[k]);
    }
    CHECK(g[k] == doctest::Approx(expected).epsilon(1e-13));
  }

  TriPlaneScene constant(kSmall);
  auto params = constant.parameters();
  std::fill(params.begin(), params.begin() + constant.plane_parameter_count(), 0.7);
  RandomStream rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto h = plane_features(constant, random_point(rng));
    for (int k = 0; k < kSmall.features; ++k) CHECK(h[k] == doctest::Approx(2.1).epsilon(1e-14));
  }
}

TEST_CASE("plane_features: linear along grid axes between nodes") {
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 3);
  const int rp = kSmall.plane_res;
  const double y = node_coord(2, rp), z = node_coord(5, rp);
  const double a = node_coord(3, rp), b = node_coord(4, rp);
  const auto fa = plane_features(scene, Vec3(a, y, z));
  const auto fb = plane_features(scene, Vec3(b, y, z));
  for (double t : {0.1, 0.37, 0.8}) {
    const auto ft = plane_features(scene, Vec3(a + t * (b - a), y, z));
    for (int k = 0; k < kSmall.features; ++k) CHECK(ft[k] == doctest::Approx((1 - t) * fa[k] + t * fb[k]).epsilon(1e-12));
  }
}

TEST_CASE("decode: zero scene") {
  const TriPlaneScene scene(kSmall);
  const FieldSample s = decode(scene, Vec3(0.3, -0.2, 0.9));
  CHECK(s.density == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  for (int c = 0; c < 3; ++c) CHECK(s.color[c] == 0.5);
}

TEST_CASE("decode matches the reference implementation") {
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 4);
  RandomStream rng(5);
  for (int t = 0; t < 200; ++t) {
    const Vec3 x = random_point(rng);
    const FieldSample s = decode(scene, x);
    const auto ref = oracle::decode(scene.parameters(), kSmall, x);
    for (int c = 0; c < 3; ++c) CHECK(s.color[c] == doctest::Approx(ref[c]).epsilon(1e-12));
    CHECK(s.density == doctest::Approx(ref[3]).epsilon(1e-12));
    CHECK(s.density >= 0.0);
    for (int c = 0; c < 3; ++c) {
      CHECK(s.color[c] > 0.0);
      CHECK(s.color[c] < 1.0);
    }
  }
}

TEST_CASE("decode: single points equal batched evaluation bitwise") {
  const TriPlaneScene scene = TriPlaneScene::random(TriPlaneShape{}, 6);
  RandomStream rng(7);
  std::vector<Vec3> points(37);
  for (auto& p : points) p = random_point(rng);
  std::vector<FieldSample> batch(points.size());
  DecodeCache cache;
  decode_batch(scene, points, cache, batch);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const FieldSample single = decode(scene, points[k]);
    CHECK(single.density == batch[k].density);
    CHECK(single.color == batch[k].color);
  }
}

TEST_CASE("decode: plane permutation symmetry") {
  // Swapping x and y: P'_xy = P_xy transposed, P'_yz = P_xz, P'_xz = P_yz.
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 8);
  TriPlaneScene swapped = scene;
  const int rp = kSmall.plane_res;
  for (int r = 0; r < rp; ++r) {
    for (int c = 0; c < rp; ++c) {
      for (int k = 0; k < kSmall.features; ++k) {
        swapped.plane_features(Plane::xy, r, c)[k] = scene.plane_features(Plane::xy, c, r)[k];
        swapped.plane_features(Plane::yz, r, c)[k] = scene.plane_features(Plane::xz, r, c)[k];
        swapped.plane_features(Plane::xz, r, c)[k] = scene.plane_features(Plane::yz, r, c)[k];
      }
    }
  }
  RandomStream rng(9);
  for (int t = 0; t < 50; ++t) {
    const Vec3 x = random_point(rng);
    const FieldSample a = decode(scene, x);
    const FieldSample b = decode(swapped, Vec3(x.y(), x.x(), x.z()));
    CHECK(a.density == doctest::Approx(b.density).epsilon(1e-12));
    for (int c = 0; c < 3; ++c) CHECK(a.color[c] == doctest::Approx(b.color[c]).epsilon(1e-12));
  }
}

TEST_CASE("decode_backward: finite differences") {
  TriPlaneScene scene = TriPlaneScene::random(kSmall, 10);
  RandomStream rng(11);
  std::vector<double> params(scene.parameters().begin(), scene.parameters().end());
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 x = random_point(rng);
    SampleGradient up;
    up.d_color = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    up.d_density = rng.uniform(-1, 1);
    std::vector<double> grad(scene.parameter_count(), 0.0);
    decode_backward(scene, x, up, grad);
    auto objective = [&] {
      const auto s = oracle::decode(params, kSmall, x);
      return up.d_color[0] * s[0] + up.d_color[1] * s[1] + up.d_color[2] * s[2] + up.d_density * s[3];
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double numeric = oracle::central_difference(params, k, 1e-4, objective);
      if (grad[k] == 0.0 && numeric == 0.0) continue;
      CHECK(oracle::relative_error(grad[k], numeric) < 1e-3);
    }
  }
}

TEST_CASE("decode_backward: zero upstream and stencil support") {
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 12);
  const Vec3 x(0.11, -0.43, 0.67);
  std::vector<double> grad(scene.parameter_count(), 0.0);
  decode_backward(scene, x, SampleGradient{}, grad);
  for (double g : grad) CHECK(g == 0.0);

  SampleGradient up;
  up.d_density = 1.0;
  decode_backward(scene, x, up, grad);
  const TriPlaneStencil st = plane_stencil(scene, x);
  std::vector<bool> in_stencil(scene.plane_parameter_count(), false);
  for (int p = 0; p < 3; ++p) {
    for (int c = 0; c < 4; ++c) {
      for (int f = 0; f < kSmall.features; ++f) in_stencil[st.index[p][c] + f] = true;
    }
  }
  std::size_t touched = 0;
  for (std::size_t k = 0; k < scene.plane_parameter_count(); ++k) {
    if (grad[k] != 0.0) {
      CHECK(in_stencil[k]);
      ++touched;
    }
  }
  CHECK(touched > 0);
  CHECK(touched <= 12u * kSmall.features);
}

TEST_CASE("checkpoint round trip") {
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 13);
  const fs::path path = temp_path("roundtrip.epgc");
  scene.save_checkpoint(path);
  CHECK(fs::file_size(path) == 16 + 4 * scene.parameter_count());
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "EPGC");
  const TriPlaneScene loaded = TriPlaneScene::load_checkpoint(path);
  CHECK(loaded.shape() == kSmall);
  for (std::size_t k = 0; k < scene.parameter_count(); ++k) {
    CHECK(loaded.parameters()[k] == static_cast<double>(static_cast<float>(scene.parameters()[k])));
  }
  std::ofstream(temp_path("bad.epgc"), std::ios::binary) << "NOPE";
  CHECK_THROWS(TriPlaneScene::load_checkpoint(temp_path("bad.epgc")));
}

TEST_CASE("export_density_grid: zero scene, size and lattice values") {
  const fs::path path = temp_path("zero.epgf");
  export_density_grid(TriPlaneScene(kSmall), 12, path);
  CHECK(fs::file_size(path) == 16 + 4 * 12 * 12 * 12);
  const DensityGrid grid = read_density_grid(path);
  CHECK(grid.resolution == 12);
  for (float v : grid.values) CHECK(std::abs(v - std::log(2.0)) < 1e-6);

  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 14);
  const int n = 6;
  const auto values = density_grid(scene, n, 3);
  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        auto c = [n](int k) { return -1.0 + (2.0 * k + 1.0) / n; };
        const float expected = static_cast<float>(decode(scene, Vec3(c(x), c(y), c(z))).density);
        CHECK(values[(z * n + y) * n + x] == expected);
      }
    }
  }
  CHECK(density_grid(scene, n, 1) == values);
  CHECK_THROWS_AS(density_grid(scene, 1), ContractViolation);
}

TEST_CASE("TriPlaneField masks points outside the cube") {
  const TriPlaneScene scene = TriPlaneScene::random(kSmall, 15);
  const TriPlaneField field(scene);
  std::vector<Vec3> points = {Vec3(0.2, 0.1, 0.0), Vec3(1.5, 0.0, 0.0), Vec3(0.0, -1.0001, 0.3)};
  std::vector<FieldSample> out(points.size());
  field.evaluate(points, out);
  CHECK(out[0].density == decode(scene, points[0]).density);
  CHECK(out[1].density == 0.0);
  CHECK(out[2].density == 0.0);
}
