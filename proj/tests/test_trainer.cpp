#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "epigraf/trainer.hpp"
#include "oracles.hpp"

using namespace epigraf;
namespace fs = std::filesystem;

namespace {

Image random_image(int w, int h, RandomStream& rng) {
  Image img(w, h, 3);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.iters = 30;
  cfg.patch_res = 8;
  cfg.full_res = 16;
  cfg.schedule.total_iters = 15;
  cfg.shape = TriPlaneShape{16, 8, 16};
  cfg.render = RenderConfig{12, 12, true, BackgroundMode::white, 4};
  cfg.eval_every = 10;
  cfg.eval_views = 4;
  cfg.adam.lr = 0.01;
  return cfg;
}

GroundTruthScene small_ground_truth() {
  GroundTruthScene gt;
  gt.render = RenderConfig{12, 12, false, BackgroundMode::white, 4};
  return gt;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Reference Adam with bias correction.
struct ReferenceAdam {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& x, const std::vector<double>& g, const AdamConfig& c) {
    if (m.empty()) m.assign(x.size(), 0.0), v.assign(x.size(), 0.0);
    ++t;
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1 - c.beta2) * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(c.beta1, t));
      const double vh = v[k] / (1 - std::pow(c.beta2, t));
      x[k] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
};

}  // namespace

TEST_CASE("patch_l2_loss: values and gradient") {
  Image a(2, 1, 3, 0.0), b(2, 1, 3, 0.0);
  a.data = {1, 0, 0, 0, 0, 0};
  const auto r = patch_l2_loss(a, b);
  CHECK(r.loss == doctest::Approx(1.0 / 6));
  CHECK(r.grad.data[0] == doctest::Approx(2.0 / 6));
  CHECK(patch_l2_loss(b, b).loss == 0.0);

  RandomStream rng(1);
  Image pred = random_image(3, 4, rng);
  const Image target = random_image(3, 4, rng);
  const auto base = patch_l2_loss(pred, target);
  const double h = 1e-6;
  for (std::size_t k = 0; k < pred.data.size(); ++k) {
    const double keep = pred.data[k];
    pred.data[k] = keep + h;
    const double up = patch_l2_loss(pred, target).loss;
    pred.data[k] = keep - h;
    const double down = patch_l2_loss(pred, target).loss;
    pred.data[k] = keep;
    CHECK(std::abs((up - down) / (2 * h) - base.grad.data[k]) < 1e-6);
  }
  CHECK_THROWS_AS(patch_l2_loss(pred, Image(4, 3, 3)), InputError);
}

TEST_CASE("adam_step: matches the reference update") {
  RandomStream rng(2);
  for (const AdamConfig cfg : {AdamConfig{}, AdamConfig{0.01, 0.9, 0.999, 1e-8}}) {
    std::vector<double> x(20), ref_x;
    for (double& v : x) v = rng.normal();
    ref_x = x;
    AdamState state(x.size());
    ReferenceAdam ref;
    for (int t = 0; t < 25; ++t) {
      std::vector<double> g(x.size());
      for (double& v : g) v = rng.normal();
      adam_step(x, g, state, cfg);
      ref.step(ref_x, g, cfg);
    }
    CHECK(state.step == 25);
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(x[k] == doctest::Approx(ref_x[k]).epsilon(1e-12));
  }
}

TEST_CASE("adam_step: zero and constant gradients") {
  const AdamConfig cfg;
  std::vector<double> x{0.5, -0.25, 3.0};
  const auto before = x;
  AdamState state(x.size());
  adam_step(x, std::vector<double>(3, 0.0), state, cfg);
  CHECK(x == before);

  AdamState fresh(3);
  const std::vector<double> g{2.0, -0.5, 1e-3};
  adam_step(x, g, fresh, cfg);
  // First bias-corrected step moves each coordinate by lr·sign(g) up to eps.
  CHECK(x[0] == doctest::Approx(before[0] - cfg.lr).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(before[1] + cfg.lr).epsilon(1e-6));
  CHECK(x[2] == doctest::Approx(before[2] - cfg.lr).epsilon(1e-4));

  AdamState mismatched(2);
  CHECK_THROWS(adam_step(x, g, mismatched, cfg));
  AdamConfig bad;
  bad.beta2 = 1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("SphereField: density profile and color") {
  SphereField::Params p;
  p.edge_width = 0.0;
  p.radius = 0.5;
  const SphereField hard(p);
  const std::vector<Vec3> pts{Vec3(0.1, 0, 0), Vec3(0.6, 0, 0), Vec3(0, 0.49, 0)};
  std::vector<FieldSample> out(3);
  hard.evaluate(pts, out);
  CHECK(out[0].density == 20.0);
  CHECK(out[1].density == 0.0);
  CHECK(out[2].density == 20.0);
  CHECK(out[0].color[0] == doctest::Approx(0.58));

  const SphereField soft{SphereField::Params{}};
  std::vector<FieldSample> edge(1);
  const std::vector<Vec3> on_surface{Vec3(0, 0, 0.75)};
  soft.evaluate(on_surface, edge);
  CHECK(edge[0].density == doctest::Approx(10.0));
}

TEST_CASE("batch gradient matches finite differences of a reference loss") {
  const TriPlaneShape shape{8, 4, 6};
  TriPlaneScene scene = TriPlaneScene::random(shape, 3);
  const RenderConfig cfg{10, 0, false, BackgroundMode::white, 4};
  RandomStream rng(4);
  std::vector<PatchTarget> batch;
  for (int b = 0; b < 2; ++b) {
    const CameraPose pose = sample_training_pose(rng);
    const PatchSpec spec{0.5, 0.2 * b, 0.25, 3, 6};
    batch.push_back(PatchTarget{patch_rays(pose, spec), random_image(3, 3, rng)});
  }

  std::vector<double> grad(scene.parameter_count(), 0.0);
  const double loss = batch_loss_and_gradient(scene, batch, cfg, 9, grad, 1);

  std::vector<double> params(scene.parameters().begin(), scene.parameters().end());
  auto reference_loss = [&] {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& item : batch) {
      for (std::size_t q = 0; q < item.rays.rays.size(); ++q) {
        const Ray& ray = item.rays.rays[q];
        std::vector<double> depths(cfg.n_coarse);
        std::vector<std::array<double, 4>> samples(cfg.n_coarse);
        for (int k = 0; k < cfg.n_coarse; ++k) {
          depths[k] = ray.t_near + (k + 0.5) * (ray.t_far - ray.t_near) / cfg.n_coarse;
          const Vec3 x = ray.at(depths[k]);
          samples[k] = oracle::decode(params, shape, x);
          if (x.cwiseAbs().maxCoeff() > 1.0) samples[k][3] = 0.0;
        }
        const auto c = oracle::composite(depths, samples, ray.t_far, {1.0, 1.0, 1.0});
        for (int ch = 0; ch < 3; ++ch) {
          const double d = c[ch] - item.target.data[q * 3 + ch];
          total += d * d;
          ++count;
        }
      }
    }
    return total / count;
  };
  CHECK(loss == doctest::Approx(reference_loss()).epsilon(1e-12));

  int checked = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (k < scene.plane_parameter_count() && grad[k] == 0.0) continue;
    const double numeric = oracle::central_difference(params, k, 1e-4, reference_loss);
    if (std::abs(numeric) < 1e-9 && std::abs(grad[k]) < 1e-9) continue;
    CHECK(oracle::relative_error(grad[k], numeric) < 1e-3);
    ++checked;
  }
  CHECK(checked > 50);

  std::vector<double> grad4(scene.parameter_count(), 0.0);
  CHECK(batch_loss_and_gradient(scene, batch, cfg, 9, grad4, 4) == loss);
  CHECK(grad4 == grad);
  CHECK(batch_loss(scene, batch, cfg, 9, 3) == loss);
}

TEST_CASE("train: deterministic for a seed and independent of worker count") {
  const auto gt = small_ground_truth();
  TrainConfig cfg = small_config();
  const auto a = train(cfg, gt);
  const auto b = train(cfg, gt);
  cfg.workers = 3;
  const auto c = train(cfg, gt);
  REQUIRE(a.report.evals.size() == 3);
  CHECK(a.report.evals.back().iter == 30);
  for (std::size_t k = 0; k < a.report.evals.size(); ++k) {
    CHECK(a.report.evals[k].psnr == b.report.evals[k].psnr);
    CHECK(a.report.evals[k].psnr == c.report.evals[k].psnr);
    CHECK(a.report.evals[k].loss == c.report.evals[k].loss);
  }
  const auto pa = a.scene.parameters(), pc = c.scene.parameters();
  CHECK(std::equal(pa.begin(), pa.end(), pc.begin(), pc.end()));

  const fs::path dir = fs::temp_directory_path() / "epigraf_tests";
  fs::create_directories(dir);
  a.report.write_csv(dir / "a.csv");
  c.report.write_csv(dir / "c.csv");
  CHECK(file_bytes(dir / "a.csv") == file_bytes(dir / "c.csv"));
  CHECK(file_bytes(dir / "a.csv").rfind("iter,psnr,loss\n", 0) == 0);

  cfg.seed = 1;
  const auto d = train(cfg, gt);
  CHECK(d.report.evals.back().psnr != a.report.evals.back().psnr);
}

TEST_CASE("train: full-frame patches improve PSNR") {
  TrainConfig cfg = small_config();
  cfg.patch_res = cfg.full_res;  // every scale collapses to 1
  cfg.iters = 80;
  const auto result = train(cfg, small_ground_truth());
  const auto& e = result.report.evals;
  REQUIRE(e.size() == 8);
  // Average pairs to smooth out single-step noise.
  std::vector<double> smoothed;
  for (std::size_t k = 0; k + 1 < e.size(); k += 2) smoothed.push_back(0.5 * (e[k].psnr + e[k + 1].psnr));
  for (std::size_t k = 1; k < smoothed.size(); ++k) CHECK(smoothed[k] > smoothed[k - 1]);
  CHECK(e.back().psnr > e.front().psnr + 1.0);
}

TEST_CASE("train: stop at target and divergence") {
  TrainConfig cfg = small_config();
  cfg.target_psnr = 0.0;
  cfg.stop_at_target = true;
  const auto early = train(cfg, small_ground_truth());
  REQUIRE(early.report.iters_to_target.has_value());
  CHECK(*early.report.iters_to_target == 10);
  CHECK(early.report.evals.size() == 1);

  TrainConfig wild = small_config();
  wild.adam.lr = 1e300;
  CHECK_THROWS_AS(train(wild, small_ground_truth()), NumericalError);

  TrainConfig nerfpp = small_config();
  nerfpp.render.background = BackgroundMode::nerfpp;
  CHECK_THROWS(nerfpp.validate());
}

TEST_CASE("eval_poses and sample_training_pose") {
  const auto poses = eval_poses(8);
  REQUIRE(poses.size() == 8);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    CHECK(poses[k].pitch == doctest::Approx(std::numbers::pi / 2));
    CHECK(poses[k].yaw == doctest::Approx(2 * std::numbers::pi * k / 8));
  }
  RandomStream rng(5);
  double z_sum = 0.0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const CameraPose p = sample_training_pose(rng);
    CHECK(p.radius == 3.5);
    z_sum += p.position().z() / 3.5;
  }
  CHECK(std::abs(z_sum / n) < 0.02);
}
