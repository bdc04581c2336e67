#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "epigraf/geometry.hpp"
#include "epigraf/image.hpp"
#include "epigraf/patch_sampler.hpp"
#include "epigraf/triplane_field.hpp"
#include "epigraf/volume_renderer.hpp"

namespace epigraf {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

struct LossResult {
  double loss = 0.0;
  Image grad;  // ∂loss/∂pred, same shape as pred
};

/// Mean squared error over pixels and channels with gradient 2(pred - target)/count.
LossResult patch_l2_loss(const Image& pred, const Image& target);

/// Procedural ground truth: a ball of radius `radius` whose density rises
/// from 0 to `interior_density` across a sigmoid edge of width `edge_width`.
/// Color is constant or varies linearly with position (0.5 + 0.4·x/radius).
class SphereField final : public RadianceField {
 public:
  struct Params {
    double radius = 0.75;
    double interior_density = 20.0;
    double edge_width = 0.02;  // 0 gives a hard edge
    bool gradient_color = true;
    Vec3 color = Vec3(0.8, 0.3, 0.2);
  };

  SphereField() = default;
  explicit SphereField(const Params& params);

  void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const override;
  const Params& params() const { return params_; }

 private:
  Params params_;
};

struct GroundTruthScene {
  SphereField field;
  RenderConfig render;  // jitter is ignored: targets are always rendered with bin centers
};

struct TrainConfig {
  std::int64_t iters = 5000;
  int batch_patches = 1;
  int patch_res = 16;
  int full_res = 64;
  ScheduleConfig schedule;  // patch_res/full_res are overwritten from the fields above
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 100;
  TriPlaneShape shape;
  RenderConfig render{48, 48, true, BackgroundMode::white, 16};
  int eval_views = 8;
  double target_psnr = 25.0;
  bool stop_at_target = false;
  int workers = 1;

  void validate() const;
  ScheduleConfig effective_schedule() const;
};

struct EvalRecord {
  std::int64_t iter = 0;
  double psnr = 0.0;
  double loss = 0.0;  // mean training loss since the previous record
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EvalRecord> evals;
  std::optional<std::int64_t> iters_to_target;  // first eval reaching target_psnr

  /// iter,psnr,loss: deterministic for a fixed config.
  void write_csv(const std::filesystem::path& path) const;
  /// iter,wall_seconds
  void write_timing_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  TriPlaneScene scene;
  TrainReport report;
};

/// Held-out cameras: `count` poses evenly spaced in yaw on the equator.
std::vector<CameraPose> eval_poses(int count);

/// Camera drawn uniformly on the sphere of radius 3.5.
CameraPose sample_training_pose(RandomStream& rng);

/// Full-frame PSNR of the scene against targets, from the MSE pooled over all poses.
double evaluate_psnr(const TriPlaneScene& scene, std::span<const CameraPose> poses, std::span<const Image> targets,
                     const RenderConfig& cfg, int resolution, int workers);

struct PatchTarget {
  RayGrid rays;
  Image target;
};

/// Loss of one batch of patches and its gradient with respect to every scene
/// parameter (same layout as TriPlaneScene::parameters()). Sample depths are
/// drawn from `seed` and held constant by the reverse pass; with n_fine = 0 and
/// jitter off they depend on the rays alone.
double batch_loss_and_gradient(const TriPlaneScene& scene, std::span<const PatchTarget> batch, const RenderConfig& cfg,
                               std::uint64_t seed, std::span<double> grad, int workers);

/// Forward-only counterpart of batch_loss_and_gradient with the same depths.
double batch_loss(const TriPlaneScene& scene, std::span<const PatchTarget> batch, const RenderConfig& cfg,
                  std::uint64_t seed, int workers);

using EvalCallback = std::function<void(const EvalRecord&)>;

/// Patch-wise reconstruction. Aborts with NumericalError on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const GroundTruthScene& gt, const EvalCallback& on_eval = {});

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace epigraf
