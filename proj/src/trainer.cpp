#include "epigraf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "epigraf/parallel.hpp"

namespace epigraf {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw InputError("adam lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InputError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InputError("adam eps must be positive");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractViolation("adam: parameter, gradient and state sizes differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    params[k] -= cfg.lr * (state.m[k] / c1) / (std::sqrt(state.v[k] / c2) + cfg.eps);
  }
}

LossResult patch_l2_loss(const Image& pred, const Image& target) {
  if (pred.width != target.width || pred.height != target.height || pred.channels != target.channels) {
    throw InputError("patch_l2_loss: shape mismatch");
  }
  if (pred.data.empty()) throw InputError("patch_l2_loss: empty patch");
  LossResult result;
  result.grad = Image(pred.width, pred.height, pred.channels);
  const double count = static_cast<double>(pred.data.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.data.size(); ++k) {
    const double d = pred.data[k] - target.data[k];
    sum += d * d;
    result.grad.data[k] = 2.0 * d / count;
  }
  result.loss = sum / count;
  return result;
}

SphereField::SphereField(const Params& params) : params_(params) {
  if (!(params.radius > 0.0) || params.interior_density < 0.0 || params.edge_width < 0.0) {
    throw InputError("invalid sphere field parameters");
  }
}

void SphereField::evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const {
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Vec3& x = points[k];
    const double r = x.norm();
    double occupancy;
    if (params_.edge_width > 0.0) {
      occupancy = sigmoid((params_.radius - r) / params_.edge_width);
    } else {
      occupancy = r < params_.radius ? 1.0 : 0.0;
    }
    out[k].density = params_.interior_density * occupancy;
    out[k].color = params_.gradient_color ? (Vec3::Constant(0.5) + 0.4 * x / params_.radius).cwiseMax(0.0).cwiseMin(1.0)
                                          : params_.color;
  }
}

void TrainConfig::validate() const {
  if (iters < 1 || batch_patches < 1 || eval_every < 1 || eval_views < 1 || workers < 1) {
    throw InputError("train counts must be positive");
  }
  if (patch_res < 1 || full_res < patch_res) throw InputError("train resolutions need 1 <= patch_res <= full_res");
  effective_schedule().validate();
  adam.validate();
  shape.validate();
  render.validate();
  if (render.background == BackgroundMode::nerfpp) {
    throw InputError("training supports white or black backgrounds only");
  }
}

ScheduleConfig TrainConfig::effective_schedule() const {
  ScheduleConfig s = schedule;
  s.patch_res = patch_res;
  s.full_res = full_res;
  return s;
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.precision(17);
  out << "iter,psnr,loss\n";
  for (const auto& e : evals) out << e.iter << ',' << e.psnr << ',' << e.loss << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void TrainReport::write_timing_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "iter,wall_seconds\n";
  for (const auto& e : evals) out << e.iter << ',' << e.wall_seconds << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<CameraPose> eval_poses(int count) {
  std::vector<CameraPose> poses(count);
  for (int k = 0; k < count; ++k) poses[k].yaw = 2.0 * std::numbers::pi * k / count;
  return poses;
}

CameraPose sample_training_pose(RandomStream& rng) {
  CameraPose pose;
  pose.yaw = 2.0 * std::numbers::pi * rng.uniform();
  pose.pitch = std::acos(std::clamp(1.0 - 2.0 * rng.uniform(), -1.0, 1.0));
  return pose;
}

double evaluate_psnr(const TriPlaneScene& scene, std::span<const CameraPose> poses, std::span<const Image> targets,
                     const RenderConfig& cfg, int resolution, int workers) {
  if (poses.size() != targets.size() || poses.empty()) throw ContractViolation("evaluate_psnr: pose/target mismatch");
  RenderConfig eval_cfg = cfg;
  eval_cfg.stratified_jitter = false;
  const TriPlaneField field(scene);
  double mse = 0.0;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Image pred = render_image(field, poses[k], resolution, eval_cfg, nullptr, 0, workers);
    mse += mean_squared_error(pred, targets[k]);
  }
  return psnr_from_mse(mse / static_cast<double>(poses.size()));
}

namespace {

// Gradient contribution of one patch row; reduced in row order by the caller.
struct RowGradient {
  double loss_sum = 0.0;
  std::vector<double> mlp_grad;
  std::vector<TriPlaneStencil> stencils;
  Eigen::MatrixXd feature_grad;  // F × stencils.size()
};

// Renders row j of a patch and, when `backward` is set, back-propagates
// the patch loss through it.
void process_row(const TriPlaneScene& scene, const PatchTarget& patch, const RenderConfig& cfg,
                 std::uint64_t patch_seed, int j, double grad_scale, bool backward, RowGradient& out) {
  const int r = patch.rays.resolution;
  const int f = scene.shape().features;
  RayTape tape;
  Eigen::MatrixXd ray_feature_grad;
  std::vector<Eigen::MatrixXd> pieces;
  std::size_t columns = 0;
  out.loss_sum = 0.0;
  if (backward) {
    out.mlp_grad.assign(scene.mlp_parameter_count(), 0.0);
    out.stencils.clear();
  }
  for (int i = 0; i < r; ++i) {
    RandomStream rng = RandomStream::substream(patch_seed, static_cast<std::uint64_t>(j) * r + i);
    const Vec3 color = render_ray_recorded(scene, patch.rays.at(i, j), cfg, rng, tape);
    Vec3 d_color;
    for (int c = 0; c < 3; ++c) {
      const double d = color[c] - patch.target.at(i, j, c);
      out.loss_sum += d * d;
      d_color[c] = grad_scale * d;
    }
    if (!backward || tape.decoded.empty()) continue;
    backprop_ray(scene, tape, d_color, out.mlp_grad, ray_feature_grad);
    const auto m = static_cast<Eigen::Index>(tape.decoded.size());
    pieces.push_back(ray_feature_grad.leftCols(m));
    out.stencils.insert(out.stencils.end(), tape.cache.stencils.begin(), tape.cache.stencils.end());
    columns += tape.decoded.size();
  }
  if (!backward) return;
  out.feature_grad.resize(f, static_cast<Eigen::Index>(columns));
  Eigen::Index at = 0;
  for (const auto& piece : pieces) {
    out.feature_grad.middleCols(at, piece.cols()) = piece;
    at += piece.cols();
  }
}

std::uint64_t patch_seed(std::uint64_t seed, std::size_t b) { return RandomStream::substream(seed, b).next_u64(); }

double run_batch(const TriPlaneScene& scene, std::span<const PatchTarget> batch, const RenderConfig& cfg,
                 std::uint64_t seed, std::span<double> grad, bool backward, int workers) {
  if (batch.empty()) throw ContractViolation("empty patch batch");
  if (cfg.background == BackgroundMode::nerfpp) throw ContractViolation("training supports constant backgrounds only");
  std::size_t value_count = 0;
  std::vector<std::size_t> row_patch;
  std::vector<int> row_index;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& p = batch[b];
    if (p.target.width != p.rays.resolution || p.target.height != p.rays.resolution || p.target.channels != 3) {
      throw InputError("patch target does not match its ray grid");
    }
    value_count += p.target.data.size();
    for (int j = 0; j < p.rays.resolution; ++j) {
      row_patch.push_back(b);
      row_index.push_back(j);
    }
  }
  const double grad_scale = 2.0 / static_cast<double>(value_count);
  std::vector<RowGradient> rows(row_patch.size());
  parallel_for(rows.size(), workers, [&](std::size_t k) {
    const std::size_t b = row_patch[k];
    process_row(scene, batch[b], cfg, patch_seed(seed, b), row_index[k], grad_scale, backward, rows[k]);
  });

  double loss_sum = 0.0;
  for (const auto& row : rows) loss_sum += row.loss_sum;
  if (backward) {
    if (grad.size() != scene.parameter_count()) throw ContractViolation("gradient buffer size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    auto mlp = grad.subspan(scene.mlp_offset());
    for (const auto& row : rows) {
      for (std::size_t k = 0; k < mlp.size(); ++k) mlp[k] += row.mlp_grad[k];
      scatter_plane_gradient(row.stencils, row.feature_grad, scene.shape().features, grad);
    }
  }
  return loss_sum / static_cast<double>(value_count);
}

}  // namespace

double batch_loss_and_gradient(const TriPlaneScene& scene, std::span<const PatchTarget> batch, const RenderConfig& cfg,
                               std::uint64_t seed, std::span<double> grad, int workers) {
  return run_batch(scene, batch, cfg, seed, grad, true, workers);
}

double batch_loss(const TriPlaneScene& scene, std::span<const PatchTarget> batch, const RenderConfig& cfg,
                  std::uint64_t seed, int workers) {
  return run_batch(scene, batch, cfg, seed, {}, false, workers);
}

TrainResult train(const TrainConfig& cfg, const GroundTruthScene& gt, const EvalCallback& on_eval) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const ScheduleConfig schedule = cfg.effective_schedule();

  RenderConfig gt_cfg = gt.render;
  gt_cfg.stratified_jitter = false;
  gt_cfg.validate();

  const std::vector<CameraPose> poses = eval_poses(cfg.eval_views);
  std::vector<Image> eval_targets;
  for (const auto& pose : poses) {
    eval_targets.push_back(render_image(gt.field, pose, cfg.full_res, gt_cfg, nullptr, 0, cfg.workers));
  }

  TrainResult result{TriPlaneScene::random(cfg.shape, mix64(cfg.seed)), {}};
  TriPlaneScene& scene = result.scene;
  AdamState adam(scene.parameter_count());
  std::vector<double> grad(scene.parameter_count());
  std::vector<PatchTarget> batch(cfg.batch_patches);

  double loss_accum = 0.0;
  std::int64_t loss_count = 0;
  for (std::int64_t t = 0; t < cfg.iters; ++t) {
    RandomStream rng = RandomStream::substream(cfg.seed, static_cast<std::uint64_t>(t));
    for (auto& patch : batch) {
      const CameraPose pose = sample_training_pose(rng);
      const PatchSpec spec = sample_patch(schedule, t, rng);
      patch.rays = patch_rays(pose, spec);
      patch.target = render_rays(gt.field, patch.rays, gt_cfg, nullptr, 0, cfg.workers);
    }
    const double loss = batch_loss_and_gradient(scene, batch, cfg.render, rng.next_u64(), grad, cfg.workers);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training diverged at iteration " << t << ": loss = " << loss;
      throw NumericalError(msg.str());
    }
    adam_step(scene.parameters(), grad, adam, cfg.adam);
    loss_accum += loss;
    ++loss_count;

    const std::int64_t done = t + 1;
    if (done % cfg.eval_every != 0 && done != cfg.iters) continue;
    EvalRecord record;
    record.iter = done;
    record.psnr = evaluate_psnr(scene, poses, eval_targets, cfg.render, cfg.full_res, cfg.workers);
    record.loss = loss_accum / static_cast<double>(loss_count);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    loss_accum = 0.0;
    loss_count = 0;
    result.report.evals.push_back(record);
    if (on_eval) on_eval(record);
    if (!result.report.iters_to_target && record.psnr >= cfg.target_psnr) {
      result.report.iters_to_target = done;
      if (cfg.stop_at_target) break;
    }
  }
  return result;
}

}  // namespace epigraf
