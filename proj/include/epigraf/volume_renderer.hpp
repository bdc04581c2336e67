#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epigraf/geometry.hpp"
#include "epigraf/image.hpp"
#include "epigraf/random.hpp"
#include "epigraf/triplane_field.hpp"

namespace epigraf {

enum class BackgroundMode { white, black, nerfpp };

BackgroundMode parse_background_mode(const std::string& name);
std::string to_string(BackgroundMode mode);

struct RenderConfig {
  int n_coarse = 48;
  int n_fine = 48;
  bool stratified_jitter = false;
  BackgroundMode background = BackgroundMode::white;
  int n_background = 16;

  void validate() const;
  /// Constant background color (white or black); black for nerfpp, whose
  /// background is produced by the BackgroundField instead.
  Vec3 background_color() const;
};

/// One depth per equal-width bin of [t_near, t_far]: bin centers, or a uniform
/// draw inside each bin when jittered. Sorted ascending.
std::vector<double> stratify(const Ray& ray, int n, bool jitter, RandomStream& rng);

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  std::vector<double> weights;  // T_i·α_i
  double transmittance = 1.0;   // after the last sample
};

/// Emission-absorption compositing. Sample i spans [depth_i, depth_{i+1}),
/// the last one closes at t_far. Depths must be non-decreasing.
CompositeResult composite(std::span<const FieldSample> samples, std::span<const double> depths, double t_far,
                          const Vec3& background_color);

/// Inverse-transform draws from the piecewise-constant PDF with one bin per
/// coarse depth (bin edges at t_near, midpoints between depths, t_far) and
/// mass weight + 1e-5. Returns coarse and fine depths merged and sorted. With
/// jitter off the draws sit at evenly spaced quantiles (k + 0.5)/n_fine.
std::vector<double> importance_resample(std::span<const double> coarse_depths, std::span<const double> weights,
                                        double t_near, double t_far, int n_fine, bool jitter, RandomStream& rng);

inline constexpr double kResampleWeightFloor = 1e-5;

/// (x/|x|, 1/|x|) for |x| > 1.
Eigen::Vector4d inverse_sphere_param(const Vec3& x);

/// Coordinate MLP for the unbounded background: 4 inputs, two blocks of two
/// linear layers (LeakyReLU 0.2 between layers), sigmoid color and softplus density.
class BackgroundField {
 public:
  explicit BackgroundField(int hidden = 64);
  static BackgroundField random(int hidden, std::uint64_t seed);

  FieldSample evaluate(const Eigen::Vector4d& coords) const;
  int hidden() const { return hidden_; }
  std::span<double> parameters() { return params_; }

 private:
  int hidden_;
  std::vector<double> params_;
};

/// Composites the background field along the ray with n samples placed in
/// inverse radius 1/|x| ∈ (0, 1) beyond the unit sphere; the last sample is
/// fully opaque.
Vec3 render_background(const BackgroundField& bg, const Ray& ray, int n, bool jitter, RandomStream& rng);

/// Coarse pass → importance resampling → single composite over the merged
/// depths (+ background).
Vec3 render_ray(const RadianceField& field, const Ray& ray, const RenderConfig& cfg, const BackgroundField* bg,
                RandomStream& rng);

/// Renders every ray of a grid. Pixel k uses RandomStream::substream(seed, k)
/// so the output does not depend on the worker count.
Image render_rays(const RadianceField& field, const RayGrid& rays, const RenderConfig& cfg,
                  const BackgroundField* bg, std::uint64_t seed, int workers = 1);

Image render_patch(const RadianceField& field, const CameraPose& pose, const PatchSpec& spec,
                   const RenderConfig& cfg, const BackgroundField* bg, std::uint64_t seed, int workers = 1);

/// Full-frame render at resolution × resolution.
Image render_image(const RadianceField& field, const CameraPose& pose, int resolution, const RenderConfig& cfg,
                   const BackgroundField* bg, std::uint64_t seed, int workers = 1);

/// Forward record of one tri-plane ray, sufficient for the reverse pass.
/// Only samples inside the scene cube are decoded; the others have zero density.
struct RayTape {
  std::vector<double> depths;
  std::vector<FieldSample> samples;
  std::vector<std::size_t> decoded;  // sample indices that went through the decoder
  std::vector<Vec3> points;          // positions of decoded samples
  DecodeCache cache;
  CompositeResult result;
  double t_far = 0.0;
  Vec3 background = Vec3::Zero();
};

/// Renders one ray through a tri-plane scene and records the tape. The sample
/// depths are treated as constants by the reverse pass.
Vec3 render_ray_recorded(const TriPlaneScene& scene, const Ray& ray, const RenderConfig& cfg, RandomStream& rng,
                         RayTape& tape);

/// Reverse pass of the final composite + decoder for ∂L/∂color. MLP
/// gradients accumulate into `mlp_grad`; decoder-input gradients of the
/// decoded samples are written to `feature_grad` (F × decoded count, padded)
/// for scatter_plane_gradient with tape.cache.stencils.
void backprop_ray(const TriPlaneScene& scene, const RayTape& tape, const Vec3& d_color, std::span<double> mlp_grad,
                  Eigen::MatrixXd& feature_grad);

}  // namespace epigraf
