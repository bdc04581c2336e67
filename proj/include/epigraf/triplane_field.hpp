#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "epigraf/geometry.hpp"

namespace epigraf {

/// Radiance at a point: color in (0,1)^3, density >= 0.
struct FieldSample {
  Vec3 color = Vec3::Zero();
  double density = 0.0;
};

/// Upstream gradient of a scalar loss with respect to one FieldSample.
struct SampleGradient {
  Vec3 d_color = Vec3::Zero();
  double d_density = 0.0;
};

/// Anything the volume renderer can march through.
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  virtual void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const = 0;
};

struct TriPlaneShape {
  int plane_res = 64;  // Rp
  int features = 32;   // F
  int hidden = 64;     // H

  void validate() const;
  bool operator==(const TriPlaneShape&) const = default;
};

enum class Plane { xy = 0, yz = 1, xz = 2 };

/// Three feature planes plus the decoder MLP, stored in one flat parameter
/// vector so the optimizer, checkpoints, and gradient checks share a layout.
///
/// Layout (this order is also the checkpoint order):
///   planes  xy, yz, xz, each [Rp rows][Rp cols][F]; xy: col←x row←y,
///                        yz: col←y row←z, xz: col←x row←z
///   w0 [H][F], b0 [H]    features → hidden (softplus)
///   w1 [H][H], b1 [H]    hidden → hidden (softplus)
///   w2 [4][H], b2 [4]    hidden → (r, g, b, raw density)
///
/// Plane nodes sit at -1 + 2k/(Rp-1), so the cube corners are grid nodes.
class TriPlaneScene {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  /// All-zero parameters.
  explicit TriPlaneScene(const TriPlaneShape& shape);

  /// Planes ~ N(0, 0.1²); MLP weights ~ N(0, 2/fan_in); zero biases.
  static TriPlaneScene random(const TriPlaneShape& shape, std::uint64_t seed);

  const TriPlaneShape& shape() const { return shape_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::size_t plane_parameter_count() const { return mlp_offset_; }
  std::size_t mlp_offset() const { return mlp_offset_; }
  std::size_t mlp_parameter_count() const { return params_.size() - mlp_offset_; }

  /// Flat index of feature 0 at (row, col) of a plane.
  std::size_t plane_index(Plane plane, int row, int col) const;

  std::span<double> plane_features(Plane plane, int row, int col);
  std::span<const double> plane_features(Plane plane, int row, int col) const;

  // Offsets of the MLP tensors inside the flat vector.
  std::size_t w0_offset() const { return mlp_offset_; }
  std::size_t b0_offset() const { return w0_offset() + std::size_t(shape_.hidden) * shape_.features; }
  std::size_t w1_offset() const { return b0_offset() + shape_.hidden; }
  std::size_t b1_offset() const { return w1_offset() + std::size_t(shape_.hidden) * shape_.hidden; }
  std::size_t w2_offset() const { return b1_offset() + shape_.hidden; }
  std::size_t b2_offset() const { return w2_offset() + 4 * std::size_t(shape_.hidden); }

  ConstMatrixMap w0() const { return {params_.data() + w0_offset(), shape_.hidden, shape_.features}; }
  ConstVectorMap b0() const { return {params_.data() + b0_offset(), shape_.hidden}; }
  ConstMatrixMap w1() const { return {params_.data() + w1_offset(), shape_.hidden, shape_.hidden}; }
  ConstVectorMap b1() const { return {params_.data() + b1_offset(), shape_.hidden}; }
  ConstMatrixMap w2() const { return {params_.data() + w2_offset(), 4, shape_.hidden}; }
  ConstVectorMap b2() const { return {params_.data() + b2_offset(), 4}; }

  void save_checkpoint(const std::filesystem::path& path) const;
  static TriPlaneScene load_checkpoint(const std::filesystem::path& path);

 private:
  TriPlaneShape shape_;
  std::size_t mlp_offset_ = 0;
  std::vector<double> params_;
};

/// Bilinear interpolation stencil of one point: for each plane, the flat
/// indices of the four neighbouring nodes and their weights.
struct TriPlaneStencil {
  std::array<std::array<std::size_t, 4>, 3> index{};
  std::array<std::array<double, 4>, 3> weight{};
};

/// Point must lie in [-1, 1]^3.
TriPlaneStencil plane_stencil(const TriPlaneScene& scene, const Vec3& x);

/// Sum of the bilinearly interpolated features of the three planes.
Eigen::VectorXd plane_features(const TriPlaneScene& scene, const Vec3& x);

/// Forward intermediates of a batch of points, retained for the backward pass.
struct DecodeCache {
  std::vector<TriPlaneStencil> stencils;
  Eigen::MatrixXd features;  // F × n
  Eigen::MatrixXd pre0;      // H × n
  Eigen::MatrixXd act0;
  Eigen::MatrixXd pre1;
  Eigen::MatrixXd act1;
  Eigen::MatrixXd raw;  // 4 × n

  std::size_t size() const { return stencils.size(); }
};

/// Batched decode; all points must lie inside the cube.
void decode_batch(const TriPlaneScene& scene, std::span<const Vec3> points, DecodeCache& cache,
                  std::span<FieldSample> out);

FieldSample decode(const TriPlaneScene& scene, const Vec3& x);

/// Reverse pass of decode_batch. Accumulates MLP gradients into `mlp_grad`
/// (length mlp_parameter_count(), same layout as the MLP range of the
/// parameters) and stores ∂L/∂features (F × padded n) in `feature_grad`.
void decode_backward_mlp(const TriPlaneScene& scene, const DecodeCache& cache,
                         std::span<const SampleGradient> upstream, std::span<double> mlp_grad,
                         Eigen::MatrixXd& feature_grad);

/// Distributes feature gradients onto plane entries through the bilinear stencils.
void scatter_plane_gradient(std::span<const TriPlaneStencil> stencils, const Eigen::MatrixXd& feature_grad,
                            int features, std::span<double> grad);

/// Full reverse pass for a single point, accumulating into `grad`.
void decode_backward(const TriPlaneScene& scene, const Vec3& x, const SampleGradient& upstream,
                     std::span<double> grad);

/// RadianceField view of a scene. Points outside [-1,1]^3 get zero density.
class TriPlaneField final : public RadianceField {
 public:
  explicit TriPlaneField(const TriPlaneScene& scene) : scene_(scene) {}
  void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const override;

 private:
  const TriPlaneScene& scene_;
};

bool inside_scene_cube(const Vec3& x);

/// Writes σ at the N³ cell centers of [-1,1]^3 (x fastest, then y, then z)
/// as little-endian f32 after a 16-byte header: "EPGF", u32 N, u32 channels (1),
/// u32 reserved (0).
std::vector<float> density_grid(const TriPlaneScene& scene, int resolution, int workers = 1);
void export_density_grid(const TriPlaneScene& scene, int resolution, const std::filesystem::path& path,
                         int workers = 1);

struct DensityGrid {
  int resolution = 0;
  std::vector<float> values;
};
DensityGrid read_density_grid(const std::filesystem::path& path);

double softplus(double x);
double sigmoid(double x);

}  // namespace epigraf
