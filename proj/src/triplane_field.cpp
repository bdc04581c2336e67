#include "epigraf/triplane_field.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "epigraf/binary_io.hpp"
#include "epigraf/parallel.hpp"
#include "epigraf/random.hpp"

namespace epigraf {

namespace {

// Every batch is padded to a multiple of this many columns so each point goes
// through the same kernels regardless of how many neighbours it shares a batch with.
constexpr Eigen::Index kColumnBlock = 8;

Eigen::Index padded_columns(std::size_t n) {
  const auto cols = static_cast<Eigen::Index>(n);
  return std::max<Eigen::Index>(kColumnBlock, (cols + kColumnBlock - 1) / kColumnBlock * kColumnBlock);
}

template <typename Derived>
auto softplus_array(const Eigen::ArrayBase<Derived>& z) {
  return z.max(0.0) + (1.0 + (-z.abs()).exp()).log();
}

template <typename Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& z) {
  return 1.0 / (1.0 + (-z).exp());
}

// Continuous node coordinate of c ∈ [-1, 1] on an Rp-node axis; returns the
// lower node and the fractional offset towards the upper one.
std::pair<int, double> axis_cell(double c, int res) {
  const double g = (c + 1.0) * 0.5 * (res - 1);
  int i0 = static_cast<int>(std::floor(g));
  i0 = std::clamp(i0, 0, res - 2);
  return {i0, std::clamp(g - i0, 0.0, 1.0)};
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

bool inside_scene_cube(const Vec3& x) { return x.cwiseAbs().maxCoeff() <= kSceneBound; }

void TriPlaneShape::validate() const {
  if (plane_res < 2) throw ContractViolation("plane_res must be at least 2");
  if (features < 1 || hidden < 1) throw ContractViolation("features and hidden must be positive");
}

TriPlaneScene::TriPlaneScene(const TriPlaneShape& shape) : shape_(shape) {
  shape_.validate();
  mlp_offset_ = 3 * std::size_t(shape.plane_res) * shape.plane_res * shape.features;
  const std::size_t h = shape.hidden;
  const std::size_t mlp = h * shape.features + h + h * h + h + 4 * h + 4;
  params_.assign(mlp_offset_ + mlp, 0.0);
}

TriPlaneScene TriPlaneScene::random(const TriPlaneShape& shape, std::uint64_t seed) {
  TriPlaneScene scene(shape);
  RandomStream rng(seed);
  auto params = scene.parameters();
  for (std::size_t k = 0; k < scene.mlp_offset(); ++k) params[k] = 0.1 * rng.normal();
  auto fill = [&](std::size_t offset, std::size_t count, int fan_in) {
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t k = 0; k < count; ++k) params[offset + k] = stddev * rng.normal();
  };
  const std::size_t h = shape.hidden;
  fill(scene.w0_offset(), h * shape.features, shape.features);
  fill(scene.w1_offset(), h * h, shape.hidden);
  fill(scene.w2_offset(), 4 * h, shape.hidden);
  return scene;
}

std::size_t TriPlaneScene::plane_index(Plane plane, int row, int col) const {
  const std::size_t rp = shape_.plane_res;
  return ((static_cast<std::size_t>(plane) * rp + row) * rp + col) * shape_.features;
}

std::span<double> TriPlaneScene::plane_features(Plane plane, int row, int col) {
  return std::span(params_).subspan(plane_index(plane, row, col), shape_.features);
}

std::span<const double> TriPlaneScene::plane_features(Plane plane, int row, int col) const {
  return std::span(params_).subspan(plane_index(plane, row, col), shape_.features);
}

void TriPlaneScene::save_checkpoint(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  io::write_magic(out, "EPGC");
  io::write_u32(out, static_cast<std::uint32_t>(shape_.plane_res));
  io::write_u32(out, static_cast<std::uint32_t>(shape_.features));
  io::write_u32(out, static_cast<std::uint32_t>(shape_.hidden));
  for (double p : params_) io::write_f32(out, static_cast<float>(p));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

TriPlaneScene TriPlaneScene::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  io::expect_magic(in, "EPGC");
  TriPlaneShape shape;
  shape.plane_res = static_cast<int>(io::read_u32(in));
  shape.features = static_cast<int>(io::read_u32(in));
  shape.hidden = static_cast<int>(io::read_u32(in));
  TriPlaneScene scene(shape);
  for (double& p : scene.params_) p = io::read_f32(in);
  if (in.peek() != std::char_traits<char>::eof()) throw InputError("trailing bytes in checkpoint: " + path.string());
  return scene;
}

TriPlaneStencil plane_stencil(const TriPlaneScene& scene, const Vec3& x) {
  const int res = scene.shape().plane_res;
  const auto [xi, xf] = axis_cell(x.x(), res);
  const auto [yi, yf] = axis_cell(x.y(), res);
  const auto [zi, zf] = axis_cell(x.z(), res);

  TriPlaneStencil st;
  // (plane, col cell, col frac, row cell, row frac)
  auto fill = [&](Plane plane, int ci, double cf, int ri, double rf) {
    const auto p = static_cast<std::size_t>(plane);
    st.index[p] = {scene.plane_index(plane, ri, ci), scene.plane_index(plane, ri, ci + 1),
                   scene.plane_index(plane, ri + 1, ci), scene.plane_index(plane, ri + 1, ci + 1)};
    st.weight[p] = {(1.0 - cf) * (1.0 - rf), cf * (1.0 - rf), (1.0 - cf) * rf, cf * rf};
  };
  fill(Plane::xy, xi, xf, yi, yf);
  fill(Plane::yz, yi, yf, zi, zf);
  fill(Plane::xz, xi, xf, zi, zf);
  return st;
}

namespace {

void accumulate_features(const TriPlaneScene& scene, const TriPlaneStencil& st, double* out) {
  const int f = scene.shape().features;
  const double* params = scene.parameters().data();
  for (int p = 0; p < 3; ++p) {
    for (int c = 0; c < 4; ++c) {
      const double w = st.weight[p][c];
      const double* node = params + st.index[p][c];
      for (int k = 0; k < f; ++k) out[k] += w * node[k];
    }
  }
}

}  // namespace

Eigen::VectorXd plane_features(const TriPlaneScene& scene, const Vec3& x) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(scene.shape().features);
  accumulate_features(scene, plane_stencil(scene, x), out.data());
  return out;
}

void decode_batch(const TriPlaneScene& scene, std::span<const Vec3> points, DecodeCache& cache,
                  std::span<FieldSample> out) {
  const auto& shape = scene.shape();
  const std::size_t n = points.size();
  const Eigen::Index cols = padded_columns(n);

  cache.stencils.resize(n);
  cache.features.setZero(shape.features, cols);
  for (std::size_t k = 0; k < n; ++k) {
    cache.stencils[k] = plane_stencil(scene, points[k]);
    accumulate_features(scene, cache.stencils[k], cache.features.col(static_cast<Eigen::Index>(k)).data());
  }

  cache.pre0.noalias() = scene.w0() * cache.features;
  cache.pre0.colwise() += scene.b0();
  cache.act0 = softplus_array(cache.pre0.array()).matrix();
  cache.pre1.noalias() = scene.w1() * cache.act0;
  cache.pre1.colwise() += scene.b1();
  cache.act1 = softplus_array(cache.pre1.array()).matrix();
  cache.raw.noalias() = scene.w2() * cache.act1;
  cache.raw.colwise() += scene.b2();

  const Eigen::ArrayXXd color = sigmoid_array(cache.raw.topRows<3>().array());
  const Eigen::ArrayXXd density = softplus_array(cache.raw.row(3).array());
  for (std::size_t k = 0; k < n; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    out[k].color = color.col(c).matrix();
    out[k].density = density(0, c);
  }
}

FieldSample decode(const TriPlaneScene& scene, const Vec3& x) {
  DecodeCache cache;
  FieldSample sample;
  decode_batch(scene, std::span(&x, 1), cache, std::span(&sample, 1));
  return sample;
}

void decode_backward_mlp(const TriPlaneScene& scene, const DecodeCache& cache,
                         std::span<const SampleGradient> upstream, std::span<double> mlp_grad,
                         Eigen::MatrixXd& feature_grad) {
  const auto& shape = scene.shape();
  const Eigen::Index cols = cache.raw.cols();
  if (upstream.size() != cache.size()) throw ContractViolation("upstream gradient count mismatch");
  if (mlp_grad.size() != scene.mlp_parameter_count()) throw ContractViolation("MLP gradient buffer size mismatch");

  // ∂L/∂raw; padded columns carry zero upstream.
  Eigen::MatrixXd d_raw = Eigen::MatrixXd::Zero(4, cols);
  for (std::size_t k = 0; k < upstream.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    for (int ch = 0; ch < 3; ++ch) {
      const double s = sigmoid(cache.raw(ch, c));
      d_raw(ch, c) = upstream[k].d_color[ch] * s * (1.0 - s);
    }
    d_raw(3, c) = upstream[k].d_density * sigmoid(cache.raw(3, c));
  }

  using MatrixMap = TriPlaneScene::MatrixMap;
  using RowMatrix = TriPlaneScene::RowMatrix;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  double* g = mlp_grad.data() - scene.mlp_offset();
  const int h = shape.hidden;

  // Products and row sums go through aligned temporaries: Eigen picks the
  // summation order from the destination's alignment, and mlp_grad may sit anywhere.
  MatrixMap(g + scene.w2_offset(), 4, h) += RowMatrix(d_raw * cache.act1.transpose());
  VectorMap(g + scene.b2_offset(), 4) += Eigen::VectorXd(d_raw.rowwise().sum());

  Eigen::MatrixXd d_pre1 = scene.w2().transpose() * d_raw;
  d_pre1.array() *= sigmoid_array(cache.pre1.array());
  MatrixMap(g + scene.w1_offset(), h, h) += RowMatrix(d_pre1 * cache.act0.transpose());
  VectorMap(g + scene.b1_offset(), h) += Eigen::VectorXd(d_pre1.rowwise().sum());

  Eigen::MatrixXd d_pre0 = scene.w1().transpose() * d_pre1;
  d_pre0.array() *= sigmoid_array(cache.pre0.array());
  MatrixMap(g + scene.w0_offset(), h, shape.features) += RowMatrix(d_pre0 * cache.features.transpose());
  VectorMap(g + scene.b0_offset(), h) += Eigen::VectorXd(d_pre0.rowwise().sum());

  feature_grad.noalias() = scene.w0().transpose() * d_pre0;
}

void scatter_plane_gradient(std::span<const TriPlaneStencil> stencils, const Eigen::MatrixXd& feature_grad,
                            int features, std::span<double> grad) {
  for (std::size_t k = 0; k < stencils.size(); ++k) {
    const double* df = feature_grad.col(static_cast<Eigen::Index>(k)).data();
    const auto& st = stencils[k];
    for (int p = 0; p < 3; ++p) {
      for (int c = 0; c < 4; ++c) {
        const double w = st.weight[p][c];
        if (w == 0.0) continue;
        double* node = grad.data() + st.index[p][c];
        for (int f = 0; f < features; ++f) node[f] += w * df[f];
      }
    }
  }
}

void decode_backward(const TriPlaneScene& scene, const Vec3& x, const SampleGradient& upstream,
                     std::span<double> grad) {
  DecodeCache cache;
  FieldSample sample;
  decode_batch(scene, std::span(&x, 1), cache, std::span(&sample, 1));
  Eigen::MatrixXd feature_grad;
  decode_backward_mlp(scene, cache, std::span(&upstream, 1), grad.subspan(scene.mlp_offset()), feature_grad);
  scatter_plane_gradient(cache.stencils, feature_grad, scene.shape().features, grad);
}

void TriPlaneField::evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const {
  thread_local std::vector<Vec3> inside;
  thread_local std::vector<std::size_t> slot;
  thread_local std::vector<FieldSample> decoded;
  thread_local DecodeCache cache;
  inside.clear();
  slot.clear();
  for (std::size_t k = 0; k < points.size(); ++k) {
    out[k] = FieldSample{};
    if (inside_scene_cube(points[k])) {
      inside.push_back(points[k]);
      slot.push_back(k);
    }
  }
  if (inside.empty()) return;
  decoded.resize(inside.size());
  decode_batch(scene_, inside, cache, decoded);
  for (std::size_t k = 0; k < slot.size(); ++k) out[slot[k]] = decoded[k];
}

std::vector<float> density_grid(const TriPlaneScene& scene, int resolution, int workers) {
  if (resolution < 2) throw ContractViolation("density grid resolution must be at least 2");
  const std::size_t n = resolution;
  std::vector<float> values(n * n * n);
  auto center = [&](std::size_t k) { return -1.0 + (2.0 * static_cast<double>(k) + 1.0) / resolution; };
  // One z-slice per work item; each row of x is a single decode batch.
  parallel_for(n, workers, [&](std::size_t z) {
    DecodeCache cache;
    std::vector<Vec3> points(n);
    std::vector<FieldSample> samples(n);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) points[x] = Vec3(center(x), center(y), center(z));
      decode_batch(scene, points, cache, samples);
      float* row = values.data() + (z * n + y) * n;
      for (std::size_t x = 0; x < n; ++x) row[x] = static_cast<float>(samples[x].density);
    }
  });
  return values;
}

void export_density_grid(const TriPlaneScene& scene, int resolution, const std::filesystem::path& path,
                         int workers) {
  const std::vector<float> values = density_grid(scene, resolution, workers);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open density grid for writing: " + path.string());
  io::write_magic(out, "EPGF");
  io::write_u32(out, static_cast<std::uint32_t>(resolution));
  io::write_u32(out, 1);
  io::write_u32(out, 0);
  for (float v : values) io::write_f32(out, v);
  if (!out) throw std::runtime_error("failed writing density grid: " + path.string());
}

DensityGrid read_density_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open density grid: " + path.string());
  io::expect_magic(in, "EPGF");
  DensityGrid grid;
  grid.resolution = static_cast<int>(io::read_u32(in));
  if (io::read_u32(in) != 1) throw InputError("density grid must have one channel");
  io::read_u32(in);
  const std::size_t n = grid.resolution;
  grid.values.resize(n * n * n);
  for (float& v : grid.values) v = io::read_f32(in);
  return grid;
}

}  // namespace epigraf
