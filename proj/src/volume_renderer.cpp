#include "epigraf/volume_renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "epigraf/parallel.hpp"

namespace epigraf {

BackgroundMode parse_background_mode(const std::string& name) {
  if (name == "white") return BackgroundMode::white;
  if (name == "black") return BackgroundMode::black;
  if (name == "nerfpp") return BackgroundMode::nerfpp;
  throw InputError("unknown background '" + name + "' (expected white, black or nerfpp)");
}

std::string to_string(BackgroundMode mode) {
  switch (mode) {
    case BackgroundMode::white: return "white";
    case BackgroundMode::black: return "black";
    case BackgroundMode::nerfpp: return "nerfpp";
  }
  return "white";
}

void RenderConfig::validate() const {
  if (n_coarse < 1) throw ContractViolation("n_coarse must be at least 1");
  if (n_fine < 0) throw ContractViolation("n_fine must be non-negative");
  if (background == BackgroundMode::nerfpp && n_background < 1) {
    throw ContractViolation("n_background must be at least 1 with the nerfpp background");
  }
}

Vec3 RenderConfig::background_color() const {
  return background == BackgroundMode::white ? Vec3::Ones() : Vec3::Zero();
}

std::vector<double> stratify(const Ray& ray, int n, bool jitter, RandomStream& rng) {
  if (n < 1) throw ContractViolation("stratify needs at least one sample");
  if (!(ray.t_near < ray.t_far)) throw ContractViolation("ray must satisfy t_near < t_far");
  std::vector<double> depths(n);
  const double width = (ray.t_far - ray.t_near) / n;
  for (int k = 0; k < n; ++k) {
    const double offset = jitter ? rng.uniform() : 0.5;
    depths[k] = ray.t_near + (k + offset) * width;
  }
  return depths;
}

CompositeResult composite(std::span<const FieldSample> samples, std::span<const double> depths, double t_far,
                          const Vec3& background_color) {
  if (samples.size() != depths.size()) throw ContractViolation("composite: samples and depths differ in length");
  CompositeResult result;
  result.weights.resize(samples.size());
  double transmittance = 1.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double next = i + 1 < depths.size() ? depths[i + 1] : t_far;
    const double delta = next - depths[i];
    if (delta < 0.0) throw ContractViolation("composite: depths must be non-decreasing and below t_far");
    const double alpha = 1.0 - std::exp(-samples[i].density * delta);
    const double weight = transmittance * alpha;
    result.weights[i] = weight;
    result.color += weight * samples[i].color;
    transmittance *= 1.0 - alpha;
  }
  result.transmittance = transmittance;
  result.color += transmittance * background_color;
  return result;
}

std::vector<double> importance_resample(std::span<const double> coarse_depths, std::span<const double> weights,
                                        double t_near, double t_far, int n_fine, bool jitter, RandomStream& rng) {
  const std::size_t n = coarse_depths.size();
  if (n == 0 || weights.size() != n) throw ContractViolation("importance_resample: bad coarse sample count");
  std::vector<double> merged(coarse_depths.begin(), coarse_depths.end());
  if (n_fine <= 0) return merged;

  std::vector<double> edges(n + 1);
  edges[0] = t_near;
  edges[n] = t_far;
  for (std::size_t k = 1; k < n; ++k) edges[k] = 0.5 * (coarse_depths[k - 1] + coarse_depths[k]);

  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (weights[k] < 0.0) throw ContractViolation("importance_resample: negative weight");
    cdf[k + 1] = cdf[k] + weights[k] + kResampleWeightFloor;
  }
  const double total = cdf[n];

  std::vector<double> quantiles(n_fine);
  for (int k = 0; k < n_fine; ++k) quantiles[k] = jitter ? rng.uniform() : (k + 0.5) / n_fine;
  std::sort(quantiles.begin(), quantiles.end());

  merged.reserve(n + n_fine);
  std::size_t bin = 0;
  for (double q : quantiles) {
    const double target = q * total;
    while (bin + 1 < n && cdf[bin + 1] <= target) ++bin;
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = std::clamp((target - cdf[bin]) / mass, 0.0, 1.0);
    merged.push_back(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
  }
  std::sort(merged.begin(), merged.end());
  return merged;
}

Eigen::Vector4d inverse_sphere_param(const Vec3& x) {
  const double r = x.norm();
  if (!(r > 1.0)) throw ContractViolation("inverse_sphere_param requires |x| > 1");
  Eigen::Vector4d out;
  out.head<3>() = x / r;
  out[3] = 1.0 / r;
  return out;
}

namespace {

constexpr int kBackgroundLayers = 4;

double leaky_relu(double x) { return x > 0.0 ? x : 0.2 * x; }

}  // namespace

BackgroundField::BackgroundField(int hidden) : hidden_(hidden) {
  if (hidden < 1) throw ContractViolation("background hidden width must be positive");
  const std::size_t h = hidden;
  // 4→H, H→H, H→H, H→4; weights row-major followed by biases.
  params_.assign((4 * h + h) + 2 * (h * h + h) + (4 * h + 4), 0.0);
}

BackgroundField BackgroundField::random(int hidden, std::uint64_t seed) {
  BackgroundField field(hidden);
  RandomStream rng(seed);
  const int dims[kBackgroundLayers + 1] = {4, hidden, hidden, hidden, 4};
  std::size_t offset = 0;
  for (int l = 0; l < kBackgroundLayers; ++l) {
    const double stddev = std::sqrt(2.0 / dims[l]);
    for (int k = 0; k < dims[l] * dims[l + 1]; ++k) field.params_[offset++] = stddev * rng.normal();
    offset += dims[l + 1];
  }
  return field;
}

FieldSample BackgroundField::evaluate(const Eigen::Vector4d& coords) const {
  const int dims[kBackgroundLayers + 1] = {4, hidden_, hidden_, hidden_, 4};
  Eigen::VectorXd act = coords;
  std::size_t offset = 0;
  for (int l = 0; l < kBackgroundLayers; ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
        params_.data() + offset, out, in);
    offset += static_cast<std::size_t>(in) * out;
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + offset, out);
    offset += out;
    Eigen::VectorXd next = w * act + b;
    if (l + 1 < kBackgroundLayers) next = next.unaryExpr(&leaky_relu);
    act = std::move(next);
  }
  FieldSample sample;
  for (int c = 0; c < 3; ++c) sample.color[c] = sigmoid(act[c]);
  sample.density = softplus(act[3]);
  return sample;
}

Vec3 render_background(const BackgroundField& bg, const Ray& ray, int n, bool jitter, RandomStream& rng) {
  if (n < 1) throw ContractViolation("render_background needs at least one sample");
  // Inverse radii in (0, 1), descending, so depths along the ray ascend.
  std::vector<double> inv_radius(n);
  for (int k = 0; k < n; ++k) {
    const double offset = jitter ? rng.uniform() : 0.5;
    inv_radius[k] = 1.0 - (k + offset) / n;
  }
  const double od = ray.origin.dot(ray.direction);
  const double oo = ray.origin.squaredNorm();

  std::vector<double> depths;
  std::vector<FieldSample> samples;
  for (double inv_r : inv_radius) {
    if (inv_r <= 0.0 || inv_r >= 1.0) continue;
    const double r = 1.0 / inv_r;
    const double disc = od * od - oo + r * r;
    if (disc < 0.0) continue;  // the ray never reaches this radius
    const double t = -od + std::sqrt(disc);
    if (t <= 0.0) continue;
    depths.push_back(t);
    Eigen::Vector4d coords;
    coords.head<3>() = ray.at(t).normalized();
    coords[3] = inv_r;
    samples.push_back(bg.evaluate(coords));
  }

  Vec3 color = Vec3::Zero();
  double transmittance = 1.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool last = i + 1 == samples.size();
    const double alpha = last ? 1.0 : 1.0 - std::exp(-samples[i].density * (depths[i + 1] - depths[i]));
    color += transmittance * alpha * samples[i].color;
    transmittance *= 1.0 - alpha;
  }
  return color;
}

Vec3 render_ray(const RadianceField& field, const Ray& ray, const RenderConfig& cfg, const BackgroundField* bg,
                RandomStream& rng) {
  const std::vector<double> coarse = stratify(ray, cfg.n_coarse, cfg.stratified_jitter, rng);
  std::vector<Vec3> points(coarse.size());
  std::vector<FieldSample> samples(coarse.size());
  for (std::size_t k = 0; k < coarse.size(); ++k) points[k] = ray.at(coarse[k]);
  field.evaluate(points, samples);

  std::vector<double> depths = coarse;
  if (cfg.n_fine > 0) {
    const CompositeResult coarse_pass = composite(samples, coarse, ray.t_far, Vec3::Zero());
    depths = importance_resample(coarse, coarse_pass.weights, ray.t_near, ray.t_far, cfg.n_fine,
                                 cfg.stratified_jitter, rng);
    points.resize(depths.size());
    samples.resize(depths.size());
    for (std::size_t k = 0; k < depths.size(); ++k) points[k] = ray.at(depths[k]);
    field.evaluate(points, samples);
  }

  if (cfg.background == BackgroundMode::nerfpp) {
    const CompositeResult fg = composite(samples, depths, ray.t_far, Vec3::Zero());
    if (bg == nullptr) throw ContractViolation("nerfpp background requires a BackgroundField");
    return fg.color + fg.transmittance * render_background(*bg, ray, cfg.n_background, cfg.stratified_jitter, rng);
  }
  return composite(samples, depths, ray.t_far, cfg.background_color()).color;
}

Image render_rays(const RadianceField& field, const RayGrid& rays, const RenderConfig& cfg,
                  const BackgroundField* bg, std::uint64_t seed, int workers) {
  cfg.validate();
  const int res = rays.resolution;
  Image image(res, res, 3);
  parallel_for(rays.rays.size(), workers, [&](std::size_t k) {
    RandomStream rng = RandomStream::substream(seed, k);
    const Vec3 c = render_ray(field, rays.rays[k], cfg, bg, rng);
    for (int ch = 0; ch < 3; ++ch) image.data[k * 3 + ch] = c[ch];
  });
  return image;
}

Image render_patch(const RadianceField& field, const CameraPose& pose, const PatchSpec& spec,
                   const RenderConfig& cfg, const BackgroundField* bg, std::uint64_t seed, int workers) {
  return render_rays(field, patch_rays(pose, spec), cfg, bg, seed, workers);
}

Image render_image(const RadianceField& field, const CameraPose& pose, int resolution, const RenderConfig& cfg,
                   const BackgroundField* bg, std::uint64_t seed, int workers) {
  return render_rays(field, image_rays(pose, resolution), cfg, bg, seed, workers);
}

Vec3 render_ray_recorded(const TriPlaneScene& scene, const Ray& ray, const RenderConfig& cfg, RandomStream& rng,
                         RayTape& tape) {
  if (cfg.background == BackgroundMode::nerfpp) {
    throw ContractViolation("differentiable rendering supports constant backgrounds only");
  }
  const TriPlaneField field(scene);
  const std::vector<double> coarse = stratify(ray, cfg.n_coarse, cfg.stratified_jitter, rng);
  if (cfg.n_fine > 0) {
    std::vector<Vec3> points(coarse.size());
    std::vector<FieldSample> samples(coarse.size());
    for (std::size_t k = 0; k < coarse.size(); ++k) points[k] = ray.at(coarse[k]);
    field.evaluate(points, samples);
    const CompositeResult coarse_pass = composite(samples, coarse, ray.t_far, Vec3::Zero());
    tape.depths = importance_resample(coarse, coarse_pass.weights, ray.t_near, ray.t_far, cfg.n_fine,
                                      cfg.stratified_jitter, rng);
  } else {
    tape.depths = coarse;
  }

  const std::size_t n = tape.depths.size();
  tape.samples.assign(n, FieldSample{});
  tape.decoded.clear();
  tape.points.clear();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 x = ray.at(tape.depths[k]);
    if (inside_scene_cube(x)) {
      tape.decoded.push_back(k);
      tape.points.push_back(x);
    }
  }
  std::vector<FieldSample> decoded(tape.points.size());
  if (!decoded.empty()) decode_batch(scene, tape.points, tape.cache, decoded);
  for (std::size_t k = 0; k < decoded.size(); ++k) tape.samples[tape.decoded[k]] = decoded[k];

  tape.t_far = ray.t_far;
  tape.background = cfg.background_color();
  tape.result = composite(tape.samples, tape.depths, tape.t_far, tape.background);
  return tape.result.color;
}

void backprop_ray(const TriPlaneScene& scene, const RayTape& tape, const Vec3& d_color, std::span<double> mlp_grad,
                  Eigen::MatrixXd& feature_grad) {
  const std::size_t n = tape.depths.size();
  if (tape.decoded.empty()) {
    feature_grad.resize(scene.shape().features, 0);
    return;
  }
  // With S_i = Σ_{k>i} w_k c_k + T_N·bg (radiance arriving from behind sample i):
  //   ∂C/∂c_i = w_i,   ∂C/∂σ_i = Δ_i (T_{i+1} c_i − S_i).
  std::vector<double> behind(n);
  double acc = tape.result.transmittance * d_color.dot(tape.background);
  for (std::size_t i = n; i-- > 0;) {
    behind[i] = acc;
    acc += tape.result.weights[i] * d_color.dot(tape.samples[i].color);
  }

  std::vector<SampleGradient> upstream(tape.decoded.size());
  double transmittance = 1.0;
  std::size_t next_decoded = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double next = i + 1 < n ? tape.depths[i + 1] : tape.t_far;
    const double delta = next - tape.depths[i];
    const double after = transmittance * std::exp(-tape.samples[i].density * delta);
    if (next_decoded < tape.decoded.size() && tape.decoded[next_decoded] == i) {
      SampleGradient& g = upstream[next_decoded++];
      g.d_color = tape.result.weights[i] * d_color;
      g.d_density = delta * (after * d_color.dot(tape.samples[i].color) - behind[i]);
    }
    transmittance = after;
  }
  decode_backward_mlp(scene, tape.cache, upstream, mlp_grad, feature_grad);
}

}  // namespace epigraf
