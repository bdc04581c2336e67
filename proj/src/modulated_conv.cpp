#include "epigraf/modulated_conv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "epigraf/geometry.hpp"
#include "epigraf/random.hpp"

namespace epigraf {

template <typename T>
void ConvLayer<T>::validate() const {
  if (c_out < 1 || c_in < 1) throw InputError("conv layer needs positive channel counts");
  if (kernel < 1 || kernel % 2 == 0) throw InputError("conv kernel size must be odd");
  if (stride < 1 || padding < 0) throw InputError("conv stride must be positive and padding non-negative");
  if (weights.size() != static_cast<std::size_t>(c_out) * c_in * kernel * kernel) {
    throw InputError("conv weight tensor has the wrong size");
  }
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(c_out)) throw InputError("conv bias has the wrong size");
}

template <typename T>
ConvLayer<T> ConvLayer<T>::random(int c_out, int c_in, int kernel, bool with_bias, std::uint64_t seed) {
  ConvLayer layer;
  layer.c_out = c_out;
  layer.c_in = c_in;
  layer.kernel = kernel;
  layer.padding = kernel / 2;
  layer.weights.resize(static_cast<std::size_t>(c_out) * c_in * kernel * kernel);
  RandomStream rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(c_in) * kernel * kernel);
  for (T& w : layer.weights) w = static_cast<T>(rng.uniform(-1.0, 1.0) * scale);
  if (with_bias) {
    layer.bias.resize(c_out);
    for (T& b : layer.bias) b = static_cast<T>(rng.uniform(-0.1, 0.1));
  }
  return layer;
}

namespace {

template <typename T>
Tensor3<T> convolve(const ConvLayer<T>& layer, const Tensor3<T>& x) {
  layer.validate();
  if (x.channels != layer.c_in) throw InputError("conv input channel count does not match the layer");
  const int out_h = (x.height + 2 * layer.padding - layer.kernel) / layer.stride + 1;
  const int out_w = (x.width + 2 * layer.padding - layer.kernel) / layer.stride + 1;
  if (out_h < 1 || out_w < 1) throw InputError("conv input is smaller than the kernel");
  Tensor3<T> y(layer.c_out, out_h, out_w);
  for (int o = 0; o < layer.c_out; ++o) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        T acc = T(0);
        for (int i = 0; i < layer.c_in; ++i) {
          for (int ky = 0; ky < layer.kernel; ++ky) {
            const int iy = oy * layer.stride + ky - layer.padding;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < layer.kernel; ++kx) {
              const int ix = ox * layer.stride + kx - layer.padding;
              if (ix < 0 || ix >= x.width) continue;
              acc += layer.weight(o, i, ky, kx) * x.at(i, iy, ix);
            }
          }
        }
        y.at(o, oy, ox) = acc;
      }
    }
  }
  return y;
}

template <typename T>
void add_bias(const ConvLayer<T>& layer, Tensor3<T>& y) {
  if (layer.bias.empty()) return;
  const std::size_t plane = static_cast<std::size_t>(y.height) * y.width;
  for (int o = 0; o < y.channels; ++o) {
    for (std::size_t k = 0; k < plane; ++k) y.data[o * plane + k] += layer.bias[o];
  }
}

template <typename T>
void check_gains(const ConvLayer<T>& layer, std::span<const T> gains) {
  if (gains.size() != static_cast<std::size_t>(layer.c_out)) {
    throw InputError("modulation gain count must equal the layer's output channels");
  }
}

}  // namespace

template <typename T>
Tensor3<T> conv2d(const ConvLayer<T>& layer, const Tensor3<T>& x) {
  Tensor3<T> y = convolve(layer, x);
  add_bias(layer, y);
  return y;
}

template <typename T>
Tensor3<T> conv_weight_modulated(const ConvLayer<T>& layer, const Tensor3<T>& x, std::span<const T> gains) {
  check_gains(layer, gains);
  ConvLayer<T> modulated = layer;
  const std::size_t per_filter = static_cast<std::size_t>(layer.c_in) * layer.kernel * layer.kernel;
  for (int o = 0; o < layer.c_out; ++o) {
    for (std::size_t k = 0; k < per_filter; ++k) modulated.weights[o * per_filter + k] *= gains[o];
  }
  Tensor3<T> y = convolve(modulated, x);
  add_bias(layer, y);
  return y;
}

template <typename T>
Tensor3<T> conv_output_modulated(const ConvLayer<T>& layer, const Tensor3<T>& x, std::span<const T> gains) {
  check_gains(layer, gains);
  Tensor3<T> y = convolve(layer, x);
  const std::size_t plane = static_cast<std::size_t>(y.height) * y.width;
  for (int o = 0; o < y.channels; ++o) {
    for (std::size_t k = 0; k < plane; ++k) y.data[o * plane + k] *= gains[o];
  }
  add_bias(layer, y);
  return y;
}

Eigen::VectorXd encode_patch_params(double s, double offset_x, double offset_y, int frequencies) {
  if (frequencies < 0) throw ContractViolation("frequency count must be non-negative");
  const int block = 2 * frequencies + 1;
  Eigen::VectorXd out(3 * block);
  const double values[3] = {s, offset_x, offset_y};
  for (int v = 0; v < 3; ++v) {
    out[v * block] = values[v];
    double freq = std::numbers::pi;
    for (int k = 0; k < frequencies; ++k, freq *= 2.0) {
      out[v * block + 1 + 2 * k] = std::sin(freq * values[v]);
      out[v * block + 2 + 2 * k] = std::cos(freq * values[v]);
    }
  }
  return out;
}

double gain_from_activation(double a) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(2.0, 0.0);
  return std::clamp(std::tanh(a) + 1.0, lo, hi);
}

namespace {

void fill_normal(ModulationNet::RowMatrix& m, double stddev, RandomStream& rng) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = stddev * rng.normal();
}

}  // namespace

ModulationNet::ModulationNet(const ModulationNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.fourier_freqs < 0 || cfg.embedding_dim < 1) throw ContractViolation("invalid modulation net config");
  for (int c : cfg.layer_channels) {
    if (c < 1) throw ContractViolation("modulated layers need at least one channel");
  }
  RandomStream rng(seed);
  const int in = input_dim();
  const int dp = cfg.embedding_dim;
  w0_.resize(dp, in);
  w1_.resize(dp, dp);
  fill_normal(w0_, std::sqrt(2.0 / in), rng);
  fill_normal(w1_, std::sqrt(2.0 / dp), rng);
  b0_ = Eigen::VectorXd::Zero(dp);
  b1_ = Eigen::VectorXd::Zero(dp);
  for (int c : cfg.layer_channels) {
    adapter_w_.push_back(RowMatrix::Zero(c, dp));
    adapter_b_.push_back(Eigen::VectorXd::Zero(c));
  }
}

ModulationNet ModulationNet::random(const ModulationNetConfig& cfg, std::uint64_t seed, double adapter_std) {
  ModulationNet net(cfg, seed);
  RandomStream rng(mix64(seed + 1));
  for (int l = 0; l < net.layer_count(); ++l) {
    fill_normal(net.adapter_w_[l], adapter_std / std::sqrt(static_cast<double>(cfg.embedding_dim)), rng);
    for (Eigen::Index k = 0; k < net.adapter_b_[l].size(); ++k) net.adapter_b_[l][k] = adapter_std * rng.normal();
  }
  return net;
}

Eigen::VectorXd ModulationNet::embedding(double s, double offset_x, double offset_y) const {
  auto leaky = [](double v) { return v > 0.0 ? v : 0.2 * v; };
  const Eigen::VectorXd enc = encode_patch_params(s, offset_x, offset_y, cfg_.fourier_freqs);
  const Eigen::VectorXd h = (w0_ * enc + b0_).unaryExpr(leaky);
  return (w1_ * h + b1_).unaryExpr(leaky);
}

std::vector<Eigen::VectorXd> ModulationNet::forward(double s, double offset_x, double offset_y) const {
  const Eigen::VectorXd p = embedding(s, offset_x, offset_y);
  std::vector<Eigen::VectorXd> gains;
  gains.reserve(adapter_w_.size());
  for (std::size_t l = 0; l < adapter_w_.size(); ++l) {
    gains.push_back((adapter_w_[l] * p + adapter_b_[l]).unaryExpr(&gain_from_activation));
  }
  return gains;
}

std::vector<Eigen::VectorXd> hyper_forward(const ModulationNet& net, double s, double offset_x, double offset_y) {
  return net.forward(s, offset_x, offset_y);
}

std::vector<ModulationProfile> dump_modulation_profile(const ModulationNet& net, std::span<const double> scale_grid,
                                                       std::span<const int> layers) {
  for (int l : layers) {
    if (l < 0 || l >= net.layer_count()) throw InputError("modulation profile: layer index out of range");
  }
  std::vector<ModulationProfile> profiles;
  for (int l : layers) {
    ModulationProfile profile;
    profile.layer = l;
    profile.scales.assign(scale_grid.begin(), scale_grid.end());
    profile.gains.resize(static_cast<Eigen::Index>(scale_grid.size()), net.config().layer_channels[l]);
    profiles.push_back(std::move(profile));
  }
  for (std::size_t row = 0; row < scale_grid.size(); ++row) {
    const double s = scale_grid[row];
    const double offset = 0.5 * (1.0 - s);
    const auto gains = net.forward(s, offset, offset);
    for (auto& profile : profiles) profile.gains.row(static_cast<Eigen::Index>(row)) = gains[profile.layer].transpose();
  }
  return profiles;
}

void write_modulation_profile_csv(const ModulationProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.precision(17);
  out << "s";
  for (Eigen::Index f = 0; f < profile.gains.cols(); ++f) out << ",filter_" << f;
  out << '\n';
  for (Eigen::Index r = 0; r < profile.gains.rows(); ++r) {
    out << profile.scales[static_cast<std::size_t>(r)];
    for (Eigen::Index f = 0; f < profile.gains.cols(); ++f) out << ',' << profile.gains(r, f);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FilterClassification classify_filters(const ModulationProfile& profile) {
  FilterClassification counts;
  for (Eigen::Index f = 0; f < profile.gains.cols(); ++f) {
    const double lo = profile.gains.col(f).minCoeff();
    const double hi = profile.gains.col(f).maxCoeff();
    if (lo > 1.5) {
      ++counts.always_on;
    } else if (hi < 0.5) {
      ++counts.always_off;
    } else if (hi - lo > 0.5) {
      ++counts.scale_dependent;
    } else {
      ++counts.neutral;
    }
  }
  return counts;
}

template <typename T>
std::vector<EquivalenceCase> modulation_equivalence_sweep(std::uint64_t seed) {
  constexpr int kSpatial = 8;
  const int channel_options[] = {1, 3, 16};
  const int kernel_options[] = {1, 3};
  std::vector<EquivalenceCase> cases;
  RandomStream rng(seed);
  for (int c_in : channel_options) {
    for (int c_out : channel_options) {
      for (int k : kernel_options) {
        const auto layer = ConvLayer<T>::random(c_out, c_in, k, true, rng.next_u64());
        Tensor3<T> x(c_in, kSpatial, kSpatial);
        for (T& v : x.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));

        ModulationNetConfig net_cfg;
        net_cfg.embedding_dim = 64;
        net_cfg.layer_channels = {c_out};
        const auto net = ModulationNet::random(net_cfg, rng.next_u64());
        const double s = rng.uniform(0.125, 1.0);
        const auto gains_d = net.forward(s, rng.uniform(0.0, 1.0 - s), rng.uniform(0.0, 1.0 - s))[0];
        std::vector<T> gains(gains_d.size());
        for (Eigen::Index o = 0; o < gains_d.size(); ++o) gains[o] = static_cast<T>(gains_d[o]);

        const Tensor3<T> a = conv_weight_modulated<T>(layer, x, gains);
        const Tensor3<T> b = conv_output_modulated<T>(layer, x, gains);
        double diff = 0.0;
        for (std::size_t q = 0; q < a.data.size(); ++q) {
          diff = std::max(diff, std::abs(static_cast<double>(a.data[q]) - static_cast<double>(b.data[q])));
        }
        cases.push_back({c_in, c_out, k, diff});
      }
    }
  }
  return cases;
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template Tensor3<float> conv2d(const ConvLayer<float>&, const Tensor3<float>&);
template Tensor3<double> conv2d(const ConvLayer<double>&, const Tensor3<double>&);
template Tensor3<float> conv_weight_modulated(const ConvLayer<float>&, const Tensor3<float>&, std::span<const float>);
template Tensor3<double> conv_weight_modulated(const ConvLayer<double>&, const Tensor3<double>&,
                                               std::span<const double>);
template Tensor3<float> conv_output_modulated(const ConvLayer<float>&, const Tensor3<float>&, std::span<const float>);
template Tensor3<double> conv_output_modulated(const ConvLayer<double>&, const Tensor3<double>&,
                                               std::span<const double>);
template std::vector<EquivalenceCase> modulation_equivalence_sweep<float>(std::uint64_t);
template std::vector<EquivalenceCase> modulation_equivalence_sweep<double>(std::uint64_t);

}  // namespace epigraf
