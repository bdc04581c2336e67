#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace epigraf {

/// Channel-major (C, H, W) activation tensor.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

/// Convolution weights W ∈ R^{c_out × c_in × k × k} with an optional bias.
template <typename T>
struct ConvLayer {
  int c_out = 0;
  int c_in = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  std::vector<T> weights;
  std::vector<T> bias;  // empty: no bias

  void validate() const;
  T& weight(int o, int i, int ky, int kx) {
    return weights[((static_cast<std::size_t>(o) * c_in + i) * kernel + ky) * kernel + kx];
  }
  T weight(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * c_in + i) * kernel + ky) * kernel + kx];
  }

  /// Weights ~ U(-1, 1)/sqrt(c_in·k²), "same" padding, optional bias ~ U(-0.1, 0.1).
  static ConvLayer random(int c_out, int c_in, int kernel, bool with_bias, std::uint64_t seed);
};

template <typename T>
Tensor3<T> conv2d(const ConvLayer<T>& layer, const Tensor3<T>& x);

/// y = conv2d(W ⊙ σ, x) + b, σ broadcast over (c_in, k, k).
template <typename T>
Tensor3<T> conv_weight_modulated(const ConvLayer<T>& layer, const Tensor3<T>& x, std::span<const T> gains);

/// y = σ ⊙ conv2d(W, x) + b.
template <typename T>
Tensor3<T> conv_output_modulated(const ConvLayer<T>& layer, const Tensor3<T>& x, std::span<const T> gains);

/// Per-scalar Fourier features of (s, δx, δy): for each scalar v the block
/// [v, sin(2^0 π v), cos(2^0 π v), …, sin(2^{L-1} π v), cos(2^{L-1} π v)],
/// giving 3·(2L + 1) dimensions.
Eigen::VectorXd encode_patch_params(double s, double offset_x, double offset_y, int frequencies);

struct ModulationNetConfig {
  int fourier_freqs = 8;
  int embedding_dim = 512;          // d_p
  std::vector<int> layer_channels;  // c_out of each modulated layer
};

/// Hypernetwork mapping patch parameters to per-layer channel gains:
/// Fourier encoding → two linear layers with LeakyReLU(0.2) → p ∈ R^{d_p},
/// then σ_ℓ = tanh(W_ℓ p + b_ℓ) + 1 per modulated layer.
class ModulationNet {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// Zero adapters (identity modulation) and He-initialized embedding MLP.
  ModulationNet(const ModulationNetConfig& cfg, std::uint64_t seed);

  /// Also draws adapter weights ~ N(0, adapter_std²/d_p) and biases ~ N(0, adapter_std²).
  static ModulationNet random(const ModulationNetConfig& cfg, std::uint64_t seed, double adapter_std = 1.0);

  const ModulationNetConfig& config() const { return cfg_; }
  int layer_count() const { return static_cast<int>(cfg_.layer_channels.size()); }
  int input_dim() const { return 3 * (2 * cfg_.fourier_freqs + 1); }

  Eigen::VectorXd embedding(double s, double offset_x, double offset_y) const;
  std::vector<Eigen::VectorXd> forward(double s, double offset_x, double offset_y) const;

  RowMatrix& adapter_weight(int layer) { return adapter_w_.at(layer); }
  Eigen::VectorXd& adapter_bias(int layer) { return adapter_b_.at(layer); }

 private:
  ModulationNetConfig cfg_;
  RowMatrix w0_, w1_;
  Eigen::VectorXd b0_, b1_;
  std::vector<RowMatrix> adapter_w_;
  std::vector<Eigen::VectorXd> adapter_b_;
};

/// tanh(a) + 1 kept strictly inside (0, 2) even where tanh rounds to ±1.
double gain_from_activation(double a);

std::vector<Eigen::VectorXd> hyper_forward(const ModulationNet& net, double s, double offset_x, double offset_y);

/// Gains of one layer over a scale grid (offsets centered at (1 - s)/2):
/// rows = scales, columns = filters.
struct ModulationProfile {
  int layer = 0;
  std::vector<double> scales;
  Eigen::MatrixXd gains;
};

std::vector<ModulationProfile> dump_modulation_profile(const ModulationNet& net, std::span<const double> scale_grid,
                                                       std::span<const int> layers);

void write_modulation_profile_csv(const ModulationProfile& profile, const std::filesystem::path& path);

/// Filters whose gain stays above 1.5 (on), below 0.5 (off), or whose range
/// across scales exceeds 0.5 (scale-dependent); the rest are neutral.
struct FilterClassification {
  int always_on = 0;
  int always_off = 0;
  int scale_dependent = 0;
  int neutral = 0;
};

FilterClassification classify_filters(const ModulationProfile& profile);

struct EquivalenceCase {
  int c_in = 0;
  int c_out = 0;
  int kernel = 0;
  double max_abs_diff = 0.0;
};

/// Compares the weight- and output-modulated convolutions for c_in, c_out ∈
/// {1, 3, 16} and k ∈ {1, 3} on random inputs with hypernetwork-produced gains.
template <typename T>
std::vector<EquivalenceCase> modulation_equivalence_sweep(std::uint64_t seed);

}  // namespace epigraf
