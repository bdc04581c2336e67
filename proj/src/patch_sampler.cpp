#include "epigraf/patch_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace epigraf {

namespace {

double lerp(double a, double b, double alpha) { return (1.0 - alpha) * a + alpha * b; }

}  // namespace

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "beta" || name == "beta_annealed") return ScheduleKind::beta_annealed;
  if (name == "uniform" || name == "uniform_annealed") return ScheduleKind::uniform_annealed;
  throw InputError("unknown schedule kind '" + name + "' (expected beta_annealed or uniform_annealed)");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::beta_annealed ? "beta_annealed" : "uniform_annealed";
}

void ScheduleConfig::validate() const {
  if (total_iters <= 0) throw ContractViolation("schedule total_iters must be positive");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end <= 1.0)) {
    throw ContractViolation("schedule requires 0 < beta_start <= beta_end <= 1");
  }
  if (patch_res <= 0 || full_res <= 0 || patch_res > full_res) {
    throw ContractViolation("schedule requires 0 < patch_res <= full_res");
  }
  if (!(uniform_start >= min_scale() && uniform_start <= 1.0)) {
    throw ContractViolation("schedule uniform_start must lie in [r/R, 1]");
  }
}

double schedule_progress(const ScheduleConfig& cfg, std::int64_t t) {
  if (t < 0) throw ContractViolation("iteration must be non-negative");
  return std::min(static_cast<double>(t) / static_cast<double>(cfg.total_iters), 1.0);
}

double beta_param_at(const ScheduleConfig& cfg, std::int64_t t) {
  return lerp(cfg.beta_start, cfg.beta_end, schedule_progress(cfg, t));
}

double uniform_min_scale_at(const ScheduleConfig& cfg, std::int64_t t) {
  return lerp(cfg.uniform_start, cfg.min_scale(), schedule_progress(cfg, t));
}

double beta1_pdf(double beta, double x) {
  if (x < 0.0 || x > 1.0) return 0.0;
  return beta * std::pow(1.0 - x, beta - 1.0);
}

double beta1_cdf(double beta, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return 1.0 - std::pow(1.0 - x, beta);
}

double sample_scale(const ScheduleConfig& cfg, std::int64_t t, RandomStream& rng) {
  const double min_scale = cfg.min_scale();
  const double u = rng.uniform();
  double s;
  if (cfg.kind == ScheduleKind::beta_annealed) {
    const double beta = beta_param_at(cfg, t);
    const double x = 1.0 - std::pow(1.0 - u, 1.0 / beta);
    s = x * (1.0 - min_scale) + min_scale;
  } else {
    const double lo = uniform_min_scale_at(cfg, t);
    s = lo + (1.0 - lo) * u;
  }
  return std::clamp(s, min_scale, 1.0);
}

double scale_pdf(const ScheduleConfig& cfg, std::int64_t t, double s) {
  const double min_scale = cfg.min_scale();
  if (cfg.kind == ScheduleKind::beta_annealed) {
    if (s < min_scale || s > 1.0) return 0.0;
    if (min_scale >= 1.0) return std::numeric_limits<double>::infinity();
    const double x = (s - min_scale) / (1.0 - min_scale);
    return beta1_pdf(beta_param_at(cfg, t), x) / (1.0 - min_scale);
  }
  const double lo = uniform_min_scale_at(cfg, t);
  if (s < lo || s > 1.0) return 0.0;
  if (lo >= 1.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - lo);
}

double scale_cdf(const ScheduleConfig& cfg, std::int64_t t, double s) {
  const double min_scale = cfg.min_scale();
  if (cfg.kind == ScheduleKind::beta_annealed) {
    if (min_scale >= 1.0) return s >= 1.0 ? 1.0 : 0.0;
    return beta1_cdf(beta_param_at(cfg, t), (s - min_scale) / (1.0 - min_scale));
  }
  const double lo = uniform_min_scale_at(cfg, t);
  if (s >= 1.0) return 1.0;
  if (s <= lo) return 0.0;
  return (s - lo) / (1.0 - lo);
}

Offsets sample_offsets(double s, RandomStream& rng) {
  if (!(s > 0.0 && s <= 1.0)) throw ContractViolation("scale must lie in (0, 1]");
  const double extent = 1.0 - s;
  const double dx = rng.uniform() * extent;
  const double dy = rng.uniform() * extent;
  return {dx, dy};
}

PatchSpec sample_patch(const ScheduleConfig& cfg, std::int64_t t, RandomStream& rng) {
  PatchSpec spec;
  spec.patch_res = cfg.patch_res;
  spec.full_res = cfg.full_res;
  spec.scale = sample_scale(cfg, t, rng);
  const Offsets offsets = sample_offsets(spec.scale, rng);
  spec.offset_x = offsets.x;
  spec.offset_y = offsets.y;
  return spec;
}

Image extract_patch(const Image& image, const PatchSpec& spec, PatchFilter filter) {
  if (image.empty() || image.width <= 0 || image.channels <= 0) throw InputError("extract_patch: empty image");
  if (image.width != image.height) throw InputError("extract_patch: image must be square");
  spec.validate();
  const int full = image.width;
  const int r = spec.patch_res;
  Image patch(r, r, image.channels);

  if (filter == PatchFilter::nearest) {
    for (int j = 0; j < r; ++j) {
      for (int i = 0; i < r; ++i) {
        const NdcPoint p = patch_pixel_to_ndc(spec, i, j);
        const int sx = std::clamp(static_cast<int>(std::floor(p.u * full)), 0, full - 1);
        const int sy = std::clamp(static_cast<int>(std::floor(p.v * full)), 0, full - 1);
        for (int c = 0; c < image.channels; ++c) patch.at(i, j, c) = image.at(sx, sy, c);
      }
    }
    return patch;
  }

  // Box filter: weight each source pixel by its overlap with the footprint
  // [δ + s·i/r, δ + s·(i+1)/r] (in source pixel units) along each axis.
  auto footprint = [&](double offset, int idx, std::vector<std::pair<int, double>>& taps) {
    taps.clear();
    const double lo = (offset + spec.scale * idx / r) * full;
    const double hi = (offset + spec.scale * (idx + 1) / r) * full;
    const int first = std::clamp(static_cast<int>(std::floor(lo)), 0, full - 1);
    const int last = std::clamp(static_cast<int>(std::ceil(hi)) - 1, 0, full - 1);
    double total = 0.0;
    for (int k = first; k <= last; ++k) {
      const double w = std::min(hi, k + 1.0) - std::max(lo, static_cast<double>(k));
      if (w > 0.0) {
        taps.emplace_back(k, w);
        total += w;
      }
    }
    if (taps.empty()) taps.emplace_back(first, total = 1.0);
    for (auto& tap : taps) tap.second /= total;
  };

  std::vector<std::pair<int, double>> taps_x, taps_y;
  for (int j = 0; j < r; ++j) {
    footprint(spec.offset_y, j, taps_y);
    for (int i = 0; i < r; ++i) {
      footprint(spec.offset_x, i, taps_x);
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (const auto& [sy, wy] : taps_y) {
          for (const auto& [sx, wx] : taps_x) acc += wy * wx * image.at(sx, sy, c);
        }
        patch.at(i, j, c) = acc;
      }
    }
  }
  return patch;
}

}  // namespace epigraf
