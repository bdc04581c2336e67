#pragma once

#include <cstdint>
#include <string>

#include "epigraf/geometry.hpp"
#include "epigraf/image.hpp"
#include "epigraf/random.hpp"

namespace epigraf {

enum class ScheduleKind { beta_annealed, uniform_annealed };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Time-varying distribution over patch scales.
///
/// beta_annealed:    s = x·(1 - r/R) + r/R with x ~ Beta(1, β(t)), where
///                   β(t) = lerp(beta_start, beta_end, min(t/T, 1)).
/// uniform_annealed: s ~ U[s_min(t), 1] with s_min(t) = lerp(uniform_start, r/R, min(t/T, 1)).
///                   uniform_start = 1 starts from full frames only.
struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::beta_annealed;
  std::int64_t total_iters = 10000;
  double beta_start = 0.05;
  double beta_end = 0.8;
  double uniform_start = 1.0;
  int patch_res = 64;
  int full_res = 64;

  void validate() const;
  double min_scale() const { return static_cast<double>(patch_res) / full_res; }
};

/// Annealing progress min(t/T, 1).
double schedule_progress(const ScheduleConfig& cfg, std::int64_t t);

double beta_param_at(const ScheduleConfig& cfg, std::int64_t t);

/// Left end of the uniform support at iteration t.
double uniform_min_scale_at(const ScheduleConfig& cfg, std::int64_t t);

double sample_scale(const ScheduleConfig& cfg, std::int64_t t, RandomStream& rng);

/// Density of the scale distribution at iteration t; zero outside the support.
/// A collapsed uniform support (s_min = 1) yields +inf at s = 1.
double scale_pdf(const ScheduleConfig& cfg, std::int64_t t, double s);

/// Cumulative distribution of the scale at iteration t.
double scale_cdf(const ScheduleConfig& cfg, std::int64_t t, double s);

/// Raw Beta(1, β) density and distribution function on [0, 1].
double beta1_pdf(double beta, double x);
double beta1_cdf(double beta, double x);

struct Offsets {
  double x = 0.0;
  double y = 0.0;
};

/// Independent U[0, 1 - s] offsets.
Offsets sample_offsets(double s, RandomStream& rng);

/// Full patch draw (s, δx, δy) for iteration t.
PatchSpec sample_patch(const ScheduleConfig& cfg, std::int64_t t, RandomStream& rng);

enum class PatchFilter { nearest, box };

/// Crops `spec` out of a square full_res × full_res image. `nearest` reads the
/// source pixel containing each patch pixel center (the aliased extraction);
/// `box` averages the exact area footprint of each patch pixel.
Image extract_patch(const Image& image, const PatchSpec& spec, PatchFilter filter);

}  // namespace epigraf
