#include "epigraf/cli.hpp"

#include <CLI11.hpp>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <json.hpp>
#include <numbers>
#include <optional>
#include <sstream>
#include <string_view>

#include "epigraf/modulated_conv.hpp"
#include "epigraf/parallel.hpp"
#include "epigraf/patch_sampler.hpp"
#include "epigraf/trainer.hpp"
#include "epigraf/triplane_field.hpp"
#include "epigraf/volume_renderer.hpp"

namespace epigraf {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

enum class Precision { f32, f64 };

struct Envelope {
  std::uint64_t seed = 0;
  fs::path output_dir;
  Precision precision = Precision::f64;
};

// ---- JSON access with key checking --------------------------------------

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
T read(const json& obj, const char* key, T fallback, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("");
    } else {
      if (!it->is_number()) throw ConfigError("");
    }
    return it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

const json& section(const json& obj, const char* key) {
  static const json empty = json::object();
  const auto it = obj.find(key);
  return it == obj.end() ? empty : *it;
}

template <typename T>
std::vector<T> read_list(const json& obj, const char* key, std::vector<T> fallback, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_array()) throw ConfigError(where + "." + key + ": expected an array");
  std::vector<T> out;
  for (const auto& v : *it) {
    const bool ok = std::is_integral_v<T> ? v.is_number_integer() : v.is_number();
    if (!ok) throw ConfigError(where + "." + key + ": wrong element type");
    out.push_back(v.get<T>());
  }
  return out;
}

std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t k = 0; k + 1 < byte && k < text.size(); ++k) {
    if (text[k] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

json load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON at " + line_column(text, e.byte));
  }
}

constexpr std::array<std::string_view, 3> kEnvelopeKeys = {"seed", "output_dir", "precision"};

void check_top_keys(const json& cfg, std::initializer_list<std::string_view> own) {
  if (!cfg.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, _] : cfg.items()) {
    bool known = false;
    for (auto a : kEnvelopeKeys) known = known || key == a;
    for (auto a : own) known = known || key == a;
    if (!known) throw ConfigError("config: unknown key \"" + key + "\"");
  }
}

Envelope read_envelope(const json& cfg) {
  Envelope env;
  env.seed = read<std::uint64_t>(cfg, "seed", 0, "config");
  env.output_dir = fs::absolute(read<std::string>(cfg, "output_dir", ".", "config")).lexically_normal();
  const std::string precision = read<std::string>(cfg, "precision", "f64", "config");
  if (precision == "f32") {
    env.precision = Precision::f32;
  } else if (precision != "f64") {
    throw ConfigError("config.precision: expected \"f32\" or \"f64\"");
  }
  return env;
}

void require_f64(const Envelope& env, const char* command) {
  if (env.precision != Precision::f64) {
    throw ConfigError(std::string(command) + " runs in double precision only; set \"precision\": \"f64\"");
  }
}

fs::path existing_file(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where + "." + key + ": required");
  if (!it->is_string()) throw ConfigError(where + "." + key + ": wrong type");
  const fs::path path = fs::absolute(it->get<std::string>()).lexically_normal();
  if (!fs::is_regular_file(path)) throw ConfigError(where + "." + key + ": no such file " + path.string());
  return path;
}

// Config errors raised by the library's own validation.
template <typename Fn>
void validated(Fn&& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

ScheduleConfig read_schedule(const json& obj, ScheduleConfig s, bool with_resolution) {
  const std::string where = "config.schedule";
  if (with_resolution) {
    check_keys(obj, where, {"kind", "total_iters", "beta_start", "beta_end", "uniform_start", "patch_res", "full_res"});
    s.patch_res = read<int>(obj, "patch_res", s.patch_res, where);
    s.full_res = read<int>(obj, "full_res", s.full_res, where);
  } else {
    check_keys(obj, where, {"kind", "total_iters", "beta_start", "beta_end", "uniform_start"});
  }
  validated([&] { s.kind = parse_schedule_kind(read<std::string>(obj, "kind", to_string(s.kind), where)); });
  s.total_iters = read<std::int64_t>(obj, "total_iters", s.total_iters, where);
  s.beta_start = read<double>(obj, "beta_start", s.beta_start, where);
  s.beta_end = read<double>(obj, "beta_end", s.beta_end, where);
  s.uniform_start = read<double>(obj, "uniform_start", s.uniform_start, where);
  return s;
}

RenderConfig read_render(const json& obj, RenderConfig r) {
  const std::string where = "config.render";
  check_keys(obj, where, {"n_coarse", "n_fine", "stratified_jitter", "background", "n_background"});
  r.n_coarse = read<int>(obj, "n_coarse", r.n_coarse, where);
  r.n_fine = read<int>(obj, "n_fine", r.n_fine, where);
  r.stratified_jitter = read<bool>(obj, "stratified_jitter", r.stratified_jitter, where);
  validated([&] { r.background = parse_background_mode(read<std::string>(obj, "background", to_string(r.background), where)); });
  r.n_background = read<int>(obj, "n_background", r.n_background, where);
  return r;
}

TriPlaneShape read_shape(const json& obj) {
  const std::string where = "config.scene";
  check_keys(obj, where, {"plane_res", "features", "hidden"});
  TriPlaneShape shape;
  shape.plane_res = read<int>(obj, "plane_res", shape.plane_res, where);
  shape.features = read<int>(obj, "features", shape.features, where);
  shape.hidden = read<int>(obj, "hidden", shape.hidden, where);
  return shape;
}

// ---- output bookkeeping --------------------------------------------------

class Outputs {
 public:
  explicit Outputs(const Envelope& env) : dir_(env.output_dir) {}

  void create() const { fs::create_directories(dir_); }
  fs::path add(const std::string& name) {
    artifacts_.push_back(name);
    return dir_ / name;
  }

  void write_manifest(const std::string& command, const json& cfg, const Envelope& env) const {
    json manifest;
    manifest["tool"] = "epigraf";
    manifest["version"] = kVersion;
    manifest["subcommand"] = command;
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(cfg.dump())));
    manifest["config_hash"] = std::string("fnv1a64:") + hash;
    manifest["config"] = cfg;
    manifest["seed"] = env.seed;
    manifest["precision"] = env.precision == Precision::f32 ? "f32" : "f64";
    manifest["libraries"] = {
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
    };
    manifest["artifacts"] = artifacts_;
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest.json");
  }

 private:
  fs::path dir_;
  std::vector<std::string> artifacts_;
};

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.precision(17);
  return out;
}

// A subcommand is split into a validating parse step (config errors) and a
// run step (runtime errors).
using RunStep = std::function<void(Outputs&, std::ostream& out, std::ostream& err)>;

// ---- fit -----------------------------------------------------------------

RunStep parse_fit(const json& cfg, const Envelope& env) {
  check_top_keys(cfg, {"iters", "batch_patches", "patch_res", "full_res", "schedule", "adam", "eval_every",
                       "eval_views", "target_psnr", "stop_at_target", "scene", "render", "ground_truth",
                       "write_timing"});
  require_f64(env, "fit");
  const std::string where = "config";
  TrainConfig tc;
  tc.seed = env.seed;
  tc.workers = default_worker_count();
  tc.iters = read<std::int64_t>(cfg, "iters", tc.iters, where);
  tc.batch_patches = read<int>(cfg, "batch_patches", tc.batch_patches, where);
  tc.patch_res = read<int>(cfg, "patch_res", tc.patch_res, where);
  tc.full_res = read<int>(cfg, "full_res", tc.full_res, where);
  tc.eval_every = read<std::int64_t>(cfg, "eval_every", tc.eval_every, where);
  tc.eval_views = read<int>(cfg, "eval_views", tc.eval_views, where);
  tc.target_psnr = read<double>(cfg, "target_psnr", tc.target_psnr, where);
  tc.stop_at_target = read<bool>(cfg, "stop_at_target", tc.stop_at_target, where);
  ScheduleConfig sched;
  sched.total_iters = std::max<std::int64_t>(1, tc.iters / 2);
  tc.schedule = read_schedule(section(cfg, "schedule"), sched, false);

  const json& adam = section(cfg, "adam");
  check_keys(adam, "config.adam", {"lr", "beta1", "beta2", "eps"});
  tc.adam.lr = read<double>(adam, "lr", tc.adam.lr, "config.adam");
  tc.adam.beta1 = read<double>(adam, "beta1", tc.adam.beta1, "config.adam");
  tc.adam.beta2 = read<double>(adam, "beta2", tc.adam.beta2, "config.adam");
  tc.adam.eps = read<double>(adam, "eps", tc.adam.eps, "config.adam");
  tc.shape = read_shape(section(cfg, "scene"));
  tc.render = read_render(section(cfg, "render"), tc.render);

  const json& gt_json = section(cfg, "ground_truth");
  const std::string gw = "config.ground_truth";
  check_keys(gt_json, gw, {"radius", "interior_density", "edge_width", "gradient_color"});
  SphereField::Params sp;
  sp.radius = read<double>(gt_json, "radius", sp.radius, gw);
  sp.interior_density = read<double>(gt_json, "interior_density", sp.interior_density, gw);
  sp.edge_width = read<double>(gt_json, "edge_width", sp.edge_width, gw);
  sp.gradient_color = read<bool>(gt_json, "gradient_color", sp.gradient_color, gw);
  GroundTruthScene gt;
  const bool write_timing = read<bool>(cfg, "write_timing", false, where);
  validated([&] {
    tc.validate();
    gt.field = SphereField(sp);
    gt.render = tc.render;
  });

  return [tc, gt, write_timing](Outputs& outputs, std::ostream& out, std::ostream& err) {
    const TrainResult result = train(tc, gt, [&](const EvalRecord& e) {
      err << "iter " << e.iter << "  psnr " << e.psnr << " dB  loss " << e.loss << "  " << e.wall_seconds << " s\n";
    });
    result.scene.save_checkpoint(outputs.add("scene.epgc"));
    result.report.write_csv(outputs.add("report.csv"));
    if (write_timing) result.report.write_timing_csv(outputs.add("timing.csv"));
    const auto& last = result.report.evals.back();
    out << "final psnr " << last.psnr << " dB after " << last.iter << " iterations\n";
    if (result.report.iters_to_target) {
      out << "reached " << tc.target_psnr << " dB at iteration " << *result.report.iters_to_target << '\n';
    } else {
      out << "did not reach " << tc.target_psnr << " dB\n";
    }
  };
}

// ---- render --------------------------------------------------------------

RunStep parse_render(const json& cfg, const Envelope& env) {
  check_top_keys(cfg, {"checkpoint", "resolution", "frames", "pitch", "radius", "fov", "render", "background_hidden"});
  require_f64(env, "render");
  const std::string where = "config";
  const fs::path checkpoint = existing_file(cfg, "checkpoint", where);
  const int resolution = read<int>(cfg, "resolution", 64, where);
  const int frames = read<int>(cfg, "frames", 8, where);
  CameraPose base;
  base.pitch = read<double>(cfg, "pitch", base.pitch, where);
  base.radius = read<double>(cfg, "radius", base.radius, where);
  base.fov = read<double>(cfg, "fov", base.fov, where);
  RenderConfig rc;
  rc.stratified_jitter = false;
  rc = read_render(section(cfg, "render"), rc);
  const int bg_hidden = read<int>(cfg, "background_hidden", 64, where);
  if (resolution < 1 || frames < 1 || bg_hidden < 1) throw ConfigError("config: counts must be positive");
  validated([&] {
    base.validate();
    rc.validate();
  });
  const std::uint64_t seed = env.seed;
  return [=](Outputs& outputs, std::ostream& out, std::ostream&) {
    const TriPlaneScene scene = TriPlaneScene::load_checkpoint(checkpoint);
    const TriPlaneField field(scene);
    std::optional<BackgroundField> bg;
    if (rc.background == BackgroundMode::nerfpp) bg = BackgroundField::random(bg_hidden, mix64(seed));
    const int workers = default_worker_count();
    for (int f = 0; f < frames; ++f) {
      CameraPose pose = base;
      pose.yaw = 2.0 * std::numbers::pi * f / frames;
      const Image image = render_image(field, pose, resolution, rc, bg ? &*bg : nullptr,
                                       RandomStream::substream(seed, f).next_u64(), workers);
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03d.ppm", f);
      write_ppm(outputs.add(name), image);
    }
    out << "wrote " << frames << " frames\n";
  };
}

// ---- export-density ------------------------------------------------------

RunStep parse_export_density(const json& cfg, const Envelope& env) {
  check_top_keys(cfg, {"checkpoint", "init", "scene", "resolution"});
  require_f64(env, "export-density");
  const std::string where = "config";
  const int resolution = read<int>(cfg, "resolution", 64, where);
  if (resolution < 2) throw ConfigError("config.resolution: must be at least 2");
  const bool has_checkpoint = cfg.contains("checkpoint");
  const bool has_init = cfg.contains("init");
  if (has_checkpoint == has_init) throw ConfigError("config: give exactly one of \"checkpoint\" or \"init\"");
  std::function<TriPlaneScene()> make_scene;
  if (has_checkpoint) {
    if (cfg.contains("scene")) throw ConfigError("config.scene: only valid together with \"init\"");
    const fs::path checkpoint = existing_file(cfg, "checkpoint", where);
    make_scene = [checkpoint] { return TriPlaneScene::load_checkpoint(checkpoint); };
  } else {
    const std::string init = read<std::string>(cfg, "init", "zero", where);
    const TriPlaneShape shape = read_shape(section(cfg, "scene"));
    validated([&] { shape.validate(); });
    if (init == "zero") {
      make_scene = [shape] { return TriPlaneScene(shape); };
    } else if (init == "random") {
      const std::uint64_t seed = env.seed;
      make_scene = [shape, seed] { return TriPlaneScene::random(shape, seed); };
    } else {
      throw ConfigError("config.init: expected \"zero\" or \"random\"");
    }
  }
  return [=](Outputs& outputs, std::ostream& out, std::ostream&) {
    const TriPlaneScene scene = make_scene();
    export_density_grid(scene, resolution, outputs.add("density.epgf"), default_worker_count());
    out << "wrote " << resolution << "^3 density grid\n";
  };
}

// ---- sample-scales / schedule --------------------------------------------

std::vector<std::int64_t> read_iterations(const json& cfg, const ScheduleConfig& s) {
  auto iters = read_list<std::int64_t>(cfg, "iters", {0, s.total_iters / 2, s.total_iters}, "config");
  if (iters.empty()) throw ConfigError("config.iters: must not be empty");
  for (auto t : iters) {
    if (t < 0) throw ConfigError("config.iters: iterations must be non-negative");
  }
  return iters;
}

RunStep parse_sample_scales(const json& cfg, const Envelope& env) {
  check_top_keys(cfg, {"schedule", "iters", "draws"});
  require_f64(env, "sample-scales");
  const ScheduleConfig s = read_schedule(section(cfg, "schedule"), ScheduleConfig{}, true);
  validated([&] { s.validate(); });
  const auto iters = read_iterations(cfg, s);
  const std::int64_t draws = read<std::int64_t>(cfg, "draws", 10000, "config");
  if (draws < 1) throw ConfigError("config.draws: must be positive");
  const std::uint64_t seed = env.seed;
  return [=](Outputs& outputs, std::ostream& out, std::ostream&) {
    auto csv = open_csv(outputs.add("scales.csv"));
    csv << "t,s\n";
    for (std::size_t k = 0; k < iters.size(); ++k) {
      RandomStream rng = RandomStream::substream(seed, k);
      double sum = 0.0;
      for (std::int64_t d = 0; d < draws; ++d) {
        const double v = sample_scale(s, iters[k], rng);
        sum += v;
        csv << iters[k] << ',' << v << '\n';
      }
      out << "t=" << iters[k] << "  mean s = " << sum / static_cast<double>(draws) << '\n';
    }
    if (!csv) throw std::runtime_error("failed writing scales.csv");
  };
}

RunStep parse_schedule(const json& cfg, const Envelope& env) {
  check_top_keys(cfg, {"schedule", "iters", "grid_points"});
  require_f64(env, "schedule");
  ScheduleConfig defaults;
  defaults.uniform_start = 0.9;  // a collapsed U[1, 1] has no density to plot
  ScheduleConfig s = read_schedule(section(cfg, "schedule"), defaults, true);
  if (!section(cfg, "schedule").contains("uniform_start")) s.uniform_start = std::max(s.uniform_start, s.min_scale());
  validated([&] { s.validate(); });
  const auto iters = read_iterations(cfg, s);
  const int points = read<int>(cfg, "grid_points", 1000, "config");
  if (points < 2) throw ConfigError("config.grid_points: must be at least 2");
  ScheduleConfig uniform = s;
  uniform.kind = ScheduleKind::uniform_annealed;
  ScheduleConfig beta = s;
  beta.kind = ScheduleKind::beta_annealed;
  return [=](Outputs& outputs, std::ostream& out, std::ostream&) {
    const double lo = s.min_scale();
    for (const auto t : iters) {
      const std::string name = "schedule_t" + std::to_string(t) + ".csv";
      auto csv = open_csv(outputs.add(name));
      csv << "s,pdf_uniform,pdf_beta\n";
      // Cell centers: the beta density is unbounded at s = 1 when β < 1.
      for (int k = 0; k < points; ++k) {
        const double sv = lo + (1.0 - lo) * (k + 0.5) / points;
        csv << sv << ',' << scale_pdf(uniform, t, sv) << ',' << scale_pdf(beta, t, sv) << '\n';
      }
      if (!csv) throw std::runtime_error("failed writing " + name);
      out << "t=" << t << "  beta=" << beta_param_at(beta, t) << "  s_min=" << uniform_min_scale_at(uniform, t)
          << '\n';
    }
  };
}

// ---- modulation-demo -----------------------------------------------------

RunStep parse_modulation_demo(const json& cfg, const Envelope& env) {
  check_top_keys(cfg, {"fourier_freqs", "embedding_dim", "layer_channels", "adapter_std", "scale_points", "layers"});
  const std::string where = "config";
  ModulationNetConfig net_cfg;
  net_cfg.fourier_freqs = read<int>(cfg, "fourier_freqs", net_cfg.fourier_freqs, where);
  net_cfg.embedding_dim = read<int>(cfg, "embedding_dim", net_cfg.embedding_dim, where);
  net_cfg.layer_channels = read_list<int>(cfg, "layer_channels", {32, 64, 128}, where);
  const double adapter_std = read<double>(cfg, "adapter_std", 1.0, where);
  const int scale_points = read<int>(cfg, "scale_points", 64, where);
  if (net_cfg.fourier_freqs < 0 || net_cfg.embedding_dim < 1 || scale_points < 2 || !(adapter_std >= 0.0)) {
    throw ConfigError("config: invalid modulation settings");
  }
  for (int c : net_cfg.layer_channels) {
    if (c < 1) throw ConfigError("config.layer_channels: entries must be positive");
  }
  std::vector<int> all(net_cfg.layer_channels.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  const auto layers = read_list<int>(cfg, "layers", all, where);
  for (int l : layers) {
    if (l < 0 || l >= static_cast<int>(net_cfg.layer_channels.size())) {
      throw ConfigError("config.layers: index out of range");
    }
  }
  const Envelope e = env;
  return [=](Outputs& outputs, std::ostream& out, std::ostream&) {
    const bool single = e.precision == Precision::f32;
    const double tolerance = single ? 1e-5 : 1e-12;
    const auto cases = single ? modulation_equivalence_sweep<float>(e.seed) : modulation_equivalence_sweep<double>(e.seed);
    double worst = 0.0;
    out << "c_in c_out k max_abs_delta (" << (single ? "f32" : "f64") << ")\n";
    for (const auto& c : cases) {
      out << c.c_in << ' ' << c.c_out << ' ' << c.kernel << ' ' << c.max_abs_diff << '\n';
      worst = std::max(worst, c.max_abs_diff);
    }
    out << "worst " << worst << " tolerance " << tolerance << '\n';

    const auto net = ModulationNet::random(net_cfg, mix64(e.seed), adapter_std);
    std::vector<double> grid(scale_points);
    for (int k = 0; k < scale_points; ++k) grid[k] = 0.125 + 0.875 * k / (scale_points - 1);
    for (const auto& profile : dump_modulation_profile(net, grid, layers)) {
      write_modulation_profile_csv(profile, outputs.add("modulation_layer" + std::to_string(profile.layer) + ".csv"));
      const auto counts = classify_filters(profile);
      out << "layer " << profile.layer << ": on " << counts.always_on << ", off " << counts.always_off
          << ", scale-dependent " << counts.scale_dependent << ", neutral " << counts.neutral << '\n';
    }
    if (!(worst < tolerance)) throw std::runtime_error("modulation strategies disagree beyond tolerance");
  };
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Patch-wise tri-plane volume rendering toolkit", "epigraf"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::string config_path;
  struct Command {
    const char* name;
    const char* help;
    RunStep (*parse)(const json&, const Envelope&);
  };
  const Command commands[] = {
      {"fit", "Fit a tri-plane scene to the procedural ground truth", parse_fit},
      {"render", "Render a yaw orbit of a checkpoint as PPM frames", parse_render},
      {"export-density", "Write the density of a scene on an N^3 grid", parse_export_density},
      {"sample-scales", "Draw patch scales from a schedule", parse_sample_scales},
      {"schedule", "Tabulate uniform and beta scale densities", parse_schedule},
      {"modulation-demo", "Check modulation equivalence and dump gain profiles", parse_modulation_demo},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  std::size_t chosen = 0;
  while (!subs[chosen]->parsed()) ++chosen;
  const Command& command = commands[chosen];

  json cfg;
  Envelope env;
  RunStep run;
  try {
    cfg = load_config(config_path);
    env = read_envelope(cfg);
    run = command.parse(cfg, env);
  } catch (const std::exception& e) {
    err << "epigraf " << command.name << ": config error: " << e.what() << '\n';
    return kExitConfigError;
  }

  try {
    Outputs outputs(env);
    outputs.create();
    run(outputs, out, err);
    outputs.write_manifest(command.name, cfg, env);
  } catch (const std::exception& e) {
    err << "epigraf " << command.name << ": " << e.what() << '\n';
    return kExitRuntimeError;
  }
  return kExitOk;
}

}  // namespace epigraf
