#include <ctreg/config.hpp>
#include <ctreg/errors.hpp>
#include <ctreg/io.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace ctreg {

namespace {

namespace pt = boost::property_tree;

/// Line of `key` inside `[section]`, for error messages; 1 if not found.
int locate_line(const std::string& path, const std::string& section, const std::string& key) {
  std::ifstream in(path);
  std::string raw;
  std::string current;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto begin = raw.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    const std::string s = raw.substr(begin);
    if (s.front() == '[') {
      current = s.substr(1, s.find(']') - 1);
      if (section.empty() && key == "[" + current + "]") return line;
      continue;
    }
    if (current == section && s.rfind(key, 0) == 0) {
      return line;
    }
  }
  return 1;
}

// trailing `# ...` after a value
std::string strip_comment(const std::string& value) {
  const auto hash = value.find('#');
  if (hash == std::string::npos) return value;
  const auto end = value.find_last_not_of(" \t", hash == 0 ? 0 : hash - 1);
  return hash == 0 || end == std::string::npos ? std::string() : value.substr(0, end + 1);
}

class IniDocument {
public:
  explicit IniDocument(std::string path) : path_(std::move(path)) {
    std::ifstream probe(path_);
    if (!probe) {
      throw FileFormatError(path_, 0, "cannot open file");
    }
    try {
      pt::read_ini(path_, tree_);
    } catch (const pt::ini_parser_error& e) {
      throw FileFormatError(path_, static_cast<int>(std::max<unsigned long>(e.line(), 1)), e.message());
    }
    for (auto& [name, node] : tree_) {
      for (auto& [key, value] : node) {
        value.data() = strip_comment(value.data());
      }
      if (node.empty() && !node.data().empty()) {
        fail("", name, "key outside any [section]");
      }
    }
  }

  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& reason) const {
    throw FileFormatError(path_, locate_line(path_, section, key), reason);
  }

  /// Raw string value, or nullptr when absent. Records the key as known.
  const std::string* raw(const std::string& section, const std::string& key) {
    known_[section].insert(key);
    const auto sec = tree_.find(section);
    if (sec == tree_.not_found()) return nullptr;
    const auto it = sec->second.find(key);
    if (it == sec->second.not_found()) return nullptr;
    return &it->second.data();
  }

  std::vector<double> numbers(const std::string& section, const std::string& key, const std::string& value) const {
    std::istringstream ss(value);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
        out.push_back(v);
      } catch (const std::exception&) {
        fail(section, key, "cannot parse number '" + tok + "' for " + section + "." + key);
      }
    }
    return out;
  }

  void get(const std::string& section, const std::string& key, double& out) {
    if (const auto* v = raw(section, key)) {
      const auto values = numbers(section, key, *v);
      if (values.size() != 1) fail(section, key, section + "." + key + " expects one number");
      out = values[0];
    }
  }

  void get(const std::string& section, const std::string& key, int& out) {
    double v = out;
    get(section, key, v);
    if (v != std::floor(v)) fail(section, key, section + "." + key + " expects an integer");
    out = static_cast<int>(v);
  }

  void get(const std::string& section, const std::string& key, std::uint64_t& out) {
    if (const auto* v = raw(section, key)) {
      try {
        std::size_t used = 0;
        out = std::stoull(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
      } catch (const std::exception&) {
        fail(section, key, section + "." + key + " expects a non-negative integer");
      }
    }
  }

  void get(const std::string& section, const std::string& key, bool& out) {
    if (const auto* v = raw(section, key)) {
      if (*v == "true" || *v == "1") {
        out = true;
      } else if (*v == "false" || *v == "0") {
        out = false;
      } else {
        fail(section, key, section + "." + key + " expects true|false");
      }
    }
  }

  void get(const std::string& section, const std::string& key, std::string& out) {
    if (const auto* v = raw(section, key)) out = *v;
  }

  /// One value broadcast to all axes, or three values.
  void get(const std::string& section, const std::string& key, Vec3& out, bool allow_scalar) {
    if (const auto* v = raw(section, key)) {
      const auto values = numbers(section, key, *v);
      if (values.size() == 3) {
        out = Vec3(values[0], values[1], values[2]);
      } else if (values.size() == 1 && allow_scalar) {
        out = Vec3::Constant(values[0]);
      } else {
        fail(section, key, section + "." + key + (allow_scalar ? " expects one or three numbers" : " expects three numbers"));
      }
    }
  }

  /// Rejects sections and keys never asked for.
  void check_unknown() const {
    for (const auto& [section, node] : tree_) {
      const auto known = known_.find(section);
      if (known == known_.end()) {
        throw FileFormatError(path_, locate_line(path_, "", "[" + section + "]"), "unknown section [" + section + "]");
      }
      for (const auto& [key, value] : node) {
        if (!known->second.count(key)) {
          fail(section, key, "unknown key '" + key + "' in [" + section + "]");
        }
      }
    }
  }

private:
  std::string path_;
  pt::ptree tree_;
  std::map<std::string, std::set<std::string>> known_;
};

std::string vec3_text(const Vec3& v) {
  return io::format_double(v.x()) + " " + io::format_double(v.y()) + " " + io::format_double(v.z());
}

std::vector<PlaneSpec> parse_planes(IniDocument& doc, const std::string& text) {
  std::vector<PlaneSpec> planes;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const auto v = doc.numbers("world", "extra_planes", item);
    if (v.size() != 11) {
      doc.fail("world", "extra_planes", "each extra plane needs 11 numbers: origin(3) u(3) v(3) extent_u extent_v");
    }
    PlaneSpec p;
    p.origin = Vec3(v[0], v[1], v[2]);
    p.axis_u = Vec3(v[3], v[4], v[5]).normalized();
    p.axis_v = Vec3(v[6], v[7], v[8]).normalized();
    p.extent_u = v[9];
    p.extent_v = v[10];
    if (std::abs(p.axis_u.dot(p.axis_v)) > 1e-9) {
      doc.fail("world", "extra_planes", "extra plane axes must be orthogonal");
    }
    planes.push_back(p);
  }
  return planes;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
  IniDocument doc(path);
  PipelineConfig cfg;
  doc.get("weights", "pose_rot", cfg.weights.pose_rot, true);
  doc.get("weights", "pose_pos", cfg.weights.pose_pos, true);
  doc.get("weights", "lidar", cfg.weights.lidar);
  doc.get("weights", "gyro", cfg.weights.gyro);
  doc.get("weights", "accel", cfg.weights.accel);

  doc.get("map", "voxel_size", cfg.voxel_size);
  doc.get("map", "min_points", cfg.plane.min_points);
  doc.get("map", "min_planarity", cfg.plane.min_planarity);
  doc.get("map", "max_rms", cfg.plane.max_rms);

  doc.get("spline", "knot_interval", cfg.knot_interval);
  doc.get("spline", "order", cfg.spline_order);

  auto& s = cfg.solver;
  doc.get("solver", "lambda_init", s.lambda_init);
  doc.get("solver", "lambda_factor", s.lambda_factor);
  doc.get("solver", "lambda_max", s.lambda_max);
  doc.get("solver", "max_inner_iterations", s.max_inner_iterations);
  doc.get("solver", "cost_tolerance", s.cost_tolerance);
  doc.get("solver", "step_tolerance", s.step_tolerance);
  doc.get("solver", "huber_delta", s.huber_delta);
  doc.get("solver", "association_gate", s.association_gate);
  doc.get("solver", "max_outer_loops", s.max_outer_loops);
  doc.get("solver", "stable_association_fraction", s.stable_association_fraction);
  doc.get("solver", "prealign", s.prealign);
  doc.get("solver", "dense_knot_limit", s.dense_knot_limit);

  doc.get("world", "gravity", cfg.world.gravity, false);

  doc.get("lidar", "range_min", cfg.range_min);
  doc.get("lidar", "range_max", cfg.range_max);
  doc.check_unknown();

  try {
    cfg.weights.validate();
  } catch (const std::invalid_argument& e) {
    doc.fail("weights", "", e.what());
  }
  if (!(cfg.voxel_size > 0.0)) doc.fail("map", "voxel_size", "map.voxel_size must be > 0");
  if (!(cfg.knot_interval > 0.0)) doc.fail("spline", "knot_interval", "spline.knot_interval must be > 0");
  if (cfg.spline_order < kMinSplineOrder || cfg.spline_order > kMaxSplineOrder) {
    doc.fail("spline", "order", "spline.order must be in [2, 6]");
  }
  if (!(s.lambda_init > 0.0) || !(s.lambda_factor > 1.0) || s.max_inner_iterations < 1 || s.max_outer_loops < 1) {
    doc.fail("solver", "", "invalid solver parameters");
  }
  return cfg;
}

void write_pipeline_config(const std::string& path, const PipelineConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  const auto& w = cfg.weights;
  const auto& s = cfg.solver;
  out << "# registration pipeline configuration\n"
      << "[weights]\n"
      << "pose_rot = " << vec3_text(w.pose_rot) << "\n"
      << "pose_pos = " << vec3_text(w.pose_pos) << "\n"
      << "lidar = " << io::format_double(w.lidar) << "\n"
      << "gyro = " << io::format_double(w.gyro) << "\n"
      << "accel = " << io::format_double(w.accel) << "\n\n"
      << "[map]\n"
      << "voxel_size = " << io::format_double(cfg.voxel_size) << "\n"
      << "min_points = " << cfg.plane.min_points << "\n"
      << "min_planarity = " << io::format_double(cfg.plane.min_planarity) << "\n"
      << "max_rms = " << io::format_double(cfg.plane.max_rms) << "\n\n"
      << "[spline]\n"
      << "knot_interval = " << io::format_double(cfg.knot_interval) << "\n"
      << "order = " << cfg.spline_order << "\n\n"
      << "[solver]\n"
      << "lambda_init = " << io::format_double(s.lambda_init) << "\n"
      << "lambda_factor = " << io::format_double(s.lambda_factor) << "\n"
      << "lambda_max = " << io::format_double(s.lambda_max) << "\n"
      << "max_inner_iterations = " << s.max_inner_iterations << "\n"
      << "cost_tolerance = " << io::format_double(s.cost_tolerance) << "\n"
      << "step_tolerance = " << io::format_double(s.step_tolerance) << "\n"
      << "huber_delta = " << io::format_double(s.huber_delta) << "\n"
      << "association_gate = " << io::format_double(s.association_gate) << "\n"
      << "max_outer_loops = " << s.max_outer_loops << "\n"
      << "stable_association_fraction = " << io::format_double(s.stable_association_fraction) << "\n"
      << "prealign = " << (s.prealign ? "true" : "false") << "\n"
      << "dense_knot_limit = " << s.dense_knot_limit << "\n\n"
      << "[world]\n"
      << "gravity = " << vec3_text(cfg.world.gravity) << "\n\n"
      << "[lidar]\n"
      << "range_min = " << io::format_double(cfg.range_min) << "\n"
      << "range_max = " << io::format_double(cfg.range_max) << "\n";
  if (!out.flush()) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

ScenarioSpec load_scenario(const std::string& path) {
  IniDocument doc(path);
  ScenarioSpec spec;
  std::string style = to_string(spec.style);
  doc.get("scenario", "duration", spec.duration);
  doc.get("scenario", "style", style);
  doc.get("scenario", "speed", spec.speed);
  doc.get("scenario", "figure_eight_period", spec.figure_eight_period);
  doc.get("scenario", "knot_interval", spec.knot_interval);
  doc.get("scenario", "spline_order", spec.spline_order);
  doc.get("scenario", "seed", spec.seed);

  std::string planes;
  doc.get("world", "min", spec.world_min, false);
  doc.get("world", "max", spec.world_max, false);
  doc.get("world", "box_walls", spec.box_walls);
  doc.get("world", "map_density", spec.map_density);
  doc.get("world", "gravity", spec.gravity, false);
  doc.get("world", "extra_planes", planes);

  doc.get("noise", "lidar", spec.lidar_noise);
  doc.get("noise", "gyro", spec.gyro_noise);
  doc.get("noise", "accel", spec.accel_noise);
  doc.get("noise", "gyro_bias", spec.bias.gyro, false);
  doc.get("noise", "accel_bias", spec.bias.accel, false);

  doc.get("rates", "imu", spec.imu_rate);
  doc.get("rates", "lidar", spec.lidar_rate);
  doc.get("rates", "scan", spec.scan_rate);
  doc.get("rates", "prior", spec.prior_rate);

  double rot_deg = spec.prior_rotation_perturbation * 180.0 / std::numbers::pi;
  doc.get("priors", "position_perturbation", spec.prior_position_perturbation);
  doc.get("priors", "rotation_perturbation_deg", rot_deg);
  spec.prior_rotation_perturbation = rot_deg * std::numbers::pi / 180.0;

  doc.get("lidar", "range_min", spec.range_min);
  doc.get("lidar", "range_max", spec.range_max);
  doc.check_unknown();

  try {
    spec.style = parse_trajectory_style(style);
  } catch (const std::invalid_argument& e) {
    doc.fail("scenario", "style", e.what());
  }
  spec.extra_planes = parse_planes(doc, planes);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    doc.fail("scenario", "", e.what());
  }
  return spec;
}

void write_scenario(const std::string& path, const ScenarioSpec& spec) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  std::string planes;
  for (const auto& p : spec.extra_planes) {
    if (!planes.empty()) planes += "; ";
    planes += vec3_text(p.origin) + " " + vec3_text(p.axis_u) + " " + vec3_text(p.axis_v) + " " +
              io::format_double(p.extent_u) + " " + io::format_double(p.extent_v);
  }
  out << "# synthetic scenario\n"
      << "[scenario]\n"
      << "duration = " << io::format_double(spec.duration) << "\n"
      << "style = " << to_string(spec.style) << "\n"
      << "speed = " << io::format_double(spec.speed) << "\n"
      << "figure_eight_period = " << io::format_double(spec.figure_eight_period) << "\n"
      << "knot_interval = " << io::format_double(spec.knot_interval) << "\n"
      << "spline_order = " << spec.spline_order << "\n"
      << "seed = " << spec.seed << "\n\n"
      << "[world]\n"
      << "min = " << vec3_text(spec.world_min) << "\n"
      << "max = " << vec3_text(spec.world_max) << "\n"
      << "box_walls = " << (spec.box_walls ? "true" : "false") << "\n"
      << "map_density = " << io::format_double(spec.map_density) << "\n"
      << "gravity = " << vec3_text(spec.gravity) << "\n";
  if (!planes.empty()) {
    out << "extra_planes = " << planes << "\n";
  }
  out << "\n[noise]\n"
      << "lidar = " << io::format_double(spec.lidar_noise) << "\n"
      << "gyro = " << io::format_double(spec.gyro_noise) << "\n"
      << "accel = " << io::format_double(spec.accel_noise) << "\n"
      << "gyro_bias = " << vec3_text(spec.bias.gyro) << "\n"
      << "accel_bias = " << vec3_text(spec.bias.accel) << "\n\n"
      << "[rates]\n"
      << "imu = " << io::format_double(spec.imu_rate) << "\n"
      << "lidar = " << io::format_double(spec.lidar_rate) << "\n"
      << "scan = " << io::format_double(spec.scan_rate) << "\n"
      << "prior = " << io::format_double(spec.prior_rate) << "\n\n"
      << "[priors]\n"
      << "position_perturbation = " << io::format_double(spec.prior_position_perturbation) << "\n"
      << "rotation_perturbation_deg = "
      << io::format_double(spec.prior_rotation_perturbation * 180.0 / std::numbers::pi) << "\n\n"
      << "[lidar]\n"
      << "range_min = " << io::format_double(spec.range_min) << "\n"
      << "range_max = " << io::format_double(spec.range_max) << "\n";
  if (!out.flush()) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

}  // namespace ctreg
