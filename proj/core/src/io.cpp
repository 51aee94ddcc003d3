#include <ctreg/io.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ctreg::io {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

/// Line-oriented reader that tracks line numbers and skips comments.
class LineReader {
public:
  explicit LineReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) {
      throw FileFormatError(path, 0, "cannot open file");
    }
  }

  bool next(std::string& line) {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      line = trim(raw);
      if (line.empty() || line.front() == '#') continue;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& reason) const { throw FileFormatError(path_, line_, reason); }

  int line_number() const { return line_; }

private:
  std::string path_;
  std::ifstream in_;
  int line_ = 0;
};

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  if (sep == ' ') {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (const char ch : line) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_double(const LineReader& reader, const std::string& tok) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  if (!tok.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    reader.fail("cannot parse number '" + tok + "'");
  }
  if (!std::isfinite(v)) {
    reader.fail("non-finite value '" + tok + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(const LineReader& reader, const std::string& tok) {
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    reader.fail("cannot parse integer '" + tok + "'");
  }
  return v;
}

std::vector<double> parse_row(const LineReader& reader, const std::string& line, char sep, std::size_t expected) {
  const auto tokens = split(line, sep);
  if (tokens.size() != expected) {
    reader.fail("expected " + std::to_string(expected) + " fields, found " + std::to_string(tokens.size()));
  }
  std::vector<double> values;
  values.reserve(expected);
  for (const auto& tok : tokens) {
    values.push_back(parse_double(reader, tok));
  }
  return values;
}

Rotation checked_rotation(const LineReader& reader, double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (std::abs(n - 1.0) > 1e-3) {
    reader.fail("quaternion norm " + format_double(n) + " deviates from 1 by more than 1e-3");
  }
  return Rotation(w, x, y, z);
}

void expect_header(LineReader& reader, const std::string& expected) {
  std::string line;
  if (!reader.next(line)) {
    reader.fail("missing header '" + expected + "'");
  }
  std::string compact;
  for (const char ch : line) {
    if (ch != ' ' && ch != '\t') compact.push_back(ch);
  }
  if (compact != expected) {
    reader.fail("expected header '" + expected + "', found '" + line + "'");
  }
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

std::string format_fixed9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

TrajectorySamples read_trajectory_tum(const std::string& path) {
  LineReader reader(path);
  TrajectorySamples out;
  std::string line;
  while (reader.next(line)) {
    const auto v = parse_row(reader, line, ' ', 8);
    if (!out.empty() && !(v[0] > out.back().t)) {
      reader.fail("timestamps must be strictly increasing");
    }
    // TUM stores qx qy qz qw
    out.push_back(StampedPose{v[0], Pose{checked_rotation(reader, v[7], v[4], v[5], v[6]), Vec3(v[1], v[2], v[3])}});
  }
  return out;
}

void write_trajectory_tum(const std::string& path, const TrajectorySamples& samples) {
  auto out = open_output(path);
  out << "# t tx ty tz qx qy qz qw\n";
  for (const auto& s : samples) {
    const auto& q = s.pose.rotation;
    const auto& p = s.pose.position;
    out << format_fixed9(s.t) << ' ' << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
        << format_double(p.z()) << ' ' << format_double(q.x()) << ' ' << format_double(q.y()) << ' '
        << format_double(q.z()) << ' ' << format_double(q.w()) << '\n';
  }
  finish(out, path);
}

std::vector<ImuSample> read_imu_csv(const std::string& path) {
  LineReader reader(path);
  expect_header(reader, "t,wx,wy,wz,ax,ay,az");
  std::vector<ImuSample> out;
  std::string line;
  while (reader.next(line)) {
    const auto v = parse_row(reader, line, ',', 7);
    if (!out.empty() && !(v[0] > out.back().t)) {
      reader.fail("IMU timestamps must be strictly increasing");
    }
    out.push_back(ImuSample{v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples) {
  auto out = open_output(path);
  out << "t,wx,wy,wz,ax,ay,az\n";
  for (const auto& s : samples) {
    out << format_double(s.t) << ',' << format_double(s.gyro.x()) << ',' << format_double(s.gyro.y()) << ','
        << format_double(s.gyro.z()) << ',' << format_double(s.accel.x()) << ',' << format_double(s.accel.y())
        << ',' << format_double(s.accel.z()) << '\n';
  }
  finish(out, path);
}

ScanReadResult read_scan_csv(const std::string& path, double range_min, double range_max) {
  LineReader reader(path);
  expect_header(reader, "t,x,y,z");
  ScanReadResult result;
  std::string line;
  double last_t = -INFINITY;
  while (reader.next(line)) {
    const auto v = parse_row(reader, line, ',', 4);
    if (v[0] < last_t) {
      reader.fail("scan timestamps must be non-decreasing");
    }
    last_t = v[0];
    const Vec3 f(v[1], v[2], v[3]);
    const double range = f.norm();
    if (!(range > range_min && range < range_max)) {
      ++result.gated_out;
      continue;
    }
    result.points.push_back(LidarPoint{v[0], f});
  }
  return result;
}

void write_scan_csv(const std::string& path, const LidarScan& scan) {
  auto out = open_output(path);
  out << "t,x,y,z\n";
  for (const auto& p : scan) {
    out << format_double(p.t) << ',' << format_double(p.f.x()) << ',' << format_double(p.f.y()) << ','
        << format_double(p.f.z()) << '\n';
  }
  finish(out, path);
}

void write_points_csv(const std::string& path, const std::vector<double>& stamps, const std::vector<Vec3>& points) {
  if (stamps.size() != points.size()) {
    throw std::invalid_argument("write_points_csv: stamp/point count mismatch");
  }
  auto out = open_output(path);
  out << "t,x,y,z\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << format_double(stamps[i]) << ',' << format_double(points[i].x()) << ',' << format_double(points[i].y())
        << ',' << format_double(points[i].z()) << '\n';
  }
  finish(out, path);
}

std::vector<Vec3> read_xyz(const std::string& path) {
  LineReader reader(path);
  std::vector<Vec3> out;
  std::string line;
  while (reader.next(line)) {
    const auto v = parse_row(reader, line, ' ', 3);
    out.emplace_back(v[0], v[1], v[2]);
  }
  return out;
}

void write_xyz(const std::string& path, const std::vector<Vec3>& points) {
  auto out = open_output(path);
  for (const auto& p : points) {
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  }
  finish(out, path);
}

SplineTrajectory read_spline(const std::string& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line) || line != "ctspline v1") {
    reader.fail("expected 'ctspline v1' header");
  }
  if (!reader.next(line)) {
    reader.fail("missing 't0 dt order n_knots' line");
  }
  const auto head = split(line, ' ');
  if (head.size() != 4) {
    reader.fail("expected 't0 dt order n_knots'");
  }
  const double t0 = parse_double(reader, head[0]);
  const double dt = parse_double(reader, head[1]);
  const int order = parse_int<int>(reader, head[2]);
  const int n = parse_int<int>(reader, head[3]);
  if (!(dt > 0.0)) reader.fail("knot interval must be > 0");
  if (order < kMinSplineOrder || order > kMaxSplineOrder) reader.fail("unsupported spline order");
  if (n < order) reader.fail("fewer knots than the spline order");

  std::vector<Rotation> rot;
  std::vector<Vec3> pos;
  rot.reserve(n);
  pos.reserve(n);
  while (static_cast<int>(rot.size()) < n && reader.next(line)) {
    const auto v = parse_row(reader, line, ' ', 7);
    rot.push_back(checked_rotation(reader, v[0], v[1], v[2], v[3]));
    pos.emplace_back(v[4], v[5], v[6]);
  }
  if (static_cast<int>(rot.size()) != n) {
    reader.fail("expected " + std::to_string(n) + " knots, found " + std::to_string(rot.size()));
  }
  if (reader.next(line)) {
    reader.fail("trailing content after the last knot");
  }
  return SplineTrajectory(t0, dt, order, std::move(rot), std::move(pos));
}

void write_spline(const std::string& path, const SplineTrajectory& traj) {
  auto out = open_output(path);
  out << "ctspline v1\n";
  out << format_double(traj.t0()) << ' ' << format_double(traj.dt()) << ' ' << traj.order() << ' '
      << traj.num_knots() << '\n';
  for (int j = 0; j < traj.num_knots(); ++j) {
    const auto& q = traj.rot_knots()[j];
    const auto& p = traj.pos_knots()[j];
    out << format_double(q.w()) << ' ' << format_double(q.x()) << ' ' << format_double(q.y()) << ' '
        << format_double(q.z()) << ' ' << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
        << format_double(p.z()) << '\n';
  }
  finish(out, path);
}

VoxelMap read_voxmap(const std::string& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line) || line != "voxmap v1") {
    reader.fail("expected 'voxmap v1' header");
  }
  if (!reader.next(line)) {
    reader.fail("missing 'voxel_size n_voxels' line");
  }
  const auto head = split(line, ' ');
  if (head.size() != 2) {
    reader.fail("expected 'voxel_size n_voxels'");
  }
  const double voxel_size = parse_double(reader, head[0]);
  const auto n = parse_int<long long>(reader, head[1]);
  if (!(voxel_size > 0.0)) reader.fail("voxel size must be > 0");
  if (n < 0) reader.fail("negative voxel count");

  VoxelMap map(voxel_size);
  long long read = 0;
  while (read < n && reader.next(line)) {
    const auto tokens = split(line, ' ');
    if (tokens.size() != 9) {
      reader.fail("expected 9 fields, found " + std::to_string(tokens.size()));
    }
    const VoxelIndex idx{parse_int<std::int64_t>(reader, tokens[0]), parse_int<std::int64_t>(reader, tokens[1]),
                         parse_int<std::int64_t>(reader, tokens[2])};
    VoxelPlane plane;
    plane.normal = Vec3(parse_double(reader, tokens[3]), parse_double(reader, tokens[4]),
                        parse_double(reader, tokens[5]));
    plane.offset = parse_double(reader, tokens[6]);
    plane.planarity = parse_double(reader, tokens[7]);
    plane.point_count = parse_int<int>(reader, tokens[8]);
    if (std::abs(plane.normal.norm() - 1.0) > 1e-9) {
      reader.fail("plane normal is not unit length");
    }
    if (plane.planarity < 0.0 || plane.planarity > 1.0) {
      reader.fail("planarity outside [0, 1]");
    }
    if (map.find(idx) != nullptr) {
      reader.fail("duplicate voxel index");
    }
    map.insert(idx, plane);
    ++read;
  }
  if (read != n) {
    reader.fail("expected " + std::to_string(n) + " voxels, found " + std::to_string(read));
  }
  return map;
}

void write_voxmap(const std::string& path, const VoxelMap& map) {
  auto out = open_output(path);
  out << "voxmap v1\n";
  out << format_double(map.voxel_size()) << ' ' << map.size() << '\n';
  for (const auto& [idx, plane] : map.voxels()) {
    out << idx.x << ' ' << idx.y << ' ' << idx.z << ' ' << format_double(plane.normal.x()) << ' '
        << format_double(plane.normal.y()) << ' ' << format_double(plane.normal.z()) << ' '
        << format_double(plane.offset) << ' ' << format_double(plane.planarity) << ' ' << plane.point_count << '\n';
  }
  finish(out, path);
}

std::vector<double> read_times(const std::string& path) {
  LineReader reader(path);
  std::vector<double> out;
  std::string line;
  while (reader.next(line)) {
    out.push_back(parse_row(reader, line, ' ', 1)[0]);
  }
  return out;
}

std::string first_content_line(const std::string& path) {
  std::ifstream in(path);
  std::string raw;
  while (std::getline(in, raw)) {
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    return line;
  }
  return {};
}

}  // namespace ctreg::io
