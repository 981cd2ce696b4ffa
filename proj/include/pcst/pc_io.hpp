#pragma once

#include "pcst/sparse_tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  int bit_depth = 0;  // 0 until quantised

  std::size_t size() const { return points.size(); }
};

class PlyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PlyFormat { ascii, binary_little_endian };

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw PlyError("unknown PLY property type '" + t + "'");
}

inline double ply_read_binary(std::istream& in, const std::string& t) {
  static_assert(std::endian::native == std::endian::little, "binary PLY reader assumes a little-endian host");
  unsigned char buf[8];
  const auto n = ply_type_size(t);
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) throw PlyError("truncated PLY body");
  auto as = [&]<typename U>(U) {
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return as(std::int8_t{});
  if (t == "uchar" || t == "uint8") return as(std::uint8_t{});
  if (t == "short" || t == "int16") return as(std::int16_t{});
  if (t == "ushort" || t == "uint16") return as(std::uint16_t{});
  if (t == "int" || t == "int32") return as(std::int32_t{});
  if (t == "uint" || t == "uint32") return as(std::uint32_t{});
  if (t == "float" || t == "float32") return as(float{});
  return as(double{});
}

}  // namespace detail

/// Reads vertex positions from an ASCII or binary little-endian PLY file.
/// Every other element and property is skipped.
inline PointCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlyError("cannot open PLY file " + path.string());

  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw PlyError("malformed PLY header: missing magic");
  std::optional<PlyFormat> format;
  std::vector<detail::PlyElement> elements;
  bool ended = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty() || key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii") {
        format = PlyFormat::ascii;
      } else if (f == "binary_little_endian") {
        format = PlyFormat::binary_little_endian;
      } else {
        throw PlyError("unsupported PLY format '" + f + "'");
      }
    } else if (key == "element") {
      detail::PlyElement e;
      if (!(ls >> e.name >> e.count)) throw PlyError("malformed PLY header: bad element line");
      elements.push_back(std::move(e));
    } else if (key == "property") {
      if (elements.empty()) throw PlyError("malformed PLY header: property before element");
      detail::PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
        detail::ply_type_size(p.count_type);
      } else {
        p.type = t;
        ls >> p.name;
      }
      detail::ply_type_size(p.type);
      if (p.name.empty()) throw PlyError("malformed PLY header: unnamed property");
      elements.back().props.push_back(std::move(p));
    } else if (key == "end_header") {
      ended = true;
      break;
    } else {
      throw PlyError("malformed PLY header: unexpected keyword '" + key + "'");
    }
  }
  if (!ended || !format) throw PlyError("malformed PLY header");

  PointCloud cloud;
  bool saw_vertex = false;
  for (const auto& e : elements) {
    int ix = -1, iy = -1, iz = -1;
    if (e.name == "vertex") {
      saw_vertex = true;
      for (std::size_t i = 0; i < e.props.size(); ++i) {
        if (e.props[i].is_list) continue;
        if (e.props[i].name == "x") ix = static_cast<int>(i);
        if (e.props[i].name == "y") iy = static_cast<int>(i);
        if (e.props[i].name == "z") iz = static_cast<int>(i);
      }
      if (ix < 0 || iy < 0 || iz < 0) throw PlyError("PLY vertex element lacks x/y/z");
      cloud.points.reserve(e.count);
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      Point3 p{};
      if (*format == PlyFormat::ascii) {
        if (!std::getline(in, line)) throw PlyError("truncated PLY body");
        std::istringstream ls(line);
        std::size_t col = 0;
        for (const auto& prop : e.props) {
          double v = 0;
          if (prop.is_list) {
            std::size_t n = 0;
            if (!(ls >> n)) throw PlyError("malformed PLY list");
            for (std::size_t k = 0; k < n; ++k) ls >> v;
          } else if (!(ls >> v)) {
            throw PlyError("malformed PLY vertex line");
          }
          if (static_cast<int>(col) == ix) p[0] = v;
          if (static_cast<int>(col) == iy) p[1] = v;
          if (static_cast<int>(col) == iz) p[2] = v;
          ++col;
        }
      } else {
        std::size_t col = 0;
        for (const auto& prop : e.props) {
          if (prop.is_list) {
            const auto n = static_cast<std::size_t>(detail::ply_read_binary(in, prop.count_type));
            for (std::size_t k = 0; k < n; ++k) detail::ply_read_binary(in, prop.type);
          } else {
            const double v = detail::ply_read_binary(in, prop.type);
            if (static_cast<int>(col) == ix) p[0] = v;
            if (static_cast<int>(col) == iy) p[1] = v;
            if (static_cast<int>(col) == iz) p[2] = v;
          }
          ++col;
        }
      }
      if (e.name == "vertex") cloud.points.push_back(p);
    }
  }
  if (!saw_vertex) throw PlyError("PLY file has no vertex element");
  return cloud;
}

/// Writes x/y/z as float64 so a reload reproduces the points exactly.
inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
                      PlyFormat format = PlyFormat::ascii) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PlyError("cannot write PLY file " + path.string());
  out << "ply\n"
      << "format " << (format == PlyFormat::ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.points.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\nend_header\n";
  if (format == PlyFormat::ascii) {
    out << std::setprecision(17);
    for (const auto& p : cloud.points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  } else {
    for (const auto& p : cloud.points) out.write(reinterpret_cast<const char*>(p.data()), sizeof(double) * 3);
  }
  if (!out) throw PlyError("failed writing PLY file " + path.string());
}

inline PointCloud to_point_cloud(const std::vector<Coord>& coords, int bit_depth = 0) {
  PointCloud c;
  c.bit_depth = bit_depth;
  c.points.reserve(coords.size());
  for (const auto& v : coords) c.points.push_back({double(v[0]), double(v[1]), double(v[2])});
  return c;
}

enum class VoxelScale {
  fit,     // longest bounding-box extent mapped onto 2^depth - 1
  native,  // source units are voxel units; only shift, round and clip
};

/// Shifts the min corner to the origin, scales with one global factor,
/// rounds, clips to [0, 2^depth - 1] and deduplicates.
inline std::vector<Coord> voxelize_coords(const PointCloud& cloud, int bit_depth, VoxelScale mode = VoxelScale::fit) {
  if (cloud.points.empty()) throw std::invalid_argument("voxelize: empty cloud");
  if (bit_depth < 1 || bit_depth > 16) throw std::invalid_argument("voxelize: bit depth out of range");
  Point3 lo = cloud.points.front();
  Point3 hi = lo;
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double top = std::ldexp(1.0, bit_depth) - 1.0;
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  double scale = 1.0;
  if (mode == VoxelScale::fit && extent > 0) scale = top / extent;
  std::vector<Coord> out;
  out.reserve(cloud.points.size());
  for (const auto& p : cloud.points) {
    Coord c{};
    for (int a = 0; a < 3; ++a) {
      const double v = std::round((p[a] - lo[a]) * scale);
      c[a] = static_cast<std::int32_t>(std::clamp(v, 0.0, top));
    }
    out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <typename T>
SparseTensor<T> voxelize(const PointCloud& cloud, int bit_depth, VoxelScale mode = VoxelScale::fit) {
  return SparseTensor<T>::occupancy(voxelize_coords(cloud, bit_depth, mode), 1);
}

enum class ShapeKind { sphere, torus, box, composite };

inline ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "torus") return ShapeKind::torus;
  if (s == "box") return ShapeKind::box;
  if (s == "composite") return ShapeKind::composite;
  throw std::invalid_argument("unknown shape kind '" + s + "'");
}

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::torus: return "torus";
    case ShapeKind::box: return "box";
    case ShapeKind::composite: return "composite";
  }
  return "?";
}

namespace detail {

inline Point3 sample_sphere(std::mt19937_64& rng, double radius, const Point3& center) {
  std::normal_distribution<double> n(0.0, 1.0);
  double x, y, z, len;
  do {
    x = n(rng);
    y = n(rng);
    z = n(rng);
    len = std::sqrt(x * x + y * y + z * z);
  } while (len < 1e-12);
  return {center[0] + radius * x / len, center[1] + radius * y / len, center[2] + radius * z / len};
}

inline Point3 sample_torus(std::mt19937_64& rng, double major, double minor, const Point3& center) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr double two_pi = 6.283185307179586;
  // Area element is proportional to (major + minor cos v); rejection-sample v.
  double v;
  do {
    v = two_pi * u(rng);
  } while (u(rng) * (major + minor) > major + minor * std::cos(v));
  const double w = two_pi * u(rng);
  const double ring = major + minor * std::cos(v);
  return {center[0] + ring * std::cos(w), center[1] + ring * std::sin(w), center[2] + minor * std::sin(v)};
}

inline Point3 sample_box(std::mt19937_64& rng, const Point3& half, const Point3& center) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  const double ax = half[1] * half[2], ay = half[0] * half[2], az = half[0] * half[1];
  const double r = pick(rng) * (ax + ay + az);
  const int axis = r < ax ? 0 : (r < ax + ay ? 1 : 2);
  Point3 p{u(rng) * half[0], u(rng) * half[1], u(rng) * half[2]};
  p[axis] = pick(rng) < 0.5 ? -half[axis] : half[axis];
  return {center[0] + p[0], center[1] + p[1], center[2] + p[2]};
}

// Uniform random rotation from three uniforms (Shoemake).
inline std::array<double, 9> random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr double two_pi = 6.283185307179586;
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double a = std::sqrt(1 - u1), b = std::sqrt(u1);
  const double w = a * std::sin(two_pi * u2), x = a * std::cos(two_pi * u2);
  const double y = b * std::sin(two_pi * u3), z = b * std::cos(two_pi * u3);
  return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
          2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
          2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

}  // namespace detail

struct ShapeOptions {
  bool rotate = true;
};

/// Surface-sampled synthetic shape, deterministic in `seed`. Shapes are
/// centred on the origin with unit-order size: the sphere has radius 1.
inline PointCloud synth_shape(ShapeKind kind, std::size_t n_points, std::uint64_t seed, ShapeOptions opts = {}) {
  if (n_points < 1) throw std::invalid_argument("synth_shape: n_points must be at least 1");
  std::mt19937_64 rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n_points);
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  for (std::size_t i = 0; i < n_points; ++i) {
    switch (kind) {
      case ShapeKind::sphere: cloud.points.push_back(detail::sample_sphere(rng, 1.0, {0, 0, 0})); break;
      case ShapeKind::torus: cloud.points.push_back(detail::sample_torus(rng, 1.0, 0.35, {0, 0, 0})); break;
      case ShapeKind::box: cloud.points.push_back(detail::sample_box(rng, {1.0, 0.7, 0.5}, {0, 0, 0})); break;
      case ShapeKind::composite: {
        // Sphere, box and torus laid side by side; picked proportionally to area.
        constexpr double a_sphere = 4 * 3.141592653589793 * 0.45 * 0.45;
        constexpr double a_box = 8 * (0.4 * 0.3 + 0.3 * 0.25 + 0.4 * 0.25);
        constexpr double a_torus = 4 * 3.141592653589793 * 3.141592653589793 * 0.45 * 0.15;
        const double r = pick(rng) * (a_sphere + a_box + a_torus);
        if (r < a_sphere) {
          cloud.points.push_back(detail::sample_sphere(rng, 0.45, {-0.55, 0, 0}));
        } else if (r < a_sphere + a_box) {
          cloud.points.push_back(detail::sample_box(rng, {0.4, 0.3, 0.25}, {0.5, 0.1, 0}));
        } else {
          cloud.points.push_back(detail::sample_torus(rng, 0.45, 0.15, {0.1, -0.2, 0.6}));
        }
        break;
      }
    }
  }
  if (opts.rotate) {
    const auto r = detail::random_rotation(rng);
    for (auto& p : cloud.points) {
      const Point3 q = p;
      p = {r[0] * q[0] + r[1] * q[1] + r[2] * q[2], r[3] * q[0] + r[4] * q[1] + r[5] * q[2],
           r[6] * q[0] + r[7] * q[1] + r[8] * q[2]};
    }
  }
  return cloud;
}

/// Deterministic shuffle then split; the training share is rounded up.
template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_dataset(const std::vector<Item>& items, double train_fraction,
                                                              std::uint64_t seed) {
  if (items.empty()) throw std::invalid_argument("split_dataset: empty input");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * double(items.size()) - 1e-9));
  std::pair<std::vector<Item>, std::vector<Item>> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).push_back(items[order[i]]);
  return out;
}

/// One path per line; relative entries resolve against `root`.
inline std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest,
                                                        const std::filesystem::path& root = {}) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  const auto base = root.empty() ? manifest.parent_path() : root;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::filesystem::path p(line);
    out.push_back(p.is_absolute() ? p : base / p);
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& manifest, const std::vector<std::filesystem::path>& paths) {
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write manifest " + manifest.string());
  for (const auto& p : paths) out << p.generic_string() << '\n';
}

}  // namespace pcst
