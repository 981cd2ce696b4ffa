#pragma once

#include "pcst/pc_io.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pcst {

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Static k-d tree over 3-D points. Queries break distance ties toward the
/// lower point index so results match an exhaustive scan exactly.
class KdTree {
 public:
  explicit KdTree(const std::vector<Point3>& points) : points_(points), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) build(0, static_cast<std::uint32_t>(order_.size()));
  }

  std::size_t size() const { return points_.size(); }

  /// Index of the nearest point (lowest index among equidistant ones).
  std::size_t nearest(const Point3& q, double* dist2 = nullptr) const {
    if (points_.empty()) throw std::invalid_argument("KdTree::nearest: empty tree");
    Best best;
    search_nearest(0, q, best);
    if (dist2) *dist2 = best.d;
    return best.i;
  }

  /// k nearest points ordered by (distance, index).
  std::vector<std::size_t> knn(const Point3& q, std::size_t k) const {
    k = std::min(k, points_.size());
    std::priority_queue<std::pair<double, std::size_t>> heap;  // max-heap on (d, i)
    if (k > 0) search_knn(0, q, k, heap);
    std::vector<std::size_t> out(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
      out[i] = heap.top().second;
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::uint32_t begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0;
    std::uint32_t left = 0, right = 0;
  };
  struct Best {
    double d = std::numeric_limits<double>::infinity();
    std::size_t i = std::numeric_limits<std::size_t>::max();
  };
  static constexpr std::uint32_t kLeaf = 12;

  std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeaf) return id;
    Point3 lo{+1e300, +1e300, +1e300}, hi{-1e300, -1e300, -1e300};
    for (auto k = begin; k < end; ++k) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], points_[order_[k]][a]);
        hi[a] = std::max(hi[a], points_[order_[k]][a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    if (hi[axis] - lo[axis] <= 0) return id;  // all duplicates
    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) { return points_[x][axis] < points_[y][axis]; });
    const double split = points_[order_[mid]][axis];
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  // Left subtree holds coordinates <= split, right holds >= split.
  void search_nearest(std::uint32_t id, const Point3& q, Best& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (auto k = n.begin; k < n.end; ++k) {
        const std::size_t i = order_[k];
        const double d = squared_distance(q, points_[i]);
        if (d < best.d || (d == best.d && i < best.i)) best = {d, i};
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = diff <= 0 ? n.left : n.right;
    const auto far = diff <= 0 ? n.right : n.left;
    search_nearest(near, q, best);
    if (diff * diff <= best.d) search_nearest(far, q, best);
  }

  void search_knn(std::uint32_t id, const Point3& q, std::size_t k,
                  std::priority_queue<std::pair<double, std::size_t>>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (auto j = n.begin; j < n.end; ++j) {
        const std::pair<double, std::size_t> cand{squared_distance(q, points_[order_[j]]), order_[j]};
        if (heap.size() < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = diff <= 0 ? n.left : n.right;
    const auto far = diff <= 0 ? n.right : n.left;
    search_knn(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().first) search_knn(far, q, k, heap);
  }

  const std::vector<Point3>& points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Zero-error PSNR cap, dB.
inline constexpr double kPsnrCap = 100.0;

inline double psnr_from_error(double mse, double peak) {
  if (!(mse > 0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(3.0 * peak * peak / mse));
}

/// Channel bandwidth ratio: transmitted symbols over 3 * points.
inline double cbr(std::int64_t total_symbols, std::int64_t n_points) {
  if (n_points <= 0) throw std::invalid_argument("cbr: point count must be positive");
  if (total_symbols < 0) throw std::invalid_argument("cbr: negative symbol count");
  return double(total_symbols) / (3.0 * double(n_points));
}

/// Mean squared nearest-neighbour distance from every point of a to b.
inline double mean_nn_error(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  const KdTree tree(b);
  double acc = 0;
  for (const auto& p : a) {
    double d = 0;
    tree.nearest(p, &d);
    acc += d;
  }
  return acc / double(a.size());
}

/// Point-to-point PSNR, symmetrised by the larger directional error.
inline double d1_psnr(const std::vector<Point3>& a, const std::vector<Point3>& b, double peak) {
  if (a.empty() || b.empty()) throw std::invalid_argument("d1_psnr: empty cloud");
  return psnr_from_error(std::max(mean_nn_error(a, b), mean_nn_error(b, a)), peak);
}

struct NormalEstimate {
  std::vector<Point3> normals;
  std::vector<bool> fallback;  // true where the neighbourhood was degenerate
};

/// Smallest-eigenvector normals of each point's k_nn neighbourhood (the
/// point itself included), oriented toward the cloud centroid.
inline NormalEstimate estimate_normals(const std::vector<Point3>& cloud, std::size_t k_nn) {
  if (k_nn < 3) throw std::invalid_argument("estimate_normals: k_nn must be at least 3");
  if (cloud.size() <= k_nn) throw std::invalid_argument("estimate_normals: cloud must have more than k_nn points");
  const KdTree tree(cloud);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : cloud) centroid += Eigen::Vector3d(p[0], p[1], p[2]);
  centroid /= double(cloud.size());

  NormalEstimate out;
  out.normals.resize(cloud.size());
  out.fallback.assign(cloud.size(), false);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nb = tree.knn(cloud[i], k_nn);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (auto j : nb) mean += Eigen::Vector3d(cloud[j][0], cloud[j][1], cloud[j][2]);
    mean /= double(nb.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto j : nb) {
      const Eigen::Vector3d d = Eigen::Vector3d(cloud[j][0], cloud[j][1], cloud[j][2]) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const auto& ev = es.eigenvalues();  // ascending
    if (ev(1) <= 1e-12 * std::max(ev(2), 1e-300)) {
      out.normals[i] = {0.0, 0.0, 1.0};
      out.fallback[i] = true;
      continue;
    }
    Eigen::Vector3d n = es.eigenvectors().col(0).normalized();
    const Eigen::Vector3d to_centroid = centroid - Eigen::Vector3d(cloud[i][0], cloud[i][1], cloud[i][2]);
    double s = n.dot(to_centroid);
    if (s == 0.0) s = (n.x() != 0 ? n.x() : (n.y() != 0 ? n.y() : n.z()));
    if (s < 0) n = -n;
    out.normals[i] = {n.x(), n.y(), n.z()};
  }
  return out;
}

/// Normals for metric evaluation on clouds of any size: k is clamped to
/// the cloud, and clouds under three points get the fallback normal.
inline std::vector<Point3> metric_normals(const std::vector<Point3>& cloud, std::size_t k_nn = 9) {
  if (cloud.size() < 4) return std::vector<Point3>(cloud.size(), Point3{0.0, 0.0, 1.0});
  return estimate_normals(cloud, std::min(k_nn, cloud.size() - 1)).normals;
}

inline double mean_plane_error(const std::vector<Point3>& a, const std::vector<Point3>& b,
                               const std::vector<Point3>& normals_b) {
  const KdTree tree(b);
  double acc = 0;
  for (const auto& p : a) {
    const auto j = tree.nearest(p);
    const auto& n = normals_b[j];
    const double proj = (p[0] - b[j][0]) * n[0] + (p[1] - b[j][1]) * n[1] + (p[2] - b[j][2]) * n[2];
    acc += proj * proj;
  }
  return acc / double(a.size());
}

/// Point-to-plane PSNR; each direction projects onto the normals of the
/// cloud being searched, symmetrised by the larger error.
inline double d2_psnr(const std::vector<Point3>& a, const std::vector<Point3>& b, const std::vector<Point3>& normals_a,
                      const std::vector<Point3>& normals_b, double peak) {
  if (a.empty() || b.empty()) throw std::invalid_argument("d2_psnr: empty cloud");
  if (normals_a.size() != a.size() || normals_b.size() != b.size()) {
    throw std::invalid_argument("d2_psnr: normals must align with points");
  }
  return psnr_from_error(std::max(mean_plane_error(a, b, normals_b), mean_plane_error(b, a, normals_a)), peak);
}

inline double d2_psnr(const std::vector<Point3>& a, const std::vector<Point3>& b, double peak, std::size_t k_nn = 9) {
  return d2_psnr(a, b, metric_normals(a, k_nn), metric_normals(b, k_nn), peak);
}

inline std::vector<Point3> to_points(const std::vector<Coord>& coords) {
  std::vector<Point3> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back({double(c[0]), double(c[1]), double(c[2])});
  return out;
}

/// One transmission outcome.
struct TransmissionReport {
  double cbr_latent = 0;
  double cbr_side = 0;
  double cbr_total = 0;
  double d1_psnr_db = 0;
  double d2_psnr_db = 0;
  std::int64_t n_points_in = 0;
  std::int64_t n_points_out = 0;
  std::int64_t latent_symbols = 0;
  std::int64_t side_symbols = 0;
  double snr_db = 0;
  std::string channel_kind = "awgn";
  std::string lambda_id;
  std::string scheme = "pcst";
  std::string cloud;
  bool decoded = true;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const TransmissionReport& r) {
  j = nlohmann::json{{"cbr_latent", r.cbr_latent},   {"cbr_side", r.cbr_side},
                     {"cbr_total", r.cbr_total},     {"d1_psnr_db", r.d1_psnr_db},
                     {"d2_psnr_db", r.d2_psnr_db},   {"n_points_in", r.n_points_in},
                     {"n_points_out", r.n_points_out}, {"latent_symbols", r.latent_symbols},
                     {"side_symbols", r.side_symbols}, {"snr_db", r.snr_db},
                     {"channel_kind", r.channel_kind}, {"lambda_id", r.lambda_id},
                     {"scheme", r.scheme},           {"cloud", r.cloud},
                     {"decoded", r.decoded},         {"seed", r.seed}};
}

inline void from_json(const nlohmann::json& j, TransmissionReport& r) {
  r.cbr_latent = j.at("cbr_latent").get<double>();
  r.cbr_side = j.at("cbr_side").get<double>();
  r.cbr_total = j.at("cbr_total").get<double>();
  r.d1_psnr_db = j.at("d1_psnr_db").get<double>();
  r.d2_psnr_db = j.at("d2_psnr_db").get<double>();
  r.n_points_in = j.at("n_points_in").get<std::int64_t>();
  r.n_points_out = j.at("n_points_out").get<std::int64_t>();
  r.latent_symbols = j.value("latent_symbols", std::int64_t{0});
  r.side_symbols = j.value("side_symbols", std::int64_t{0});
  // A noiseless run (+inf dB) is stored as null.
  r.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity() : j.at("snr_db").get<double>();
  r.channel_kind = j.at("channel_kind").get<std::string>();
  r.lambda_id = j.value("lambda_id", std::string{});
  r.scheme = j.value("scheme", std::string{"pcst"});
  r.cloud = j.value("cloud", std::string{});
  r.decoded = j.value("decoded", true);
  r.seed = j.value("seed", std::uint64_t{0});
}

/// One JSON object per line.
inline std::string to_jsonl(const std::vector<TransmissionReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    out += nlohmann::json(r).dump();
    out += '\n';
  }
  return out;
}

}  // namespace pcst
