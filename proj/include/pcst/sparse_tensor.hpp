#pragma once

#include "pcst/autograd.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pcst {

using Coord = std::array<std::int32_t, 3>;

namespace detail {

inline std::int32_t floor_div(std::int32_t a, std::int32_t b) {
  std::int32_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// 21 bits per axis, biased so that small negative neighbours still pack.
inline std::uint64_t pack(const Coord& c) {
  constexpr std::int64_t bias = 1 << 20;
  return (static_cast<std::uint64_t>(c[0] + bias) << 42) | (static_cast<std::uint64_t>(c[1] + bias) << 21) |
         static_cast<std::uint64_t>(c[2] + bias);
}

inline bool packable(const Coord& c) {
  constexpr std::int32_t lim = (1 << 20) - 1;
  return c[0] >= -lim && c[0] <= lim && c[1] >= -lim && c[1] <= lim && c[2] >= -lim && c[2] <= lim;
}

}  // namespace detail

/// Offsets of an odd cubic kernel, lexicographic in (dx, dy, dz).
inline std::vector<Coord> kernel_offsets(int kernel_size) {
  if (kernel_size <= 0 || kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive");
  const int r = kernel_size / 2;
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(kernel_size * kernel_size * kernel_size));
  for (int x = -r; x <= r; ++x)
    for (int y = -r; y <= r; ++y)
      for (int z = -r; z <= r; ++z) out.push_back({x, y, z});
  return out;
}

/// Child offsets of the 2x2x2 generative window; slot = 4*bx + 2*by + bz.
inline std::vector<Coord> child_offsets() {
  std::vector<Coord> out;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) out.push_back({x, y, z});
  return out;
}

/// Input/output row pairs for each kernel slot.
struct KernelMap {
  std::vector<std::vector<int>> in_rows;
  std::vector<std::vector<int>> out_rows;
  // Slot whose map is the identity (stride-1 centre tap); its vectors stay empty.
  int identity_slot = -1;

  std::size_t slots() const { return in_rows.size(); }
};

/// Immutable, canonically ordered (lexicographic) set of lattice sites with
/// a hash index. Derived sets and kernel maps are memoised per instance.
class CoordinateSet {
 public:
  CoordinateSet(std::vector<Coord> coords, int stride) : coords_(std::move(coords)), stride_(stride) {
    if (stride_ <= 0) throw std::invalid_argument("CoordinateSet: stride must be positive");
    std::sort(coords_.begin(), coords_.end());
    coords_.erase(std::unique(coords_.begin(), coords_.end()), coords_.end());
    index_.reserve(coords_.size() * 2);
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      const Coord& c = coords_[i];
      for (int a = 0; a < 3; ++a) {
        if (c[a] % stride_ != 0) throw std::invalid_argument("CoordinateSet: coordinate not on stride lattice");
      }
      if (!detail::packable(c)) throw std::out_of_range("CoordinateSet: coordinate magnitude too large");
      index_.emplace(detail::pack(c), static_cast<int>(i));
    }
    id_ = next_id();
  }

  static std::shared_ptr<const CoordinateSet> make(std::vector<Coord> coords, int stride) {
    return std::make_shared<const CoordinateSet>(std::move(coords), stride);
  }

  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  int stride() const { return stride_; }
  const std::vector<Coord>& coords() const { return coords_; }
  const Coord& operator[](std::size_t i) const { return coords_[i]; }
  std::uint64_t id() const { return id_; }

  int find(const Coord& c) const {
    if (!detail::packable(c)) return -1;
    auto it = index_.find(detail::pack(c));
    return it == index_.end() ? -1 : it->second;
  }
  bool contains(const Coord& c) const { return find(c) >= 0; }

  /// Sites rounded down onto the lattice of twice the stride.
  std::shared_ptr<const CoordinateSet> coarsened() const {
    std::lock_guard lock(mutex_);
    if (!coarse_) {
      const int s2 = 2 * stride_;
      std::vector<Coord> out;
      out.reserve(coords_.size());
      for (const auto& c : coords_) {
        out.push_back({detail::floor_div(c[0], s2) * s2, detail::floor_div(c[1], s2) * s2,
                       detail::floor_div(c[2], s2) * s2});
      }
      coarse_ = make(std::move(out), s2);
    }
    return coarse_;
  }

  /// All eight children of every site on the lattice of half the stride.
  std::shared_ptr<const CoordinateSet> children() const {
    if (stride_ % 2 != 0) throw std::invalid_argument("CoordinateSet::children: stride must be even");
    std::lock_guard lock(mutex_);
    if (!children_) {
      const int t = stride_ / 2;
      std::vector<Coord> out;
      out.reserve(coords_.size() * 8);
      for (const auto& c : coords_)
        for (const auto& o : child_offsets()) out.push_back({c[0] + o[0] * t, c[1] + o[1] * t, c[2] + o[2] * t});
      children_ = make(std::move(out), t);
    }
    return children_;
  }

  /// Map for a convolution reading this set (input) and writing `out`.
  /// Input site for output o and offset d is o + d * stride().
  std::shared_ptr<const KernelMap> conv_map(const CoordinateSet& out, int kernel_size) const {
    const auto key = std::make_tuple(out.id(), kernel_size, 0);
    std::lock_guard lock(mutex_);
    if (auto it = maps_.find(key); it != maps_.end()) return it->second;
    const auto offsets = kernel_offsets(kernel_size);
    auto map = std::make_shared<KernelMap>();
    map->in_rows.resize(offsets.size());
    map->out_rows.resize(offsets.size());
    const bool same = (&out == this);
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const Coord& d = offsets[k];
      if (same && d == Coord{0, 0, 0}) {
        map->identity_slot = static_cast<int>(k);
        continue;
      }
      auto& ins = map->in_rows[k];
      auto& outs = map->out_rows[k];
      for (std::size_t o = 0; o < out.size(); ++o) {
        const Coord& c = out[o];
        const int i = find({c[0] + d[0] * stride_, c[1] + d[1] * stride_, c[2] + d[2] * stride_});
        if (i >= 0) {
          ins.push_back(i);
          outs.push_back(static_cast<int>(o));
        }
      }
    }
    maps_.emplace(key, map);
    return map;
  }

  /// Map for a transposed convolution from this (parent) set to `child`
  /// sites on the half-stride lattice; each child has at most one parent.
  std::shared_ptr<const KernelMap> transpose_map(const CoordinateSet& child) const {
    const auto key = std::make_tuple(child.id(), 2, 1);
    std::lock_guard lock(mutex_);
    if (auto it = maps_.find(key); it != maps_.end()) return it->second;
    auto map = std::make_shared<KernelMap>();
    map->in_rows.resize(8);
    map->out_rows.resize(8);
    const int t = child.stride();
    for (std::size_t o = 0; o < child.size(); ++o) {
      const Coord& c = child[o];
      const Coord p{detail::floor_div(c[0], stride_) * stride_, detail::floor_div(c[1], stride_) * stride_,
                    detail::floor_div(c[2], stride_) * stride_};
      const int i = find(p);
      if (i < 0) continue;
      const int slot = ((c[0] - p[0]) / t) * 4 + ((c[1] - p[1]) / t) * 2 + (c[2] - p[2]) / t;
      map->in_rows[slot].push_back(i);
      map->out_rows[slot].push_back(static_cast<int>(o));
    }
    maps_.emplace(key, map);
    return map;
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }

  std::vector<Coord> coords_;
  int stride_;
  std::unordered_map<std::uint64_t, int> index_;
  std::uint64_t id_ = 0;

  mutable std::mutex mutex_;
  mutable std::shared_ptr<const CoordinateSet> coarse_;
  mutable std::shared_ptr<const CoordinateSet> children_;
  mutable std::map<std::tuple<std::uint64_t, int, int>, std::shared_ptr<const KernelMap>> maps_;
};

using CoordSetPtr = std::shared_ptr<const CoordinateSet>;

/// Voxelised geometry or latent features: {C, F} plus lattice stride.
template <typename T>
struct SparseTensor {
  CoordSetPtr coords;
  ag::Matrix<T> feats;

  SparseTensor() = default;
  SparseTensor(CoordSetPtr c, ag::Matrix<T> f) : coords(std::move(c)), feats(std::move(f)) {
    if (!coords) throw std::invalid_argument("SparseTensor: null coordinate set");
    if (static_cast<std::size_t>(feats.rows()) != coords->size()) {
      throw std::invalid_argument("SparseTensor: feature rows must equal coordinate count");
    }
  }

  static SparseTensor occupancy(std::vector<Coord> coords, int stride = 1) {
    auto set = CoordinateSet::make(std::move(coords), stride);
    ag::Matrix<T> ones = ag::Matrix<T>::Ones(static_cast<Eigen::Index>(set->size()), 1);
    return SparseTensor(std::move(set), std::move(ones));
  }

  std::size_t size() const { return coords ? coords->size() : 0; }
  int stride() const { return coords->stride(); }
  Eigen::Index channels() const { return feats.cols(); }
};

/// Value-level convolution weights. Rows of `weights` are grouped by kernel
/// slot: slot k occupies rows [k*in, (k+1)*in).
template <typename T>
struct ConvKernel {
  ag::Matrix<T> weights;
  ag::Matrix<T> bias;  // 1 x out
  int kernel_size = 3;
  int stride = 1;

  ConvKernel() = default;
  ConvKernel(int in_channels, int out_channels, int kernel_size_, int stride_)
      : weights(ag::Matrix<T>::Zero(static_cast<Eigen::Index>(slots_for(kernel_size_)) * in_channels, out_channels)),
        bias(ag::Matrix<T>::Zero(1, out_channels)),
        kernel_size(kernel_size_),
        stride(stride_) {}

  static int slots_for(int k) { return k * k * k; }
  int slots() const { return slots_for(kernel_size); }
  Eigen::Index in_channels() const { return weights.rows() / slots(); }
  Eigen::Index out_channels() const { return weights.cols(); }

  auto slot(int k) { return weights.middleRows(static_cast<Eigen::Index>(k) * in_channels(), in_channels()); }
};

/// Differentiable counterpart of SparseTensor: coordinates plus a taped
/// feature matrix.
template <typename T>
struct SparseVar {
  CoordSetPtr coords;
  ag::Var<T> feats;

  std::size_t size() const { return coords->size(); }
  int stride() const { return coords->stride(); }
  Eigen::Index channels() const { return feats.cols(); }
};

/// Taped kernel: weights (slots*in x out) and an optional bias (1 x out).
template <typename T>
struct ConvVars {
  ag::Var<T> weight;
  ag::Var<T> bias;
  int kernel_size = 3;
  int stride = 1;
};

template <typename T>
ConvVars<T> constant_kernel(ag::Tape<T>& tape, const ConvKernel<T>& k) {
  return {tape.constant(k.weights), tape.constant(k.bias), k.kernel_size, k.stride};
}

namespace detail {

// out = bias + sum_k scatter(gather(in, in_rows[k]) * W_k, out_rows[k])
template <typename T>
ag::Var<T> apply_kernel_map(const ag::Var<T>& in, const ag::Var<T>& weight, const ag::Var<T>& bias,
                            std::shared_ptr<const KernelMap> map, Eigen::Index n_out) {
  const Eigen::Index cin = in.cols();
  const Eigen::Index cout = weight.cols();
  const auto slots = static_cast<Eigen::Index>(map->slots());
  if (weight.rows() != slots * cin) throw std::invalid_argument("sparse conv: channel-width mismatch");
  if (bias.valid() && (bias.rows() != 1 || bias.cols() != cout)) {
    throw std::invalid_argument("sparse conv: bias width mismatch");
  }

  ag::Matrix<T> out(n_out, cout);
  if (bias.valid()) {
    out.rowwise() = bias.value().row(0);
  } else {
    out.setZero();
  }
  const auto& x = in.value();
  const auto& w = weight.value();
  ag::Matrix<T> gathered;
  ag::Matrix<T> product;
  for (Eigen::Index k = 0; k < slots; ++k) {
    const auto wk = w.middleRows(k * cin, cin);
    if (k == map->identity_slot) {
      out.noalias() += x * wk;
      continue;
    }
    const auto& ins = map->in_rows[static_cast<std::size_t>(k)];
    const auto& outs = map->out_rows[static_cast<std::size_t>(k)];
    if (ins.empty()) continue;
    const auto m = static_cast<Eigen::Index>(ins.size());
    gathered.resize(m, cin);
    for (Eigen::Index r = 0; r < m; ++r) gathered.row(r) = x.row(ins[static_cast<std::size_t>(r)]);
    product.noalias() = gathered * wk;
    for (Eigen::Index r = 0; r < m; ++r) out.row(outs[static_cast<std::size_t>(r)]) += product.row(r);
  }

  std::vector<ag::Var<T>> inputs{in, weight};
  if (bias.valid()) inputs.push_back(bias);
  return in.tape()->push(std::move(out), inputs, [in, weight, bias, map, cin](ag::Tape<T>& t, const ag::Matrix<T>& g) {
    const bool need_in = t.requires_grad(in);
    const bool need_w = t.requires_grad(weight);
    const auto& x = in.value();
    const auto& w = weight.value();
    ag::Matrix<T> gathered_x;
    ag::Matrix<T> gathered_g;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(map->slots()); ++k) {
      const auto wk = w.middleRows(k * cin, cin);
      if (k == map->identity_slot) {
        if (need_in) t.grad(in).noalias() += g * wk.transpose();
        if (need_w) t.grad(weight).middleRows(k * cin, cin).noalias() += x.transpose() * g;
        continue;
      }
      const auto& ins = map->in_rows[static_cast<std::size_t>(k)];
      const auto& outs = map->out_rows[static_cast<std::size_t>(k)];
      if (ins.empty()) continue;
      const auto m = static_cast<Eigen::Index>(ins.size());
      gathered_g.resize(m, g.cols());
      for (Eigen::Index r = 0; r < m; ++r) gathered_g.row(r) = g.row(outs[static_cast<std::size_t>(r)]);
      if (need_in) {
        ag::Matrix<T> back = gathered_g * wk.transpose();
        auto& gx = t.grad(in);
        for (Eigen::Index r = 0; r < m; ++r) gx.row(ins[static_cast<std::size_t>(r)]) += back.row(r);
      }
      if (need_w) {
        gathered_x.resize(m, cin);
        for (Eigen::Index r = 0; r < m; ++r) gathered_x.row(r) = x.row(ins[static_cast<std::size_t>(r)]);
        t.grad(weight).middleRows(k * cin, cin).noalias() += gathered_x.transpose() * gathered_g;
      }
    }
    if (bias.valid() && t.requires_grad(bias)) t.grad(bias).row(0) += g.colwise().sum();
  });
}

}  // namespace detail

/// Sparse convolution. Stride 1 is submanifold (output sites = input
/// sites); stride 2 writes to the input sites rounded down onto the
/// doubled lattice.
template <typename T>
SparseVar<T> conv(const SparseVar<T>& in, const ConvVars<T>& k) {
  if (k.kernel_size <= 0 || k.kernel_size % 2 == 0) throw std::invalid_argument("sparse_conv: kernel size must be odd");
  if (k.stride != 1 && k.stride != 2) throw std::invalid_argument("sparse_conv: stride must be 1 or 2");
  CoordSetPtr out = (k.stride == 1) ? in.coords : in.coords->coarsened();
  auto map = in.coords->conv_map(*out, k.kernel_size);
  auto feats = detail::apply_kernel_map(in.feats, k.weight, k.bias, map, static_cast<Eigen::Index>(out->size()));
  return {out, feats};
}

/// Transposed stride-2 convolution over the 2x2x2 generative window: every
/// input site spawns its eight children at `target_stride`.
template <typename T>
SparseVar<T> conv_transpose(const SparseVar<T>& in, const ConvVars<T>& k, int target_stride) {
  if (k.kernel_size != 2) throw std::invalid_argument("sparse_conv_transpose: kernel must cover the 2x2x2 window");
  if (in.stride() % 2 != 0 || target_stride * 2 != in.stride()) {
    throw std::invalid_argument("sparse_conv_transpose: target stride must be half the input stride");
  }
  CoordSetPtr out = in.coords->children();
  auto map = in.coords->transpose_map(*out);
  auto feats = detail::apply_kernel_map(in.feats, k.weight, k.bias, map, static_cast<Eigen::Index>(out->size()));
  return {out, feats};
}

/// Keeps the sites where mask is true, preserving order.
template <typename T>
SparseVar<T> prune(const SparseVar<T>& in, const std::vector<bool>& keep) {
  if (keep.size() != in.size()) throw std::invalid_argument("prune: mask length must equal coordinate count");
  std::vector<Coord> kept;
  std::vector<int> rows;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) {
      kept.push_back((*in.coords)[i]);
      rows.push_back(static_cast<int>(i));
    }
  }
  auto set = CoordinateSet::make(std::move(kept), in.stride());
  return {set, ag::gather_rows(in.feats, std::move(rows))};
}

template <typename T>
SparseVar<T> relu(const SparseVar<T>& in) {
  return {in.coords, ag::relu(in.feats)};
}

/// Channel split of an Inception-Residual block: (1/4, 1/4, rest).
struct IrnSplit {
  int one_by_one;
  int three;
  int stacked;

  static IrnSplit for_channels(int channels) {
    const int q = channels / 4;
    return {q, q, channels - 2 * q};
  }
};

/// Taped Inception-Residual block weights: three parallel stride-1
/// branches, 1x1x1, 3x3x3 and 3x3x3 -> ReLU -> 3x3x3.
template <typename T>
struct IrnVars {
  ConvVars<T> branch1;
  ConvVars<T> branch2;
  ConvVars<T> branch3a;
  ConvVars<T> branch3b;
};

template <typename T>
struct IrnParams {
  ConvKernel<T> branch1;
  ConvKernel<T> branch2;
  ConvKernel<T> branch3a;
  ConvKernel<T> branch3b;

  static IrnParams zeros(int channels, int kernel_size = 3) {
    const auto s = IrnSplit::for_channels(channels);
    return {ConvKernel<T>(channels, s.one_by_one, 1, 1), ConvKernel<T>(channels, s.three, kernel_size, 1),
            ConvKernel<T>(channels, s.stacked, kernel_size, 1), ConvKernel<T>(s.stacked, s.stacked, kernel_size, 1)};
  }

  IrnVars<T> on(ag::Tape<T>& tape) const {
    return {constant_kernel(tape, branch1), constant_kernel(tape, branch2), constant_kernel(tape, branch3a),
            constant_kernel(tape, branch3b)};
  }
};

/// output = input + concat(branch1, branch2, branch3); coordinates unchanged.
template <typename T>
SparseVar<T> irn(const SparseVar<T>& in, const IrnVars<T>& p) {
  const Eigen::Index width = p.branch1.weight.cols() + p.branch2.weight.cols() + p.branch3b.weight.cols();
  if (width != in.channels()) throw std::invalid_argument("irn_block: channel mismatch");
  std::vector<ag::Var<T>> parts;
  if (p.branch1.weight.cols() > 0) parts.push_back(conv(in, p.branch1).feats);
  if (p.branch2.weight.cols() > 0) parts.push_back(conv(in, p.branch2).feats);
  if (p.branch3b.weight.cols() > 0) {
    auto mid = relu(conv(in, p.branch3a));
    parts.push_back(conv(mid, p.branch3b).feats);
  }
  return {in.coords, ag::add(in.feats, ag::concat_cols(parts))};
}

// Value-level entry points. They evaluate on an inference tape.

template <typename T>
SparseTensor<T> sparse_conv(const SparseTensor<T>& input, const ConvKernel<T>& kernel) {
  if (kernel.in_channels() != input.channels()) throw std::invalid_argument("sparse_conv: channel-width mismatch");
  ag::Tape<T> tape(false);
  auto out = conv(SparseVar<T>{input.coords, tape.constant(input.feats)}, constant_kernel(tape, kernel));
  return SparseTensor<T>(out.coords, out.feats.value());
}

template <typename T>
SparseTensor<T> sparse_conv_transpose(const SparseTensor<T>& input, const ConvKernel<T>& kernel, int target_stride) {
  if (kernel.in_channels() != input.channels()) {
    throw std::invalid_argument("sparse_conv_transpose: channel-width mismatch");
  }
  if (input.size() == 0) {
    if (input.stride() % 2 != 0 || target_stride * 2 != input.stride()) {
      throw std::invalid_argument("sparse_conv_transpose: target stride must be half the input stride");
    }
    return SparseTensor<T>(CoordinateSet::make({}, target_stride), ag::Matrix<T>(0, kernel.out_channels()));
  }
  ag::Tape<T> tape(false);
  auto out = conv_transpose(SparseVar<T>{input.coords, tape.constant(input.feats)}, constant_kernel(tape, kernel),
                            target_stride);
  return SparseTensor<T>(out.coords, out.feats.value());
}

template <typename T>
SparseTensor<T> prune(const SparseTensor<T>& input, const std::vector<bool>& keep_mask) {
  if (keep_mask.size() != input.size()) throw std::invalid_argument("prune: mask length must equal coordinate count");
  ag::Tape<T> tape(false);
  auto out = prune(SparseVar<T>{input.coords, tape.constant(input.feats)}, keep_mask);
  return SparseTensor<T>(out.coords, out.feats.value());
}

template <typename T>
SparseTensor<T> irn_block(const SparseTensor<T>& input, const IrnParams<T>& params) {
  ag::Tape<T> tape(false);
  auto out = irn(SparseVar<T>{input.coords, tape.constant(input.feats)}, params.on(tape));
  return SparseTensor<T>(out.coords, out.feats.value());
}

}  // namespace pcst
