#pragma once

#include "pcst/channel.hpp"
#include "pcst/config.hpp"
#include "pcst/entropy_model.hpp"
#include "pcst/nn.hpp"
#include "pcst/sparse_tensor.hpp"

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

/// Channel symbols of one transmission. Consecutive reals (r0, r1) form
/// r0 + i r1; lengths are real counts per latent coordinate in canonical
/// coordinate order.
struct SymbolSequence {
  std::vector<cdouble> symbols;
  std::vector<int> lengths;
  double scale = 1.0;
  bool degenerate = false;
};

/// Where each coordinate's reals live in the concatenated sequence and
/// which coordinates share an FC branch.
struct SymbolLayout {
  std::vector<std::int64_t> offset;             // first real of coordinate i
  std::vector<std::size_t> branch;              // klist index of coordinate i
  std::vector<std::vector<int>> members;        // coordinates per klist entry, ascending
  std::int64_t total = 0;

  static SymbolLayout make(const std::vector<int>& k, const std::vector<int>& klist) {
    SymbolLayout l;
    l.members.resize(klist.size());
    l.offset.reserve(k.size());
    l.branch.reserve(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) {
      const auto it = std::find(klist.begin(), klist.end(), k[i]);
      if (it == klist.end()) throw std::invalid_argument("jscc: length " + std::to_string(k[i]) + " is not in klist");
      const auto j = static_cast<std::size_t>(it - klist.begin());
      l.offset.push_back(l.total);
      l.branch.push_back(j);
      l.members[j].push_back(static_cast<int>(i));
      l.total += k[i];
    }
    return l;
  }
};

/// Per-coordinate fading blocks: coordinate i owns k_i / 2 complex symbols.
inline std::vector<std::size_t> fading_blocks(const std::vector<int>& k) {
  std::vector<std::size_t> b;
  b.reserve(k.size());
  for (int v : k) {
    if (v % 2 != 0) throw std::invalid_argument("fading_blocks: lengths must be even");
    b.push_back(static_cast<std::size_t>(v / 2));
  }
  return b;
}

template <typename T>
std::vector<cdouble> to_complex(const ag::Matrix<T>& reals) {
  if (reals.cols() != 1 || reals.rows() % 2 != 0) throw std::invalid_argument("to_complex: expects an even-length column");
  std::vector<cdouble> out(static_cast<std::size_t>(reals.rows() / 2));
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = {double(reals(2 * Eigen::Index(j), 0)), double(reals(2 * Eigen::Index(j) + 1, 0))};
  }
  return out;
}

template <typename T>
ag::Matrix<T> to_reals(const std::vector<cdouble>& s) {
  ag::Matrix<T> out(static_cast<Eigen::Index>(2 * s.size()), 1);
  for (std::size_t j = 0; j < s.size(); ++j) {
    out(2 * Eigen::Index(j), 0) = static_cast<T>(s[j].real());
    out(2 * Eigen::Index(j) + 1, 0) = static_cast<T>(s[j].imag());
  }
  return out;
}

/// transmit + equalize as a differentiable map of the real column.
template <typename T>
ag::Var<T> apply_channel(const ag::Var<T>& x, const ChannelRealization& ch) {
  std::vector<cdouble> a, b;
  effective_affine(ch, a, b);
  std::vector<std::complex<T>> at(a.size()), bt(b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    at[j] = {static_cast<T>(a[j].real()), static_cast<T>(a[j].imag())};
    bt[j] = {static_cast<T>(b[j].real()), static_cast<T>(b[j].imag())};
  }
  return ag::complex_affine(x, at, bt);
}

/// Rating embedding + IRN + switchable FC layers, and the mirrored decoder.
template <typename T>
class JsccCodec {
 public:
  JsccCodec() = default;
  JsccCodec(nn::ParameterStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng)
      : klist_(cfg.klist), latent_(cfg.latent_channels), embed_(cfg.embed_dim) {
    const int width = cfg.jscc_width();
    if (embed_ > 0) {
      embedding_ = &store.create("jscc.embed", static_cast<Eigen::Index>(klist_.size()), embed_);
      nn::init_uniform(*embedding_, T(1), rng);
    }
    for (int b = 0; b < cfg.jscc_irn_blocks; ++b)
      enc_irn_.emplace_back(store, "jscc.enc.irn" + std::to_string(b), width, cfg.kernel_size, rng);
    for (int k : klist_) {
      fc_.emplace_back(store, "jscc.fc.k" + std::to_string(k), width, k, rng);
      fc_inv_.emplace_back(store, "jscc.fcinv.k" + std::to_string(k), k, width, rng);
    }
    for (int b = 0; b < cfg.jscc_irn_blocks; ++b)
      dec_irn_.emplace_back(store, "jscc.dec.irn" + std::to_string(b), width, cfg.kernel_size, rng);
  }

  const std::vector<int>& klist() const { return klist_; }

  /// Pre-normalisation reals, sum(k) x 1, canonical coordinate order.
  ag::Var<T> encode_reals(ag::Tape<T>& tape, const SparseVar<T>& y, const std::vector<int>& k) const {
    if (k.size() != y.size()) throw std::invalid_argument("jscc_encode: one length per latent coordinate");
    if (y.channels() != latent_) throw std::invalid_argument("jscc_encode: latent width mismatch");
    if (y.size() == 0) return tape.constant(ag::Matrix<T>(0, 1));
    const auto layout = SymbolLayout::make(k, klist_);

    ag::Var<T> h = y.feats;
    if (embedding_) {
      std::vector<int> rows(layout.branch.begin(), layout.branch.end());
      h = ag::concat_cols<T>({h, ag::gather_rows(tape.parameter(*embedding_), rows)});
    }
    SparseVar<T> sv{y.coords, h};
    for (const auto& block : enc_irn_) sv = block(tape, sv);

    std::vector<ag::Var<T>> parts;
    std::vector<std::int64_t> group_base(klist_.size(), 0);
    std::int64_t at = 0;
    for (std::size_t j = 0; j < klist_.size(); ++j) {
      const auto& m = layout.members[j];
      group_base[j] = at;
      if (m.empty()) continue;
      auto out = fc_[j](tape, ag::gather_rows(sv.feats, m));
      parts.push_back(ag::reshape(out, out.rows() * out.cols(), 1));
      at += static_cast<std::int64_t>(m.size()) * klist_[j];
    }
    auto grouped = ag::concat_rows(parts);
    return ag::gather_rows(grouped, canonical_order(layout, group_base));
  }

  ag::Normalized<T> encode(ag::Tape<T>& tape, const SparseVar<T>& y, const std::vector<int>& k) const {
    return ag::power_normalize(encode_reals(tape, y, k));
  }

  /// Received reals (sum(k) x 1) back to latent features on `coords`.
  SparseVar<T> decode(ag::Tape<T>& tape, const ag::Var<T>& received, const CoordSetPtr& coords,
                      const std::vector<int>& k) const {
    if (!coords) throw std::invalid_argument("jscc_decode: null coordinates");
    if (k.size() != coords->size()) throw std::invalid_argument("jscc_decode: one length per latent coordinate");
    const auto layout = SymbolLayout::make(k, klist_);
    if (received.cols() != 1 || received.rows() != layout.total) {
      throw std::invalid_argument("jscc_decode: symbol layout does not match the length list");
    }
    if (coords->empty()) return {coords, tape.constant(ag::Matrix<T>(0, latent_))};

    std::vector<ag::Var<T>> parts;
    std::vector<int> where(k.size());
    int row = 0;
    for (std::size_t j = 0; j < klist_.size(); ++j) {
      const auto& m = layout.members[j];
      if (m.empty()) continue;
      std::vector<int> idx;
      idx.reserve(m.size() * static_cast<std::size_t>(klist_[j]));
      for (int i : m) {
        where[static_cast<std::size_t>(i)] = row++;
        for (int t = 0; t < klist_[j]; ++t) idx.push_back(static_cast<int>(layout.offset[static_cast<std::size_t>(i)]) + t);
      }
      auto block = ag::reshape(ag::gather_rows(received, std::move(idx)), static_cast<Eigen::Index>(m.size()), klist_[j]);
      parts.push_back(fc_inv_[j](tape, block));
    }
    SparseVar<T> sv{coords, ag::gather_rows(ag::concat_rows(parts), where)};
    for (const auto& block : dec_irn_) sv = block(tape, sv);
    return {coords, ag::slice_cols(sv.feats, 0, latent_)};
  }

 private:
  static std::vector<int> canonical_order(const SymbolLayout& layout, const std::vector<std::int64_t>& group_base) {
    std::vector<int> perm(static_cast<std::size_t>(layout.total));
    std::vector<std::int64_t> rank(layout.members.size(), 0);
    for (std::size_t i = 0; i < layout.branch.size(); ++i) {
      const auto j = layout.branch[i];
      const auto len = (i + 1 < layout.offset.size() ? layout.offset[i + 1] : layout.total) - layout.offset[i];
      const std::int64_t src = group_base[j] + rank[j]++ * len;
      for (std::int64_t t = 0; t < len; ++t) perm[static_cast<std::size_t>(layout.offset[i] + t)] = static_cast<int>(src + t);
    }
    return perm;
  }

  std::vector<int> klist_;
  int latent_ = 8;
  int embed_ = 4;
  ag::Parameter<T>* embedding_ = nullptr;
  std::vector<nn::IrnLayer<T>> enc_irn_, dec_irn_;
  std::vector<nn::Linear<T>> fc_, fc_inv_;
};

/// Inference-tape wrappers operating on plain tensors and symbol lists.
template <typename T>
SymbolSequence jscc_encode(const JsccCodec<T>& codec, const SparseTensor<T>& y_tilde, const RateAllocation& alloc) {
  ag::Tape<T> tape(false);
  const auto n = codec.encode(tape, SparseVar<T>{y_tilde.coords, tape.constant(y_tilde.feats)}, alloc.k);
  SymbolSequence s;
  s.symbols = to_complex<T>(n.output.value());
  s.lengths = alloc.k;
  s.scale = double(n.scale);
  s.degenerate = n.degenerate;
  return s;
}

template <typename T>
SparseTensor<T> jscc_decode(const JsccCodec<T>& codec, const SymbolSequence& s_hat, const CoordSetPtr& coords,
                            const RateAllocation& alloc) {
  if (s_hat.lengths != alloc.k) throw std::invalid_argument("jscc_decode: length list does not match the allocation");
  ag::Tape<T> tape(false);
  const auto out = codec.decode(tape, tape.constant(to_reals<T>(s_hat.symbols)), coords, alloc.k);
  return {out.coords, out.feats.value()};
}

}  // namespace pcst
