#pragma once

#include "pcst/autograd.hpp"
#include "pcst/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

/// Smallest likelihood handed to the rate computation.
inline constexpr double kLikelihoodFloor = 1e-9;

enum class QuantMode { train, eval };

/// Training mode adds i.i.d. U(-1/2, 1/2) noise; eval mode rounds.
template <typename T>
ag::Matrix<T> quantize_proxy(const ag::Matrix<T>& f, QuantMode mode, std::mt19937_64& rng) {
  if (mode == QuantMode::eval) return f.array().round().matrix();
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  ag::Matrix<T> out = f;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += static_cast<T>(u(rng));
  return out;
}

template <typename T>
ag::Matrix<T> quantize_proxy(const ag::Matrix<T>& f, QuantMode mode, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return quantize_proxy(f, mode, rng);
}

/// Per-channel monotone CDFs, each a stack of affine maps with
/// softplus-positive matrices and tanh-gated nonlinearities.
///
/// With filters {f1, ..., fL} channel c computes
///   h_0 = x,  h_{k+1} = g_k(h_k * softplus(H_k) + b_k),
///   g_k(v) = v + tanh(a_k) .* tanh(v)   (no gate on the last layer),
/// and c(x) = sigmoid(h_{L+1}). Monotonicity follows from softplus(H) > 0
/// and tanh(a) > -1.
template <typename T>
class FactorizedDensity {
 public:
  FactorizedDensity() = default;

  FactorizedDensity(nn::ParameterStore<T>& store, const std::string& prefix, int channels,
                    std::vector<int> filters, double init_scale, std::mt19937_64& rng)
      : channels_(channels), filters_(std::move(filters)) {
    if (channels <= 0) throw std::invalid_argument("FactorizedDensity: channel count must be positive");
    std::vector<int> widths{1};
    widths.insert(widths.end(), filters_.begin(), filters_.end());
    widths.push_back(1);
    const double scale = std::pow(init_scale, 1.0 / double(widths.size() - 1));
    std::uniform_real_distribution<double> ub(-0.5, 0.5);
    layers_.resize(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c) {
      for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        const std::string base = prefix + ".c" + std::to_string(c) + ".l" + std::to_string(k);
        Layer layer;
        layer.matrix = &store.create(base + ".matrix", widths[k], widths[k + 1]);
        layer.matrix->value.setConstant(static_cast<T>(std::log(std::expm1(1.0 / scale / widths[k + 1]))));
        layer.bias = &store.create(base + ".bias", 1, widths[k + 1]);
        for (Eigen::Index i = 0; i < layer.bias->value.size(); ++i) layer.bias->value.data()[i] = static_cast<T>(ub(rng));
        if (k + 2 < widths.size()) layer.factor = &store.create(base + ".factor", 1, widths[k + 1]);
        layers_[static_cast<std::size_t>(c)].push_back(layer);
      }
    }
  }

  int channels() const { return channels_; }
  const std::vector<int>& filters() const { return filters_; }

  /// CDF logits of channel c at each entry of the column x (N x 1).
  ag::Var<T> logits(ag::Tape<T>& tape, int c, const ag::Var<T>& x) const {
    ag::Var<T> h = x;
    for (const auto& layer : layers_.at(static_cast<std::size_t>(c))) {
      h = ag::linear(h, ag::softplus(tape.parameter(*layer.matrix)), tape.parameter(*layer.bias));
      if (layer.factor) h = ag::add(h, ag::mul_row(ag::tanh(h), ag::tanh(tape.parameter(*layer.factor))));
    }
    return h;
  }

  /// Per-channel likelihood of f_tilde (N x channels) under the density
  /// convolved with U(-1/2, 1/2): c(f + 1/2) - c(f - 1/2), floored.
  ag::Var<T> likelihood(ag::Tape<T>& tape, const ag::Var<T>& f_tilde) const {
    if (f_tilde.cols() != channels_) throw std::invalid_argument("likelihood: channel count mismatch");
    const Eigen::Index n = f_tilde.rows();
    ag::Var<T> half = tape.constant(ag::Matrix<T>::Constant(n, 1, T(0.5)));
    std::vector<ag::Var<T>> cols;
    cols.reserve(static_cast<std::size_t>(channels_));
    for (int c = 0; c < channels_; ++c) {
      auto x = ag::slice_cols(f_tilde, c, 1);
      auto lower = logits(tape, c, ag::sub(x, half));
      auto upper = logits(tape, c, ag::add(x, half));
      cols.push_back(ag::lower_bound(ag::cdf_difference(lower, upper), static_cast<T>(kLikelihoodFloor)));
    }
    return ag::concat_cols(cols);
  }

  ag::Matrix<T> likelihood(const ag::Matrix<T>& f_tilde) const {
    ag::Tape<T> tape(false);
    return likelihood(tape, tape.constant(f_tilde)).value();
  }

  /// c(x) for channel c at each x.
  std::vector<double> cdf(int c, const std::vector<double>& xs) const {
    ag::Tape<T> tape(false);
    ag::Matrix<T> col(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = static_cast<T>(xs[i]);
    const auto l = logits(tape, c, tape.constant(col)).value();
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out[i] = static_cast<double>(ag::detail::stable_sigmoid(l(static_cast<Eigen::Index>(i), 0)));
    }
    return out;
  }

  /// Mean and standard deviation of each channel's integer pmf over
  /// [-range, range]; the {mu, sigma} summary of the fitted density.
  std::vector<std::pair<double, double>> statistics(int range = 30) const {
    std::vector<std::pair<double, double>> out;
    ag::Matrix<T> grid(2 * range + 1, channels_);
    for (int i = -range; i <= range; ++i) grid.row(i + range).setConstant(static_cast<T>(i));
    const auto p = likelihood(grid);
    for (int c = 0; c < channels_; ++c) {
      double mass = 0, mean = 0, sq = 0;
      for (int i = -range; i <= range; ++i) {
        const double w = static_cast<double>(p(i + range, c));
        mass += w;
        mean += w * i;
        sq += w * i * i;
      }
      mean /= mass;
      out.emplace_back(mean, std::sqrt(std::max(0.0, sq / mass - mean * mean)));
    }
    return out;
  }

 private:
  struct Layer {
    ag::Parameter<T>* matrix = nullptr;
    ag::Parameter<T>* bias = nullptr;
    ag::Parameter<T>* factor = nullptr;
  };

  int channels_ = 0;
  std::vector<int> filters_;
  std::vector<std::vector<Layer>> layers_;
};

/// Real-valued symbol budget -eta * log2(P).
inline double symbol_budget(double likelihood, double eta) {
  if (!(likelihood > 0.0) || likelihood > 1.0) throw std::invalid_argument("symbol_budget: likelihood must be in (0, 1]");
  if (!(eta > 0.0)) throw std::invalid_argument("symbol_budget: eta must be positive");
  return -eta * std::log2(likelihood);
}

/// Index of the klist entry nearest to k_real; ties go to the larger entry.
inline std::size_t quantize_budget_index(double k_real, const std::vector<int>& klist) {
  if (klist.empty()) throw std::invalid_argument("quantize_budget: empty klist");
  if (!std::is_sorted(klist.begin(), klist.end())) throw std::invalid_argument("quantize_budget: klist must be sorted");
  std::size_t best = 0;
  double best_dist = std::abs(k_real - klist[0]);
  for (std::size_t i = 1; i < klist.size(); ++i) {
    const double d = std::abs(k_real - klist[i]);
    if (d <= best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

inline int quantize_budget(double k_real, const std::vector<int>& klist) {
  return klist[quantize_budget_index(k_real, klist)];
}

inline std::int64_t total_bandwidth(const std::vector<int>& k) {
  return std::accumulate(k.begin(), k.end(), std::int64_t{0});
}

/// Per-coordinate symbol lengths chosen from klist.
struct RateAllocation {
  std::vector<int> k;
  std::vector<std::size_t> index;  // into klist
  double eta = 0.25;
  std::vector<int> klist;

  std::int64_t total() const { return total_bandwidth(k); }
};

/// Budgets from per-coordinate information content in bits.
inline RateAllocation allocate(const std::vector<double>& bits, double eta, const std::vector<int>& klist) {
  RateAllocation a;
  a.eta = eta;
  a.klist = klist;
  a.k.reserve(bits.size());
  a.index.reserve(bits.size());
  for (double b : bits) {
    const auto i = quantize_budget_index(eta * b, klist);
    a.index.push_back(i);
    a.k.push_back(klist[i]);
  }
  return a;
}

inline RateAllocation allocation_from_indices(std::vector<std::size_t> index, double eta, const std::vector<int>& klist) {
  RateAllocation a;
  a.eta = eta;
  a.klist = klist;
  for (auto i : index) {
    if (i >= klist.size()) throw std::invalid_argument("allocation: klist index out of range");
    a.k.push_back(klist[i]);
  }
  a.index = std::move(index);
  return a;
}

}  // namespace pcst
