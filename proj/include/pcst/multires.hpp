#pragma once

#include "pcst/config.hpp"
#include "pcst/nn.hpp"
#include "pcst/sparse_tensor.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

/// Ground-truth occupied counts at the three upsampling targets, coarse to
/// fine: strides 4, 2, 1. n[2] is the input voxel count.
struct ScalePointCounts {
  std::array<std::int64_t, 3> n{};

  bool valid() const { return n[0] > 0 && n[1] > 0 && n[2] > 0; }
  bool operator==(const ScalePointCounts&) const = default;
};

/// Occupied sites of the input at strides 4, 2, 1 (same order as the counts).
inline std::array<CoordSetPtr, 3> scale_truth(const CoordSetPtr& input) {
  if (!input || input->stride() != 1) throw std::invalid_argument("scale_truth: expects a stride-1 coordinate set");
  auto s2 = input->coarsened();
  return {s2->coarsened(), s2, input};
}

inline ScalePointCounts scale_counts(const CoordSetPtr& input) {
  const auto t = scale_truth(input);
  return {{static_cast<std::int64_t>(t[0]->size()), static_cast<std::int64_t>(t[1]->size()),
           static_cast<std::int64_t>(t[2]->size())}};
}

/// Indices of the k largest scores; ties go to the lower index, i.e. the
/// earlier site in canonical order. Returned as a keep mask.
template <typename S>
std::vector<bool> topk_mask(const std::vector<S>& scores, std::int64_t k) {
  if (k < 0) throw std::invalid_argument("topk_prune: k must be non-negative");
  std::vector<bool> keep(scores.size(), false);
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), scores.size());
  if (n == scores.size()) {
    std::fill(keep.begin(), keep.end(), true);
    return keep;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  for (std::size_t i = 0; i < n; ++i) keep[order[i]] = true;
  return keep;
}

template <typename T>
SparseTensor<T> topk_prune(const SparseTensor<T>& candidates, const std::vector<double>& probs, std::int64_t k) {
  if (probs.size() != candidates.size()) throw std::invalid_argument("topk_prune: one probability per candidate");
  return prune(candidates, topk_mask(probs, k));
}

/// Probability-threshold alternative: keep p >= N / |candidates|, never
/// returning an empty set.
template <typename S>
std::vector<bool> threshold_mask(const std::vector<S>& probs, std::int64_t n_target) {
  std::vector<bool> keep(probs.size(), false);
  if (probs.empty()) return keep;
  const double tau = double(n_target) / double(probs.size());
  bool any = false;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    keep[i] = double(probs[i]) >= tau;
    any = any || keep[i];
  }
  if (!any) keep[static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin())] = true;
  return keep;
}

/// Encoder: per stage stride-2 conv -> ReLU -> IRN x n, then a 1x1 conv to
/// the latent width.
template <typename T>
class MultiscaleEncoder {
 public:
  MultiscaleEncoder() = default;
  MultiscaleEncoder(nn::ParameterStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    int in = 1;
    for (std::size_t s = 0; s < cfg.enc_channels.size(); ++s) {
      const std::string base = "enc.s" + std::to_string(s);
      const int out = cfg.enc_channels[s];
      down_.emplace_back(store, base + ".down", in, out, cfg.kernel_size, 2, rng);
      std::vector<nn::IrnLayer<T>> blocks;
      for (int b = 0; b < cfg.irn_per_stage; ++b)
        blocks.emplace_back(store, base + ".irn" + std::to_string(b), out, cfg.kernel_size, rng);
      irn_.push_back(std::move(blocks));
      in = out;
    }
    to_latent_ = nn::SparseConvLayer<T>(store, "enc.latent", in, cfg.latent_channels, 1, 1, rng, 0.5);
  }

  SparseVar<T> operator()(ag::Tape<T>& tape, const SparseVar<T>& x) const {
    if (x.size() == 0) throw std::invalid_argument("encode: empty input");
    if (x.stride() != 1 || x.channels() != 1) throw std::invalid_argument("encode: expects a stride-1 occupancy tensor");
    SparseVar<T> h = x;
    for (std::size_t s = 0; s < down_.size(); ++s) {
      h = relu(down_[s](tape, h));
      for (const auto& block : irn_[s]) h = block(tape, h);
    }
    return to_latent_(tape, h);
  }

 private:
  std::vector<nn::SparseConvLayer<T>> down_;
  std::vector<std::vector<nn::IrnLayer<T>>> irn_;
  nn::SparseConvLayer<T> to_latent_;
};

template <typename T>
struct DecodeStage {
  SparseVar<T> candidates;
  ag::Var<T> logits;             // candidates x 1
  std::vector<std::uint8_t> truth;  // filled when targets are supplied
  std::vector<bool> keep;
};

template <typename T>
struct DecodeResult {
  std::vector<DecodeStage<T>> stages;
  CoordSetPtr output;
  std::vector<std::string> warnings;
};

/// Supervision for training: ground-truth sites per stage. With keep_truth
/// the true sites always survive pruning so later stages see them.
struct DecodeTargets {
  std::array<CoordSetPtr, 3> truth;
  bool keep_truth = true;
};

/// Decoder: per stage transposed conv -> ReLU -> IRN x n -> occupancy
/// logits -> prune to the transmitted count.
template <typename T>
class MultiscaleDecoder {
 public:
  MultiscaleDecoder() = default;
  MultiscaleDecoder(nn::ParameterStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng)
      : generation_(cfg.generation) {
    int in = cfg.latent_channels;
    const int stages = static_cast<int>(cfg.enc_channels.size());
    for (int s = 0; s < stages; ++s) {
      const std::string base = "dec.s" + std::to_string(s);
      const int out = cfg.enc_channels[static_cast<std::size_t>(stages - 1 - s)];
      up_.emplace_back(store, base + ".up", in, out, rng);
      std::vector<nn::IrnLayer<T>> blocks;
      for (int b = 0; b < cfg.irn_per_stage; ++b)
        blocks.emplace_back(store, base + ".irn" + std::to_string(b), out, cfg.kernel_size, rng);
      irn_.push_back(std::move(blocks));
      cls_.emplace_back(store, base + ".cls", out, 1, cfg.kernel_size, 1, rng, 0.5);
      in = out;
    }
  }

  std::size_t stages() const { return up_.size(); }

  /// One logit per candidate site of `parent` (a transposed-conv output
  /// after its refinement blocks).
  ag::Var<T> occupancy_logits(ag::Tape<T>& tape, std::size_t stage, const SparseVar<T>& parent) const {
    return cls_.at(stage)(tape, parent).feats;
  }

  DecodeResult<T> operator()(ag::Tape<T>& tape, const SparseVar<T>& y_hat, const ScalePointCounts& counts,
                             const DecodeTargets* targets = nullptr) const {
    if (y_hat.size() == 0) throw std::invalid_argument("decode: empty latent");
    if (!counts.valid()) throw std::invalid_argument("decode: point counts must be positive");
    DecodeResult<T> out;
    SparseVar<T> h = y_hat;
    for (std::size_t s = 0; s < up_.size(); ++s) {
      h = relu(up_[s](tape, h));
      for (const auto& block : irn_[s]) h = block(tape, h);
      DecodeStage<T> st;
      st.candidates = h;
      st.logits = occupancy_logits(tape, s, h);
      const auto& lv = st.logits.value();
      std::vector<T> scores(static_cast<std::size_t>(lv.rows()));
      for (Eigen::Index i = 0; i < lv.rows(); ++i) scores[static_cast<std::size_t>(i)] = lv(i, 0);

      const std::int64_t want = counts.n[s];
      if (want > static_cast<std::int64_t>(scores.size())) {
        out.warnings.push_back("stage " + std::to_string(s) + ": requested " + std::to_string(want) +
                               " points but only " + std::to_string(scores.size()) + " candidates; keeping all");
      }
      if (generation_ == Generation::topk) {
        // sigmoid is monotone, so ranking logits ranks probabilities.
        st.keep = topk_mask(scores, want);
      } else {
        std::vector<double> probs(scores.size());
        for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = 1.0 / (1.0 + std::exp(-double(scores[i])));
        st.keep = threshold_mask(probs, want);
      }
      if (targets) {
        const auto& truth = *targets->truth.at(s);
        st.truth.resize(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) {
          st.truth[i] = truth.contains((*h.coords)[i]) ? 1 : 0;
          if (targets->keep_truth && st.truth[i]) st.keep[i] = true;
        }
      }
      h = prune(h, st.keep);
      out.stages.push_back(std::move(st));
    }
    out.output = h.coords;
    return out;
  }

 private:
  Generation generation_ = Generation::topk;
  std::vector<nn::TransposedConvLayer<T>> up_;
  std::vector<std::vector<nn::IrnLayer<T>>> irn_;
  std::vector<nn::SparseConvLayer<T>> cls_;
};

}  // namespace pcst
