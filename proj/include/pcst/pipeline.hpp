#pragma once

#include "pcst/channel.hpp"
#include "pcst/entropy_model.hpp"
#include "pcst/jscc.hpp"
#include "pcst/metrics.hpp"
#include "pcst/model.hpp"
#include "pcst/multires.hpp"
#include "pcst/sideinfo.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

/// Seeds for the two random draws of one pass, derived from a single seed.
inline std::uint64_t quant_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 1; }
inline std::uint64_t channel_seed(std::uint64_t seed) { return (seed ^ 0xC2B2AE3D27D4EB4Full) * 0xBF58476D1CE4E5B9ull; }

struct ForwardOptions {
  QuantMode quant = QuantMode::train;
  ChannelKind channel = ChannelKind::awgn;
  double snr_db = 10.0;
  bool use_channel = true;
  std::uint64_t seed = 0;
  bool supervise = true;  // BCE against the true sites; true sites survive pruning
  std::optional<std::vector<std::size_t>> forced_index;  // klist indices overriding the allocation
};

/// Everything one taped pass produces.
template <typename T>
struct ForwardPass {
  SparseVar<T> latent;
  ag::Var<T> y_tilde;
  ag::Var<T> likelihood;
  ag::Var<T> rate;        // eta * sum(-log2 P), 1 x 1
  ag::Var<T> distortion;  // mean BCE over every candidate, 1 x 1 (supervised only)
  std::vector<double> bits;
  RateAllocation alloc;
  ag::Normalized<T> symbols;
  SparseVar<T> y_hat;
  DecodeResult<T> decoded;
  ScalePointCounts counts;
  std::int64_t candidates = 0;
};

/// Per-coordinate information content: sum over channels of -log2 P.
template <typename T>
std::vector<double> coordinate_bits(const ag::Matrix<T>& likelihood) {
  std::vector<double> bits(static_cast<std::size_t>(likelihood.rows()), 0.0);
  for (Eigen::Index i = 0; i < likelihood.rows(); ++i) {
    for (Eigen::Index c = 0; c < likelihood.cols(); ++c) bits[static_cast<std::size_t>(i)] -= std::log2(double(likelihood(i, c)));
  }
  return bits;
}

template <typename T>
ChannelRealization draw_channel(const ModelConfig& cfg, ChannelKind kind, double snr_db, const std::vector<int>& k,
                                std::uint64_t seed) {
  const auto total = total_bandwidth(k);
  std::vector<std::size_t> blocks;
  if (kind == ChannelKind::rayleigh && cfg.fading == Fading::block) blocks = fading_blocks(k);
  return realize_channel(kind, snr_db, static_cast<std::size_t>(total / 2), seed, blocks);
}

/// Full chain on one tape: encode, quantisation proxy, likelihoods and
/// allocation, JSCC, channel, JSCC decode, multiscale decode.
template <typename T>
ForwardPass<T> forward(const PcstModel<T>& m, ag::Tape<T>& tape, const SparseTensor<T>& x, const ForwardOptions& o,
                       double eta) {
  const auto& cfg = m.config;
  ForwardPass<T> f;
  f.counts = scale_counts(x.coords);
  f.latent = m.encoder(tape, SparseVar<T>{x.coords, tape.constant(x.feats)});

  const auto& fy = f.latent.feats.value();
  if (o.quant == QuantMode::train) {
    const ag::Matrix<T> noise = quantize_proxy<T>(ag::Matrix<T>::Zero(fy.rows(), fy.cols()), QuantMode::train, quant_seed(o.seed));
    f.y_tilde = ag::add(f.latent.feats, tape.constant(noise));
  } else {
    f.y_tilde = tape.constant(quantize_proxy<T>(fy, QuantMode::eval, 0));
  }

  f.likelihood = m.density.likelihood(tape, f.y_tilde);
  f.rate = ag::scale(ag::sum(ag::log(f.likelihood)), static_cast<T>(-eta / std::log(2.0)));
  f.bits = coordinate_bits<T>(f.likelihood.value());
  f.alloc = o.forced_index ? allocation_from_indices(*o.forced_index, eta, cfg.klist) : allocate(f.bits, eta, cfg.klist);
  if (f.alloc.k.size() != f.latent.size()) throw std::invalid_argument("forward: forced allocation length mismatch");

  f.symbols = m.jscc.encode(tape, SparseVar<T>{f.latent.coords, f.y_tilde}, f.alloc.k);
  ag::Var<T> received = f.symbols.output;
  if (o.use_channel) {
    const auto ch = draw_channel<T>(cfg, o.channel, o.snr_db, f.alloc.k, channel_seed(o.seed));
    received = apply_channel(received, ch);
  }
  f.y_hat = m.jscc.decode(tape, received, f.latent.coords, f.alloc.k);

  DecodeTargets targets{scale_truth(x.coords), true};
  f.decoded = m.decoder(tape, f.y_hat, f.counts, o.supervise ? &targets : nullptr);
  for (const auto& st : f.decoded.stages) f.candidates += static_cast<std::int64_t>(st.candidates.size());
  if (o.supervise) {
    std::vector<ag::Var<T>> terms;
    for (const auto& st : f.decoded.stages) terms.push_back(ag::bce_with_logits_sum(st.logits, st.truth));
    ag::Var<T> total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ag::add(total, terms[i]);
    f.distortion = ag::scale(total, static_cast<T>(1.0 / double(f.candidates)));
  }
  return f;
}

struct TransmitOptions {
  ChannelKind channel = ChannelKind::awgn;
  double snr_db = 10.0;
  bool use_channel = true;
  std::uint64_t seed = 0;
  double side_margin_db = 2.0;
  bool compute_d2 = true;
  std::optional<std::vector<std::size_t>> forced_index;
  std::string lambda_id;
  std::string cloud;
};

struct TransmitResult {
  TransmissionReport report;
  std::vector<Coord> reconstruction;
  SideInfoPayload side;
  std::vector<std::size_t> klen;
  std::vector<std::string> warnings;
};

inline int peak_value(int bit_depth) { return (1 << bit_depth) - 1; }

/// Transmitter and receiver run separately: the receiver sees only the
/// parsed side-information container and the equalised channel symbols.
template <typename T>
TransmitResult transmit_cloud(const PcstModel<T>& m, const std::vector<Coord>& voxels, const TransmitOptions& o) {
  const auto& cfg = m.config;
  if (voxels.empty()) throw std::invalid_argument("transmit: empty cloud");
  const int top = peak_value(cfg.bit_depth);
  for (const auto& c : voxels)
    for (int a = 0; a < 3; ++a)
      if (c[a] < 0 || c[a] > top) throw std::out_of_range("transmit: voxel outside the bit-depth cube");

  const auto x = SparseTensor<T>::occupancy(voxels, 1);
  const auto counts = scale_counts(x.coords);
  const int stride = cfg.latent_stride();

  // Transmitter.
  ag::Tape<T> tx(false);
  const auto latent = m.encoder(tx, SparseVar<T>{x.coords, tx.constant(x.feats)});
  const SparseTensor<T> y_tilde(latent.coords, quantize_proxy<T>(latent.feats.value(), QuantMode::eval, 0));
  const auto bits = coordinate_bits<T>(m.density.likelihood(y_tilde.feats));
  const auto alloc = o.forced_index ? allocation_from_indices(*o.forced_index, cfg.eta, cfg.klist)
                                    : allocate(bits, cfg.eta, cfg.klist);
  if (alloc.k.size() != y_tilde.size()) throw std::invalid_argument("transmit: forced allocation length mismatch");

  SideInfo info;
  info.depth = cfg.latent_depth();
  for (const auto& c : latent.coords->coords()) info.coords.push_back({c[0] / stride, c[1] / stride, c[2] / stride});
  info.klen = alloc.index;
  for (int i = 0; i < 3; ++i) info.counts[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(counts.n[static_cast<std::size_t>(i)]);
  const auto container = serialize(encode_side_info(info, cfg.klist.size()));
  const auto symbols = jscc_encode(m.jscc, y_tilde, alloc);

  std::vector<cdouble> received = symbols.symbols;
  if (o.use_channel) {
    const auto ch = draw_channel<T>(cfg, o.channel, o.snr_db, alloc.k, channel_seed(o.seed));
    received = equalize(transmit(symbols.symbols, ch), ch);
  }

  // Receiver.
  TransmitResult r;
  r.side = parse_container(container);
  const auto side = decode_side_info(r.side, cfg.klist.size());
  std::vector<Coord> lat;
  lat.reserve(side.coords.size());
  for (const auto& c : side.coords) lat.push_back({c[0] * stride, c[1] * stride, c[2] * stride});
  const auto lat_set = CoordinateSet::make(std::move(lat), stride);
  const auto rx_alloc = allocation_from_indices(side.klen, cfg.eta, cfg.klist);
  ScalePointCounts rx_counts;
  for (int i = 0; i < 3; ++i) rx_counts.n[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(side.counts[static_cast<std::size_t>(i)]);

  SymbolSequence s_hat{received, rx_alloc.k, 1.0, false};
  const auto y_hat = jscc_decode(m.jscc, s_hat, lat_set, rx_alloc);
  ag::Tape<T> rx(false);
  const auto dec = m.decoder(rx, SparseVar<T>{y_hat.coords, rx.constant(y_hat.feats)}, rx_counts);
  r.reconstruction = dec.output->coords();
  r.warnings = dec.warnings;
  r.klen = side.klen;

  auto& rep = r.report;
  const auto n = static_cast<std::int64_t>(voxels.size());
  rep.n_points_in = n;
  rep.n_points_out = static_cast<std::int64_t>(r.reconstruction.size());
  rep.latent_symbols = alloc.total();
  rep.side_symbols = account_side_bits(r.side, o.channel, o.snr_db, o.side_margin_db);
  rep.cbr_latent = cbr(rep.latent_symbols, n);
  rep.cbr_side = cbr(rep.side_symbols, n);
  rep.cbr_total = cbr(rep.latent_symbols + rep.side_symbols, n);
  const auto a = to_points(x.coords->coords());
  const auto b = to_points(r.reconstruction);
  rep.d1_psnr_db = d1_psnr(a, b, top);
  rep.d2_psnr_db = o.compute_d2 ? d2_psnr(a, b, top) : rep.d1_psnr_db;
  rep.snr_db = o.snr_db;
  rep.channel_kind = o.use_channel ? to_string(o.channel) : "none";
  rep.lambda_id = o.lambda_id;
  rep.cloud = o.cloud;
  rep.seed = o.seed;
  return r;
}

/// Symbol share of the side-information components at a given SNR.
struct SideShare {
  double coords = 0;
  double klen = 0;
  double counts = 0;
};

inline SideShare side_share(const SideInfoPayload& p, std::int64_t n_points, ChannelKind kind, double snr_db,
                            double margin_db) {
  auto part = [&](const Bytes& b) {
    return cbr(bits_to_symbols(8 * static_cast<std::int64_t>(b.size()), kind, snr_db, margin_db), n_points);
  };
  return {part(p.coord_bits), part(p.klen_bits), part(p.count_bits)};
}

}  // namespace pcst
