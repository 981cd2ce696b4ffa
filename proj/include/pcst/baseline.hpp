#pragma once

#include "pcst/channel.hpp"
#include "pcst/metrics.hpp"
#include "pcst/sideinfo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

/// One modulation-and-coding scheme: decodable at or above threshold_db.
struct AmcEntry {
  double threshold_db;
  double rate;  // information bits per complex symbol
};

inline std::vector<AmcEntry> default_amc_table() { return {{0, 0.5}, {4, 1}, {8, 2}, {12, 3}, {16, 4}}; }

inline constexpr double kAmcMarginDb = 2.0;

struct SSCCConfig {
  double code_rate_bits_per_symbol = 2.0;
  double threshold_snr_db = 8.0;
  int octree_depth = 6;
};

/// Highest-rate entry with threshold <= snr - margin; the most robust entry
/// when none qualifies.
inline SSCCConfig amc_select(double snr_db, const std::vector<AmcEntry>& table, int octree_depth,
                             double margin_db = kAmcMarginDb) {
  if (table.empty()) throw std::invalid_argument("amc_select: empty table");
  for (std::size_t i = 1; i < table.size(); ++i)
    if (table[i].threshold_db < table[i - 1].threshold_db) throw std::invalid_argument("amc_select: table must be sorted by threshold");
  const AmcEntry* best = &table.front();
  for (const auto& e : table) {
    if (e.threshold_db <= snr_db - margin_db && e.rate > best->rate) best = &e;
  }
  return {best->rate, best->threshold_db, octree_depth};
}

/// Geometry at a coarser octree depth: coordinates shifted right.
inline std::vector<Coord> truncate_depth(const std::vector<Coord>& voxels, int bit_depth, int depth) {
  if (depth < 0 || depth > bit_depth) throw std::invalid_argument("truncate_depth: depth out of range");
  const int shift = bit_depth - depth;
  std::vector<Coord> out;
  out.reserve(voxels.size());
  for (const auto& c : voxels) out.push_back({c[0] >> shift, c[1] >> shift, c[2] >> shift});
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Centres of level-`depth` cells in voxel units of the full bit depth.
inline std::vector<Point3> cell_centres(const std::vector<Coord>& cells, int bit_depth, int depth) {
  const double side = std::ldexp(1.0, bit_depth - depth);
  const double half = (side - 1) / 2;
  std::vector<Point3> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back({c[0] * side + half, c[1] * side + half, c[2] * side + half});
  return out;
}

struct SsccOptions {
  std::size_t codeword_bits = 1944;  // must be a multiple of 8
  bool compute_d2 = true;
};

/// Symbols for `bits` split into codewords of codeword_bits at `rate`.
inline std::vector<std::size_t> sscc_codewords(std::int64_t bits, double rate, std::size_t codeword_bits) {
  std::vector<std::size_t> out;
  for (std::int64_t at = 0; at < bits; at += static_cast<std::int64_t>(codeword_bits)) {
    const auto len = std::min<std::int64_t>(static_cast<std::int64_t>(codeword_bits), bits - at);
    out.push_back(static_cast<std::size_t>(std::ceil(double(len) / rate - 1e-9)));
  }
  return out;
}

struct SsccResult {
  bool success = false;
  int decoded_levels = 0;
  std::vector<Point3> reconstruction;
  TransmissionReport report;
};

/// Octree source code plus an ideal threshold channel code. A codeword
/// decodes iff its effective SNR (including its fading gain) reaches the
/// threshold. The octree is sent level by level; the receiver keeps the
/// levels contained entirely in codewords before the first failure.
inline SsccResult sscc_transmit(const std::vector<Coord>& voxels, int bit_depth, const SSCCConfig& cfg, ChannelKind kind,
                                double snr_db, std::uint64_t seed, const SsccOptions& opts = {}) {
  if (voxels.empty()) throw std::invalid_argument("sscc_transmit: empty cloud");
  if (!(cfg.code_rate_bits_per_symbol > 0) || !std::isfinite(cfg.threshold_snr_db)) {
    throw std::invalid_argument("sscc_transmit: invalid channel code");
  }
  if (opts.codeword_bits == 0 || opts.codeword_bits % 8 != 0) {
    throw std::invalid_argument("sscc_transmit: codeword length must be a positive multiple of 8 bits");
  }
  const int depth = cfg.octree_depth;
  const auto cells = truncate_depth(voxels, bit_depth, depth);
  const auto bytes = octree_encode(cells, depth);
  const auto bits = 8 * static_cast<std::int64_t>(bytes.size());
  const auto cw = sscc_codewords(bits, cfg.code_rate_bits_per_symbol, opts.codeword_bits);
  std::size_t n_sym = 0;
  for (auto s : cw) n_sym += s;

  const auto ch = realize_channel(kind, snr_db, n_sym, seed, kind == ChannelKind::rayleigh ? cw : std::vector<std::size_t>{});
  std::size_t ok_codewords = 0, at = 0;
  for (auto s : cw) {
    const double gain_db = 10 * std::log10(std::norm(ch.h[at]));
    if (snr_db + gain_db < cfg.threshold_snr_db) break;
    ++ok_codewords;
    at += s;
  }

  SsccResult r;
  r.success = ok_codewords == cw.size();
  if (r.success) {
    r.decoded_levels = depth;
  } else {
    const std::size_t ok_bytes = ok_codewords * (opts.codeword_bits / 8);
    const auto sizes = octree_level_sizes(cells, depth);
    std::size_t used = 0;
    for (int l = 0; l < depth; ++l) {
      used += sizes[static_cast<std::size_t>(l)];
      if (used > ok_bytes) break;
      r.decoded_levels = l + 1;
    }
  }
  const auto got = r.decoded_levels == depth ? cells : octree_decode_prefix(bytes, depth, r.decoded_levels);
  r.reconstruction = cell_centres(got, bit_depth, r.decoded_levels);

  auto& rep = r.report;
  const auto n = static_cast<std::int64_t>(voxels.size());
  const auto peak = std::ldexp(1.0, bit_depth) - 1;
  const auto a = to_points(voxels);
  rep.scheme = "sscc";
  rep.decoded = r.success;
  rep.n_points_in = n;
  rep.n_points_out = static_cast<std::int64_t>(r.reconstruction.size());
  rep.latent_symbols = static_cast<std::int64_t>(n_sym);
  rep.cbr_latent = cbr(rep.latent_symbols, n);
  rep.cbr_total = rep.cbr_latent;
  rep.d1_psnr_db = d1_psnr(a, r.reconstruction, peak);
  rep.d2_psnr_db = opts.compute_d2 ? d2_psnr(a, r.reconstruction, peak) : rep.d1_psnr_db;
  rep.snr_db = snr_db;
  rep.channel_kind = to_string(kind);
  rep.seed = seed;
  return r;
}

/// Fixed-bandwidth operating point: the AMC entry chosen at design_snr and
/// the deepest octree whose symbols fit in cbr_budget * 3N.
inline SSCCConfig sscc_config_for_budget(const std::vector<Coord>& voxels, int bit_depth, double cbr_budget,
                                         double design_snr_db, const std::vector<AmcEntry>& table,
                                         double margin_db = kAmcMarginDb, std::size_t codeword_bits = 1944) {
  auto cfg = amc_select(design_snr_db, table, bit_depth, margin_db);
  const double budget = cbr_budget * 3.0 * double(voxels.size());
  for (int d = bit_depth; d >= 1; --d) {
    cfg.octree_depth = d;
    const auto bits = 8 * static_cast<std::int64_t>(octree_encode(truncate_depth(voxels, bit_depth, d), d).size());
    std::size_t n = 0;
    for (auto s : sscc_codewords(bits, cfg.code_rate_bits_per_symbol, codeword_bits)) n += s;
    if (double(n) <= budget) return cfg;
  }
  cfg.octree_depth = 1;
  return cfg;
}

}  // namespace pcst
