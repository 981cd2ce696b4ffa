#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

using cdouble = std::complex<double>;

enum class ChannelKind { awgn, rayleigh };

inline ChannelKind parse_channel_kind(const std::string& s) {
  if (s == "awgn") return ChannelKind::awgn;
  if (s == "rayleigh") return ChannelKind::rayleigh;
  throw std::invalid_argument("unknown channel kind '" + s + "'");
}

inline const char* to_string(ChannelKind k) { return k == ChannelKind::awgn ? "awgn" : "rayleigh"; }

/// Noise variance for unit signal power; +inf dB gives a noiseless channel.
inline double noise_variance(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0);
}

/// One drawn use of the channel: CSI h and noise n per complex symbol.
struct ChannelRealization {
  ChannelKind kind = ChannelKind::awgn;
  double snr_db = 10.0;
  double noise_var = 0.1;
  std::uint64_t seed = 0;
  std::vector<cdouble> h;
  std::vector<cdouble> noise;

  std::size_t size() const { return noise.size(); }
};

/// Draws h and n for `n_symbols` symbols. For Rayleigh fading, `blocks`
/// lists consecutive block lengths sharing one h (their sum must equal
/// n_symbols); an empty list draws h independently per symbol.
inline ChannelRealization realize_channel(ChannelKind kind, double snr_db, std::size_t n_symbols, std::uint64_t seed,
                                          const std::vector<std::size_t>& blocks = {}) {
  ChannelRealization ch;
  ch.kind = kind;
  ch.snr_db = snr_db;
  ch.noise_var = noise_variance(snr_db);
  ch.seed = seed;
  ch.h.assign(n_symbols, cdouble(1.0, 0.0));
  ch.noise.resize(n_symbols);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = std::sqrt(ch.noise_var / 2.0);
  for (auto& n : ch.noise) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    n = cdouble(sigma * re, sigma * im);
  }
  if (kind == ChannelKind::rayleigh) {
    const double s = std::sqrt(0.5);
    auto draw = [&] {
      const double re = gauss(rng);
      const double im = gauss(rng);
      return cdouble(s * re, s * im);
    };
    if (blocks.empty()) {
      for (auto& h : ch.h) h = draw();
    } else {
      std::size_t at = 0;
      for (auto len : blocks) {
        if (at + len > n_symbols) throw std::invalid_argument("realize_channel: block lengths exceed symbol count");
        const cdouble h = draw();
        for (std::size_t j = 0; j < len; ++j) ch.h[at + j] = h;
        at += len;
      }
      if (at != n_symbols) throw std::invalid_argument("realize_channel: block lengths must cover every symbol");
    }
  }
  return ch;
}

/// s_hat = h .* s + n
inline std::vector<cdouble> transmit(const std::vector<cdouble>& s, const ChannelRealization& ch) {
  if (s.size() != ch.size()) throw std::invalid_argument("transmit: realization length mismatch");
  std::vector<cdouble> out(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) out[j] = ch.h[j] * s[j] + ch.noise[j];
  return out;
}

/// Per-symbol MMSE with perfect receiver CSI: conj(h) s_hat / (|h|^2 + N0).
/// The AWGN path is a pass-through.
inline std::vector<cdouble> equalize(const std::vector<cdouble>& s_hat, const ChannelRealization& ch) {
  if (s_hat.size() != ch.size()) throw std::invalid_argument("equalize: realization length mismatch");
  if (ch.kind == ChannelKind::awgn) return s_hat;
  std::vector<cdouble> out(s_hat.size());
  for (std::size_t j = 0; j < s_hat.size(); ++j) {
    const cdouble h = ch.h[j];
    const double denom = std::norm(h) + ch.noise_var;
    out[j] = denom > 0 ? std::conj(h) * s_hat[j] / denom : cdouble(0.0, 0.0);
  }
  return out;
}

/// Coefficients (a, b) such that equalize(transmit(s)) = a .* s + b.
/// Used to run the channel inside a differentiable graph.
inline void effective_affine(const ChannelRealization& ch, std::vector<cdouble>& a, std::vector<cdouble>& b) {
  a.resize(ch.size());
  b.resize(ch.size());
  for (std::size_t j = 0; j < ch.size(); ++j) {
    if (ch.kind == ChannelKind::awgn) {
      a[j] = ch.h[j];
      b[j] = ch.noise[j];
    } else {
      const cdouble h = ch.h[j];
      const double denom = std::norm(h) + ch.noise_var;
      a[j] = denom > 0 ? std::norm(h) / denom : 0.0;
      b[j] = denom > 0 ? std::conj(h) * ch.noise[j] / denom : cdouble(0.0, 0.0);
    }
  }
}

/// Shannon capacity of a complex AWGN channel, bits per symbol.
inline double awgn_capacity(double snr_db) { return std::log2(1.0 + std::pow(10.0, snr_db / 10.0)); }

/// E[log2(1 + |h|^2 snr)] for unit-variance Rayleigh h, by Monte-Carlo with
/// a fixed seed so the result is reproducible.
inline double rayleigh_ergodic_capacity(double snr_db, std::size_t samples = 200000, std::uint64_t seed = 0x5eed) {
  const double snr = std::pow(10.0, snr_db / 10.0);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gain(1.0);  // |h|^2 ~ Exp(1)
  double acc = 0;
  for (std::size_t i = 0; i < samples; ++i) acc += std::log2(1.0 + gain(rng) * snr);
  return acc / double(samples);
}

inline double capacity(ChannelKind kind, double snr_db) {
  return kind == ChannelKind::awgn ? awgn_capacity(snr_db) : rayleigh_ergodic_capacity(snr_db);
}

/// Complex symbols needed to carry n_bits with an ideal code backed off by
/// margin_db from capacity.
inline std::int64_t bits_to_symbols(std::int64_t n_bits, ChannelKind kind, double snr_db, double margin_db) {
  if (n_bits < 0) throw std::invalid_argument("bits_to_symbols: negative bit count");
  if (n_bits == 0) return 0;
  const double c = capacity(kind, snr_db - margin_db);
  if (!(c > 0)) throw std::invalid_argument("bits_to_symbols: zero capacity");
  return static_cast<std::int64_t>(std::ceil(double(n_bits) / c - 1e-9));
}

inline std::int64_t bits_to_symbols(std::int64_t n_bits, const ChannelRealization& ch, double margin_db) {
  return bits_to_symbols(n_bits, ch.kind, ch.snr_db, margin_db);
}

}  // namespace pcst
