#pragma once

#include "pcst/channel.hpp"
#include "pcst/range_coder.hpp"
#include "pcst/sparse_tensor.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

using Bytes = std::vector<std::uint8_t>;

class SideInfoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Octree occupancy coding

/// Interleaves the low `depth` bits of x, y, z with x most significant.
inline std::uint64_t morton_code(const Coord& c, int depth) {
  std::uint64_t code = 0;
  for (int b = depth - 1; b >= 0; --b) {
    code = (code << 3) | (std::uint64_t((c[0] >> b) & 1) << 2) | (std::uint64_t((c[1] >> b) & 1) << 1) |
           std::uint64_t((c[2] >> b) & 1);
  }
  return code;
}

inline Coord morton_decode(std::uint64_t code, int depth) {
  Coord c{0, 0, 0};
  for (int b = 0; b < depth; ++b) {
    c[2] |= static_cast<std::int32_t>((code >> (3 * b)) & 1) << b;
    c[1] |= static_cast<std::int32_t>((code >> (3 * b + 1)) & 1) << b;
    c[0] |= static_cast<std::int32_t>((code >> (3 * b + 2)) & 1) << b;
  }
  return c;
}

/// Breadth-first octree: one occupancy byte per internal node, bit i set
/// when child i = 4*bx + 2*by + bz is occupied. An empty set codes to an
/// empty stream.
inline Bytes octree_encode(const std::vector<Coord>& coords, int depth) {
  if (depth < 1 || depth > 20) throw std::invalid_argument("octree_encode: depth must be in [1, 20]");
  const std::int32_t limit = 1 << depth;
  std::vector<std::uint64_t> codes;
  codes.reserve(coords.size());
  for (const auto& c : coords) {
    for (int a = 0; a < 3; ++a) {
      if (c[a] < 0 || c[a] >= limit) throw std::out_of_range("octree_encode: coordinate outside [0, 2^depth)");
    }
    codes.push_back(morton_code(c, depth));
  }
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());

  Bytes out;
  for (int level = 0; level < depth; ++level) {
    const int child_shift = 3 * (depth - level - 1);
    std::uint64_t parent = ~std::uint64_t{0};
    std::uint8_t byte = 0;
    for (auto code : codes) {
      const std::uint64_t p = code >> (child_shift + 3);
      if (p != parent) {
        if (parent != ~std::uint64_t{0}) out.push_back(byte);
        parent = p;
        byte = 0;
      }
      byte |= static_cast<std::uint8_t>(1u << ((code >> child_shift) & 7u));
    }
    if (parent != ~std::uint64_t{0}) out.push_back(byte);
  }
  return out;
}

/// Occupied cells of the first `levels` octree levels, in breadth-first
/// order (used for depth-truncated reconstruction).
inline std::vector<Coord> octree_decode_prefix(const Bytes& bytes, int depth, int levels, std::size_t* consumed = nullptr) {
  if (depth < 1 || depth > 20) throw std::invalid_argument("octree_decode: depth must be in [1, 20]");
  if (levels < 0 || levels > depth) throw std::invalid_argument("octree_decode: level count out of range");
  std::vector<std::uint64_t> nodes;
  if (!bytes.empty()) nodes.push_back(0);
  std::size_t at = 0;
  for (int level = 0; level < levels && !nodes.empty(); ++level) {
    std::vector<std::uint64_t> next;
    next.reserve(nodes.size() * 4);
    for (auto n : nodes) {
      if (at >= bytes.size()) throw SideInfoError("octree_decode: truncated stream");
      const std::uint8_t b = bytes[at++];
      if (b == 0) throw SideInfoError("octree_decode: empty internal node");
      for (unsigned i = 0; i < 8; ++i)
        if (b & (1u << i)) next.push_back((n << 3) | i);
    }
    nodes = std::move(next);
  }
  if (consumed) *consumed = at;
  std::vector<Coord> out;
  out.reserve(nodes.size());
  for (auto n : nodes) out.push_back(morton_decode(n, levels));
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Coord> octree_decode(const Bytes& bytes, int depth) {
  std::size_t used = 0;
  auto out = octree_decode_prefix(bytes, depth, depth, &used);
  if (used != bytes.size()) throw SideInfoError("octree_decode: trailing bytes");
  return out;
}

/// Byte count of each octree level for `coords` (level 0 first).
inline std::vector<std::size_t> octree_level_sizes(const std::vector<Coord>& coords, int depth) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(depth), 0);
  std::vector<std::uint64_t> codes;
  codes.reserve(coords.size());
  for (const auto& c : coords) codes.push_back(morton_code(c, depth));
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  for (int level = 0; level < depth; ++level) {
    const int shift = 3 * (depth - level);
    std::uint64_t last = ~std::uint64_t{0};
    for (auto c : codes) {
      if ((c >> shift) != last) {
        last = c >> shift;
        ++sizes[static_cast<std::size_t>(level)];
      }
    }
  }
  return sizes;
}

// ---------------------------------------------------------------------------
// k-length list: adaptive arithmetic coding with the previous index as
// context.

inline Bytes klen_encode(const std::vector<std::size_t>& indices, std::size_t alphabet) {
  if (alphabet == 0 || alphabet > 255) throw std::invalid_argument("klen_encode: alphabet size must be in [1, 255]");
  std::vector<AdaptiveModel> models(alphabet + 1, AdaptiveModel(alphabet));
  ArithmeticEncoder enc;
  std::size_t ctx = alphabet;
  for (auto i : indices) {
    if (i >= alphabet) throw std::invalid_argument("klen_encode: invalid klist index");
    enc.encode(i, models[ctx]);
    ctx = i;
  }
  return enc.finish();
}

inline std::vector<std::size_t> klen_decode(const Bytes& bytes, std::size_t count, std::size_t alphabet) {
  if (alphabet == 0 || alphabet > 255) throw std::invalid_argument("klen_decode: alphabet size must be in [1, 255]");
  std::vector<AdaptiveModel> models(alphabet + 1, AdaptiveModel(alphabet));
  ArithmeticDecoder dec(bytes);
  std::vector<std::size_t> out;
  out.reserve(count);
  std::size_t ctx = alphabet;
  for (std::size_t n = 0; n < count; ++n) {
    ctx = dec.decode(models[ctx]);
    out.push_back(ctx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unsigned LEB128

inline void put_varint(Bytes& out, std::uint64_t v) {
  do {
    std::uint8_t b = v & 0x7f;
    v >>= 7;
    if (v) b |= 0x80;
    out.push_back(b);
  } while (v);
}

inline std::uint64_t get_varint(const Bytes& in, std::size_t& at) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (at >= in.size()) throw SideInfoError("varint: truncated stream");
    const std::uint8_t b = in[at++];
    v |= std::uint64_t(b & 0x7f) << shift;
    if (!(b & 0x80)) return v;
  }
  throw SideInfoError("varint: too long");
}

// ---------------------------------------------------------------------------
// Payload and container

/// Everything PCST sends besides the latent symbols.
struct SideInfoPayload {
  int depth = 0;               // octree depth of the latent lattice
  Bytes coord_bits;            // octree-coded latent coordinates
  Bytes klen_bits;             // coded klist indices
  Bytes count_bits;            // three varint point counts
  std::int64_t total_bits = 0;
};

struct SideInfo {
  int depth = 0;
  std::vector<Coord> coords;            // latent lattice units (divided by stride)
  std::vector<std::size_t> klen;        // klist index per coordinate, canonical order
  std::array<std::uint64_t, 3> counts{};
};

inline SideInfoPayload encode_side_info(const SideInfo& info, std::size_t alphabet) {
  if (info.klen.size() != info.coords.size()) throw std::invalid_argument("side info: one k index per coordinate");
  SideInfoPayload p;
  p.depth = info.depth;
  p.coord_bits = octree_encode(info.coords, info.depth);
  p.klen_bits = klen_encode(info.klen, alphabet);
  for (auto c : info.counts) put_varint(p.count_bits, c);
  p.total_bits = 8 * static_cast<std::int64_t>(p.coord_bits.size() + p.klen_bits.size() + p.count_bits.size());
  return p;
}

inline constexpr char kSideInfoMagic[8] = {'P', 'C', 'S', 'T', 'S', 'I', '/', '1'};

namespace detail {
inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const Bytes& in, std::size_t& at) {
  if (at + 4 > in.size()) throw SideInfoError("side info container: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[at + i]) << (8 * i);
  at += 4;
  return v;
}
}  // namespace detail

/// [magic "PCSTSI/1"][depth u8][3 varint counts][u32 coord length]
/// [coord bytes][u32 klen length][klen bytes], little-endian lengths in bytes.
inline Bytes serialize(const SideInfoPayload& p) {
  Bytes out(std::begin(kSideInfoMagic), std::end(kSideInfoMagic));
  out.push_back(static_cast<std::uint8_t>(p.depth));
  out.insert(out.end(), p.count_bits.begin(), p.count_bits.end());
  detail::put_u32(out, static_cast<std::uint32_t>(p.coord_bits.size()));
  out.insert(out.end(), p.coord_bits.begin(), p.coord_bits.end());
  detail::put_u32(out, static_cast<std::uint32_t>(p.klen_bits.size()));
  out.insert(out.end(), p.klen_bits.begin(), p.klen_bits.end());
  return out;
}

inline SideInfoPayload parse_container(const Bytes& in) {
  if (in.size() < 9 || std::memcmp(in.data(), kSideInfoMagic, 8) != 0) {
    throw SideInfoError("side info container: bad magic");
  }
  SideInfoPayload p;
  std::size_t at = 8;
  p.depth = in[at++];
  const std::size_t counts_start = at;
  for (int i = 0; i < 3; ++i) get_varint(in, at);
  p.count_bits.assign(in.begin() + static_cast<std::ptrdiff_t>(counts_start), in.begin() + static_cast<std::ptrdiff_t>(at));
  const auto n_coord = detail::get_u32(in, at);
  if (at + n_coord > in.size()) throw SideInfoError("side info container: truncated coordinate stream");
  p.coord_bits.assign(in.begin() + static_cast<std::ptrdiff_t>(at), in.begin() + static_cast<std::ptrdiff_t>(at + n_coord));
  at += n_coord;
  const auto n_klen = detail::get_u32(in, at);
  if (at + n_klen > in.size()) throw SideInfoError("side info container: truncated k-length stream");
  p.klen_bits.assign(in.begin() + static_cast<std::ptrdiff_t>(at), in.begin() + static_cast<std::ptrdiff_t>(at + n_klen));
  at += n_klen;
  if (at != in.size()) throw SideInfoError("side info container: trailing bytes");
  p.total_bits = 8 * static_cast<std::int64_t>(p.coord_bits.size() + p.klen_bits.size() + p.count_bits.size());
  return p;
}

inline SideInfo decode_side_info(const SideInfoPayload& p, std::size_t alphabet) {
  SideInfo info;
  info.depth = p.depth;
  info.coords = p.coord_bits.empty() ? std::vector<Coord>{} : octree_decode(p.coord_bits, p.depth);
  info.klen = klen_decode(p.klen_bits, info.coords.size(), alphabet);
  std::size_t at = 0;
  for (auto& c : info.counts) c = get_varint(p.count_bits, at);
  if (at != p.count_bits.size()) throw SideInfoError("side info: trailing count bytes");
  return info;
}

/// Channel symbols spent on the side information, protected by an ideal
/// code `margin_db` below capacity.
inline std::int64_t account_side_bits(const SideInfoPayload& p, ChannelKind kind, double snr_db, double margin_db) {
  return bits_to_symbols(p.total_bits, kind, snr_db, margin_db);
}

}  // namespace pcst
