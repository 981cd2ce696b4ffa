#pragma once

#include "pcst/config.hpp"
#include "pcst/entropy_model.hpp"
#include "pcst/jscc.hpp"
#include "pcst/multires.hpp"
#include "pcst/nn.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>

namespace pcst {

/// Every learned component of one PCST instance, sharing one parameter store.
template <typename T>
struct PcstModel {
  ModelConfig config;
  std::uint64_t init_seed = 0;
  nn::ParameterStore<T> store;
  MultiscaleEncoder<T> encoder;
  MultiscaleDecoder<T> decoder;
  FactorizedDensity<T> density;
  JsccCodec<T> jscc;

  PcstModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg), init_seed(seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    encoder = MultiscaleEncoder<T>(store, cfg, rng);
    decoder = MultiscaleDecoder<T>(store, cfg, rng);
    density = FactorizedDensity<T>(store, "density", cfg.latent_channels, cfg.density_filters, cfg.density_init_scale, rng);
    jscc = JsccCodec<T>(store, cfg, rng);
  }

  PcstModel(const PcstModel&) = delete;
  PcstModel& operator=(const PcstModel&) = delete;

  /// Copies parameter values by name from a model of any precision.
  template <typename U>
  void copy_from(const PcstModel<U>& other) {
    if (!(other.config == config)) throw std::invalid_argument("copy_from: model configurations differ");
    for (const auto& [name, p] : store.by_name()) {
      const auto* src = other.store.find(name);
      if (!src) throw std::invalid_argument("copy_from: missing parameter " + name);
      p->value = src->value.template cast<T>();
    }
  }
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[10] = {'P', 'C', 'S', 'T', 'C', 'K', 'P', 'T', '/', '1'};

namespace detail {

inline void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw CheckpointError("checkpoint: truncated file");
    v |= std::uint64_t(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

/// Layout: magic "PCSTCKPT/1" | u32 header length | JSON header
/// {model, init_seed, meta} | u32 tensor count | per tensor: u32 name
/// length, name, u32 rows, u32 cols, rows*cols f64 (row-major). All
/// integers and doubles little-endian.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const PcstModel<T>& model, const nlohmann::json& meta = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    nlohmann::json header{{"model", model.config}, {"init_seed", model.init_seed}, {"meta", meta}};
    const std::string h = header.dump();
    detail::put_le(out, h.size(), 4);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    const auto& params = model.store.by_name();
    detail::put_le(out, params.size(), 4);
    for (const auto& [name, p] : params) {
      detail::put_le(out, name.size(), 4);
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put_le(out, static_cast<std::uint64_t>(p->value.rows()), 4);
      detail::put_le(out, static_cast<std::uint64_t>(p->value.cols()), 4);
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        detail::put_le(out, std::bit_cast<std::uint64_t>(static_cast<double>(p->value.data()[i])), 8);
      }
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointHeader {
  ModelConfig model;
  std::uint64_t init_seed = 0;
  nlohmann::json meta;
};

template <typename T>
struct LoadedModel {
  std::unique_ptr<PcstModel<T>> model;
  nlohmann::json meta;
};

/// Reads a checkpoint; when `expected` is given the stored model
/// configuration must match it.
template <typename T>
LoadedModel<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a PCSTCKPT/1 checkpoint: " + path.string());
  }
  const auto hlen = detail::get_le(in, 4);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header;
  ModelConfig cfg;
  try {
    header = nlohmann::json::parse(h);
    cfg = header.at("model").get<ModelConfig>();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw CheckpointError("checkpoint " + path.string() + " was trained with a different model configuration");
  }
  LoadedModel<T> out;
  out.model = std::make_unique<PcstModel<T>>(cfg, header.value("init_seed", std::uint64_t{0}));
  out.meta = header.value("meta", nlohmann::json::object());
  auto& store = out.model->store;
  const auto count = detail::get_le(in, 4);
  if (count != store.by_name().size()) throw CheckpointError("checkpoint: tensor count does not match the model");
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name(detail::get_le(in, 4), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    auto* p = store.find(name);
    if (!in || !p) throw CheckpointError("checkpoint: unexpected tensor '" + name + "'");
    const auto rows = static_cast<Eigen::Index>(detail::get_le(in, 4));
    const auto cols = static_cast<Eigen::Index>(detail::get_le(in, 4));
    if (rows != p->value.rows() || cols != p->value.cols()) throw CheckpointError("checkpoint: shape mismatch for " + name);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = static_cast<T>(std::bit_cast<double>(detail::get_le(in, 8)));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes");
  return out;
}

}  // namespace pcst
