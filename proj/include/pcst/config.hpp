#pragma once

#include "pcst/channel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Generation { topk, threshold };
enum class Fading { block, symbol };

/// Architecture of one trained PCST model.
struct ModelConfig {
  int bit_depth = 6;
  std::vector<int> enc_channels{16, 32, 64};  // width after each downsampling; decoder mirrors
  int irn_per_stage = 2;
  int latent_channels = 8;
  int kernel_size = 3;
  std::vector<int> klist{2, 4, 6, 8, 12, 16};
  double eta = 0.25;  // symbols per bit
  int embed_dim = 4;
  int jscc_irn_blocks = 1;
  std::vector<int> density_filters{3, 3, 3};
  double density_init_scale = 8.0;
  Generation generation = Generation::topk;
  Fading fading = Fading::block;

  int latent_stride() const { return 1 << static_cast<int>(enc_channels.size()); }
  int latent_depth() const { return bit_depth - static_cast<int>(enc_channels.size()); }
  int jscc_width() const { return latent_channels + embed_dim; }

  void validate() const {
    if (enc_channels.size() != 3) throw ConfigError("model: exactly three resampling stages are supported");
    for (int c : enc_channels)
      if (c < 4) throw ConfigError("model: stage widths must be at least 4");
    if (bit_depth < 4 || bit_depth > 16) throw ConfigError("model: bit_depth must be in [4, 16]");
    if (irn_per_stage < 0 || jscc_irn_blocks < 0) throw ConfigError("model: negative block count");
    if (latent_channels < 1 || embed_dim < 0) throw ConfigError("model: bad latent/embedding width");
    if (jscc_irn_blocks > 0 && jscc_width() < 4) throw ConfigError("model: JSCC width must be at least 4");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("model: kernel_size must be odd");
    if (klist.empty()) throw ConfigError("model: empty klist");
    for (std::size_t i = 0; i < klist.size(); ++i) {
      if (klist[i] <= 0 || klist[i] % 2 != 0) throw ConfigError("model: klist entries must be positive and even");
      if (i > 0 && klist[i] <= klist[i - 1]) throw ConfigError("model: klist must be strictly increasing");
    }
    if (!(eta > 0)) throw ConfigError("model: eta must be positive");
    if (!(density_init_scale > 0)) throw ConfigError("model: density_init_scale must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Rate-distortion training settings.
struct LossConfig {
  double lambda = 3000.0;
  double eta = 0.25;
  double snr_low_db = 4.0;
  double snr_high_db = 14.0;
  ChannelKind channel = ChannelKind::awgn;
  int batch_size = 4;
  int steps = 2000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0: only at the end
  int plateau_patience = 200;
  double grad_clip = 0.0;  // 0: off

  void validate() const {
    if (!(lambda > 0)) throw ConfigError("loss: lambda must be positive");
    if (!(eta > 0)) throw ConfigError("loss: eta must be positive");
    if (!(snr_low_db <= snr_high_db)) throw ConfigError("loss: snr range must satisfy low <= high");
    if (batch_size < 1) throw ConfigError("loss: batch_size must be positive");
    if (steps < 0) throw ConfigError("loss: steps must be non-negative");
    if (!(learning_rate > 0)) throw ConfigError("loss: learning_rate must be positive");
  }
};

/// Synthetic dataset recipe.
struct DataConfig {
  std::vector<std::string> shapes{"sphere", "torus", "box", "composite"};
  int clouds = 20;
  int points_per_cloud = 20000;
  double train_fraction = 0.8;
  std::uint64_t seed = 7;
};

struct EvalConfig {
  std::vector<double> snr_db{0, 2, 4, 6, 8, 10, 12, 14};
  int trials = 3;
  double side_margin_db = 2.0;
};

struct ExperimentConfig {
  ModelConfig model;
  LossConfig loss;
  DataConfig data;
  EvalConfig eval;
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"bit_depth", m.bit_depth},
       {"enc_channels", m.enc_channels},
       {"irn_per_stage", m.irn_per_stage},
       {"latent_channels", m.latent_channels},
       {"kernel_size", m.kernel_size},
       {"klist", m.klist},
       {"eta", m.eta},
       {"embed_dim", m.embed_dim},
       {"jscc_irn_blocks", m.jscc_irn_blocks},
       {"density_filters", m.density_filters},
       {"density_init_scale", m.density_init_scale},
       {"generation", m.generation == Generation::topk ? "topk" : "threshold"},
       {"fading", m.fading == Fading::block ? "block" : "symbol"}};
}

namespace detail {

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& v) {
  if (j.contains(key)) v = j.at(key).get<V>();
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const char* section) {
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError(std::string("unknown key '") + k + "' in section '" + section + "'");
    }
  }
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  detail::reject_unknown(j,
                         {"bit_depth", "enc_channels", "irn_per_stage", "latent_channels", "kernel_size", "klist",
                          "eta", "embed_dim", "jscc_irn_blocks", "density_filters", "density_init_scale",
                          "generation", "fading"},
                         "model");
  detail::read_opt(j, "bit_depth", m.bit_depth);
  detail::read_opt(j, "enc_channels", m.enc_channels);
  detail::read_opt(j, "irn_per_stage", m.irn_per_stage);
  detail::read_opt(j, "latent_channels", m.latent_channels);
  detail::read_opt(j, "kernel_size", m.kernel_size);
  detail::read_opt(j, "klist", m.klist);
  detail::read_opt(j, "eta", m.eta);
  detail::read_opt(j, "embed_dim", m.embed_dim);
  detail::read_opt(j, "jscc_irn_blocks", m.jscc_irn_blocks);
  detail::read_opt(j, "density_filters", m.density_filters);
  detail::read_opt(j, "density_init_scale", m.density_init_scale);
  if (j.contains("generation")) {
    const auto g = j.at("generation").get<std::string>();
    if (g != "topk" && g != "threshold") throw ConfigError("model.generation must be 'topk' or 'threshold'");
    m.generation = g == "topk" ? Generation::topk : Generation::threshold;
  }
  if (j.contains("fading")) {
    const auto f = j.at("fading").get<std::string>();
    if (f != "block" && f != "symbol") throw ConfigError("model.fading must be 'block' or 'symbol'");
    m.fading = f == "block" ? Fading::block : Fading::symbol;
  }
}

inline void to_json(nlohmann::json& j, const LossConfig& l) {
  j = {{"lambda", l.lambda},
       {"eta", l.eta},
       {"snr_range_db", {l.snr_low_db, l.snr_high_db}},
       {"channel", to_string(l.channel)},
       {"batch_size", l.batch_size},
       {"steps", l.steps},
       {"learning_rate", l.learning_rate},
       {"seed", l.seed},
       {"checkpoint_every", l.checkpoint_every},
       {"plateau_patience", l.plateau_patience},
       {"grad_clip", l.grad_clip}};
}

inline void from_json(const nlohmann::json& j, LossConfig& l) {
  detail::reject_unknown(j,
                         {"lambda", "eta", "snr_range_db", "channel", "batch_size", "steps", "learning_rate",
                          "seed", "checkpoint_every", "plateau_patience", "grad_clip"},
                         "loss");
  detail::read_opt(j, "lambda", l.lambda);
  detail::read_opt(j, "eta", l.eta);
  if (j.contains("snr_range_db")) {
    const auto r = j.at("snr_range_db").get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("loss.snr_range_db must be [low, high]");
    l.snr_low_db = r[0];
    l.snr_high_db = r[1];
  }
  if (j.contains("channel")) l.channel = parse_channel_kind(j.at("channel").get<std::string>());
  detail::read_opt(j, "batch_size", l.batch_size);
  detail::read_opt(j, "steps", l.steps);
  detail::read_opt(j, "learning_rate", l.learning_rate);
  detail::read_opt(j, "seed", l.seed);
  detail::read_opt(j, "checkpoint_every", l.checkpoint_every);
  detail::read_opt(j, "plateau_patience", l.plateau_patience);
  detail::read_opt(j, "grad_clip", l.grad_clip);
}

inline void to_json(nlohmann::json& j, const DataConfig& d) {
  j = {{"shapes", d.shapes},
       {"clouds", d.clouds},
       {"points_per_cloud", d.points_per_cloud},
       {"train_fraction", d.train_fraction},
       {"seed", d.seed}};
}

inline void from_json(const nlohmann::json& j, DataConfig& d) {
  detail::reject_unknown(j, {"shapes", "clouds", "points_per_cloud", "train_fraction", "seed"}, "data");
  detail::read_opt(j, "shapes", d.shapes);
  detail::read_opt(j, "clouds", d.clouds);
  detail::read_opt(j, "points_per_cloud", d.points_per_cloud);
  detail::read_opt(j, "train_fraction", d.train_fraction);
  detail::read_opt(j, "seed", d.seed);
}

inline void to_json(nlohmann::json& j, const EvalConfig& e) {
  j = {{"snr_db", e.snr_db}, {"trials", e.trials}, {"side_margin_db", e.side_margin_db}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& e) {
  detail::reject_unknown(j, {"snr_db", "trials", "side_margin_db"}, "eval");
  detail::read_opt(j, "snr_db", e.snr_db);
  detail::read_opt(j, "trials", e.trials);
  detail::read_opt(j, "side_margin_db", e.side_margin_db);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"model", c.model}, {"loss", c.loss}, {"data", c.data}, {"eval", c.eval}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  detail::reject_unknown(j, {"model", "loss", "data", "eval"}, "top level");
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  c.model.validate();
  c.loss.validate();
  return c;
}

}  // namespace pcst
