#pragma once

#include "pcst/config.hpp"
#include "pcst/model.hpp"
#include "pcst/optim.hpp"
#include "pcst/pc_io.hpp"
#include "pcst/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst {

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy (natural log) with probabilities clamped to
/// [1e-7, 1 - 1e-7].
inline double bce_distortion(const std::vector<std::uint8_t>& truth, const std::vector<double>& probs) {
  if (truth.size() != probs.size()) throw std::invalid_argument("bce_distortion: length mismatch");
  if (truth.empty()) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double p = std::clamp(probs[i], kBceClamp, 1 - kBceClamp);
    acc -= truth[i] ? std::log(p) : std::log1p(-p);
  }
  return acc / double(truth.size());
}

/// dD/dp; zero where the clamp is active.
inline std::vector<double> bce_distortion_grad(const std::vector<std::uint8_t>& truth, const std::vector<double>& probs) {
  if (truth.size() != probs.size()) throw std::invalid_argument("bce_distortion: length mismatch");
  std::vector<double> g(probs.size(), 0.0);
  const double n = double(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p < kBceClamp || p > 1 - kBceClamp) continue;
    g[i] = (p - truth[i]) / (p * (1 - p)) / n;
  }
  return g;
}

inline double rd_loss(double rate, double distortion, double lambda) {
  if (!std::isfinite(rate) || !std::isfinite(distortion) || !std::isfinite(lambda)) {
    throw std::invalid_argument("rd_loss: non-finite input");
  }
  return rate + lambda * distortion;
}

/// A voxelised cloud with a display name.
struct NamedCloud {
  std::string name;
  std::vector<Coord> voxels;
};

/// Shapes cycle through the configured list; cloud i uses seed data.seed * 1000 + i.
inline std::vector<NamedCloud> synthetic_clouds(const DataConfig& data, int bit_depth) {
  if (data.shapes.empty() || data.clouds < 1) throw std::invalid_argument("dataset: need at least one shape and cloud");
  std::vector<NamedCloud> out;
  for (int i = 0; i < data.clouds; ++i) {
    const auto& shape = data.shapes[static_cast<std::size_t>(i) % data.shapes.size()];
    const auto cloud = synth_shape(parse_shape_kind(shape), static_cast<std::size_t>(data.points_per_cloud),
                                   data.seed * 1000 + static_cast<std::uint64_t>(i));
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03d", shape.c_str(), i);
    out.push_back({name, voxelize_coords(cloud, bit_depth)});
  }
  return out;
}

template <typename T>
std::vector<SparseTensor<T>> to_tensors(const std::vector<NamedCloud>& clouds) {
  std::vector<SparseTensor<T>> out;
  out.reserve(clouds.size());
  for (const auto& c : clouds) out.push_back(SparseTensor<T>::occupancy(c.voxels, 1));
  return out;
}

struct LossRecord {
  int step = 0;
  double loss = 0;
  double rate = 0;        // symbols, batch mean
  double distortion = 0;  // nats, batch mean
  double learning_rate = 0;
  double grad_norm = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint;   // written at the end and every checkpoint_every steps
  std::filesystem::path history_csv;  // loss history
  std::function<void(const LossRecord&)> on_step;
  nlohmann::json meta;
};

struct TrainResult {
  std::vector<LossRecord> history;
  bool diverged = false;
  int steps_done = 0;
  std::string message;
};

namespace detail {

template <typename T>
std::map<std::string, ag::Matrix<T>> snapshot(const nn::ParameterStore<T>& store) {
  std::map<std::string, ag::Matrix<T>> s;
  for (const auto& [name, p] : store.by_name()) s.emplace(name, p->value);
  return s;
}

template <typename T>
void restore(nn::ParameterStore<T>& store, const std::map<std::string, ag::Matrix<T>>& s) {
  for (const auto& [name, p] : store.by_name()) p->value = s.at(name);
}

template <typename T>
bool grads_finite(const nn::ParameterStore<T>& store) {
  for (const auto& [name, p] : store.by_name())
    if (!p->grad.allFinite()) return false;
  return true;
}

inline void write_history(const std::filesystem::path& path, const std::vector<LossRecord>& h) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,loss,rate,distortion,learning_rate,grad_norm\n";
  out.precision(10);
  for (const auto& r : h)
    out << r.step << ',' << r.loss << ',' << r.rate << ',' << r.distortion << ',' << r.learning_rate << ','
        << r.grad_norm << '\n';
}

}  // namespace detail

/// Rate-distortion training with the channel in the loop. Each step draws
/// batch_size clouds and one SNR per cloud; gradients are batch means.
/// Deterministic in cfg.seed. A non-finite loss or gradient restores the
/// parameters of the last finished step and stops.
template <typename T>
TrainResult train_model(PcstModel<T>& model, const LossConfig& cfg, const std::vector<SparseTensor<T>>& dataset,
                        const TrainOptions& opts = {}) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  model.config.eta = cfg.eta;
  TrainResult result;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_real_distribution<double> snr(cfg.snr_low_db, cfg.snr_high_db);
  nn::Adam<T> opt(model.store, cfg.learning_rate);
  nn::PlateauSchedule plateau(cfg.plateau_patience);

  auto meta = [&](int step) {
    nlohmann::json m = opts.meta;
    m["loss"] = cfg;
    m["steps_done"] = step;
    m["diverged"] = result.diverged;
    return m;
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    const auto good = detail::snapshot(model.store);
    model.store.zero_grad();
    LossRecord rec;
    rec.step = step;
    const T inv_batch = static_cast<T>(1.0 / cfg.batch_size);
    bool finite = true;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& x = dataset[pick(rng)];
      ForwardOptions fo;
      fo.quant = QuantMode::train;
      fo.channel = cfg.channel;
      fo.snr_db = snr(rng);
      fo.seed = rng();
      ag::Tape<T> tape;
      auto f = forward(model, tape, x, fo, cfg.eta);
      auto loss = ag::add(f.rate, ag::scale(f.distortion, static_cast<T>(cfg.lambda)));
      const double r = double(f.rate.value()(0, 0));
      const double d = double(f.distortion.value()(0, 0));
      if (!std::isfinite(r) || !std::isfinite(d)) {
        finite = false;
        break;
      }
      rec.rate += r / cfg.batch_size;
      rec.distortion += d / cfg.batch_size;
      tape.backward(loss, inv_batch);
    }
    if (finite) finite = detail::grads_finite(model.store);
    if (!finite) {
      detail::restore(model.store, good);
      result.diverged = true;
      result.message = "non-finite loss at step " + std::to_string(step) + "; kept parameters of step " +
                       std::to_string(step - 1);
      break;
    }
    rec.loss = rd_loss(rec.rate, rec.distortion, cfg.lambda);
    rec.grad_norm = nn::clip_grad_norm(model.store, cfg.grad_clip);
    rec.learning_rate = opt.learning_rate();
    opt.step();
    const double mult = plateau.observe(rec.loss);
    if (mult != 1.0) opt.set_learning_rate(opt.learning_rate() * mult);
    result.history.push_back(rec);
    result.steps_done = step;
    if (opts.on_step) opts.on_step(rec);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && !opts.checkpoint.empty()) {
      save_checkpoint(opts.checkpoint, model, meta(step));
      if (!opts.history_csv.empty()) detail::write_history(opts.history_csv, result.history);
    }
  }
  if (!opts.checkpoint.empty()) save_checkpoint(opts.checkpoint, model, meta(result.steps_done));
  if (!opts.history_csv.empty()) detail::write_history(opts.history_csv, result.history);
  return result;
}

struct CloudSummary {
  std::string cloud;
  int trials = 0;
  double d1_mean = 0, d1_std = 0;
  double d2_mean = 0, d2_std = 0;
  double cbr_mean = 0, cbr_std = 0;
};

inline void to_json(nlohmann::json& j, const CloudSummary& s) {
  j = {{"cloud", s.cloud},       {"trials", s.trials},     {"d1_mean", s.d1_mean},   {"d1_std", s.d1_std},
       {"d2_mean", s.d2_mean},   {"d2_std", s.d2_std},     {"cbr_mean", s.cbr_mean}, {"cbr_std", s.cbr_std}};
}

struct Evaluation {
  std::vector<TransmissionReport> reports;
  std::vector<CloudSummary> summary;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0, 0};
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / double(v.size() - 1)) : 0.0};
}

/// Trial t of cloud c uses channel seed seed + 1000 * c + t.
template <typename T>
Evaluation evaluate(const PcstModel<T>& model, const std::vector<NamedCloud>& clouds, TransmitOptions base, int trials) {
  if (trials < 1) throw std::invalid_argument("evaluate: trials must be positive");
  Evaluation ev;
  const auto seed0 = base.seed;
  for (std::size_t c = 0; c < clouds.size(); ++c) {
    std::vector<double> d1, d2, cb;
    for (int t = 0; t < trials; ++t) {
      auto o = base;
      o.seed = seed0 + 1000 * c + static_cast<std::uint64_t>(t);
      o.cloud = clouds[c].name;
      auto r = transmit_cloud(model, clouds[c].voxels, o);
      d1.push_back(r.report.d1_psnr_db);
      d2.push_back(r.report.d2_psnr_db);
      cb.push_back(r.report.cbr_total);
      ev.reports.push_back(std::move(r.report));
    }
    CloudSummary s;
    s.cloud = clouds[c].name;
    s.trials = trials;
    std::tie(s.d1_mean, s.d1_std) = mean_std(d1);
    std::tie(s.d2_mean, s.d2_std) = mean_std(d2);
    std::tie(s.cbr_mean, s.cbr_std) = mean_std(cb);
    ev.summary.push_back(s);
  }
  return ev;
}

/// Loads a checkpoint for evaluation; `expected` guards against a config
/// that disagrees with the stored model.
template <typename T>
Evaluation evaluate(const std::filesystem::path& checkpoint, const ModelConfig* expected,
                    const std::vector<NamedCloud>& clouds, const TransmitOptions& base, int trials) {
  auto loaded = load_checkpoint<T>(checkpoint, expected);
  return evaluate(*loaded.model, clouds, base, trials);
}

}  // namespace pcst
