#include "pcst/pcst.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace pcst;

namespace {

// Exit code for inputs that do not exist (checkpoints, clouds, manifests).
constexpr int kMissingInput = 2;

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw MissingInput(std::string(what) + " not found: " + p.string());
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

ExperimentConfig read_config(const Common& c) {
  if (c.config.empty()) return {};
  require_file(c.config, "config");
  return load_config(c.config);
}

fs::path data_root() {
  const char* env = std::getenv("PCST_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path();
}

std::vector<NamedCloud> load_clouds(const std::vector<fs::path>& paths, int bit_depth) {
  std::vector<NamedCloud> out;
  for (const auto& p : paths) {
    require_file(p, "cloud");
    out.push_back({p.stem().string(), voxelize_coords(load_ply(p), bit_depth)});
  }
  return out;
}

/// Clouds from an explicit manifest, else $PCST_DATA_DIR/<split>.txt, else
/// the synthetic set described by the config.
std::vector<NamedCloud> resolve_clouds(const std::string& manifest, const char* split, const ExperimentConfig& cfg,
                                       int bit_depth) {
  fs::path m = manifest;
  if (m.empty() && !data_root().empty()) m = data_root() / (std::string(split) + ".txt");
  if (!m.empty()) {
    require_file(m, "manifest");
    return load_clouds(read_manifest(m, data_root().empty() ? fs::path() : data_root()), bit_depth);
  }
  const auto all = synthetic_clouds(cfg.data, bit_depth);
  auto [train, val] = split_dataset(all, cfg.data.train_fraction, cfg.data.seed);
  return std::string(split) == "train" ? train : val;
}

ChannelKind channel_arg(const std::string& s, bool& use_channel) {
  use_channel = s != "none";
  return use_channel ? parse_channel_kind(s) : ChannelKind::awgn;
}

std::string lambda_label(const nlohmann::json& meta, const fs::path& ckpt) {
  if (meta.contains("loss") && meta["loss"].contains("lambda")) {
    char b[48];
    std::snprintf(b, sizeof(b), "lambda=%g", meta["loss"]["lambda"].get<double>());
    return b;
  }
  return ckpt.stem().string();
}

/// Runs jobs on `threads` workers; results keep job order.
std::vector<TransmissionReport> run_pool(const std::vector<std::function<std::vector<TransmissionReport>()>>& jobs,
                                         unsigned threads) {
  std::vector<std::vector<TransmissionReport>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        results[i] = jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::max(1u, threads); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<TransmissionReport> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON experiment config");
  sub->add_option("--seed", c.seed, "Seed overriding the config");
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

int cmd_prep(const Common& c) {
  auto cfg = read_config(c);
  if (c.seed) cfg.data.seed = *c.seed;
  const fs::path dir = c.out;
  fs::create_directories(dir / "clouds");
  const auto clouds = synthetic_clouds(cfg.data, cfg.model.bit_depth);
  std::vector<fs::path> paths;
  for (const auto& cl : clouds) {
    const auto p = fs::path("clouds") / (cl.name + ".ply");
    write_ply(dir / p, to_point_cloud(cl.voxels, cfg.model.bit_depth), PlyFormat::binary_little_endian);
    paths.push_back(p);
  }
  auto [train, val] = split_dataset(paths, cfg.data.train_fraction, cfg.data.seed);
  write_manifest(dir / "train.txt", train);
  write_manifest(dir / "val.txt", val);
  std::cout << "wrote " << clouds.size() << " clouds (" << train.size() << " train, " << val.size() << " val) to "
            << dir.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data, std::optional<double> lambda, std::optional<int> steps,
              std::optional<std::string> resume) {
  auto cfg = read_config(c);
  if (c.seed) cfg.loss.seed = *c.seed;
  if (lambda) cfg.loss.lambda = *lambda;
  if (steps) cfg.loss.steps = *steps;
  cfg.model.validate();
  cfg.loss.validate();
  const auto clouds = resolve_clouds(data, "train", cfg, cfg.model.bit_depth);
  const fs::path dir = c.out;
  fs::create_directories(dir);

  PcstModel<float> model(cfg.model, cfg.loss.seed);
  if (resume) {
    require_file(*resume, "checkpoint");
    model.copy_from(*load_checkpoint<float>(*resume, &cfg.model).model);
  }
  TrainOptions opts;
  opts.checkpoint = dir / "model.ckpt";
  opts.history_csv = dir / "history.csv";
  opts.meta = {{"data", cfg.data}, {"clouds", clouds.size()}};
  const int every = std::max(1, cfg.loss.steps / 20);
  opts.on_step = [&](const LossRecord& r) {
    if (r.step % every == 0 || r.step == cfg.loss.steps)
      std::cerr << "step " << r.step << " loss " << r.loss << " rate " << r.rate << " D " << r.distortion << " lr "
                << r.learning_rate << "\n";
  };
  std::ofstream(dir / "config.json") << nlohmann::json(cfg).dump(2) << "\n";
  const auto res = train_model(model, cfg.loss, to_tensors<float>(clouds), opts);
  if (res.diverged) {
    std::cerr << "warning: " << res.message << "\n";
    return 1;
  }
  std::cout << "trained " << res.steps_done << " steps; checkpoint " << opts.checkpoint.string() << "\n";
  return 0;
}

int cmd_transmit(const Common& c, const std::string& ckpt, const std::string& cloud, double snr, const std::string& ch) {
  require_file(ckpt, "checkpoint");
  require_file(cloud, "cloud");
  const auto cfg = read_config(c);
  auto loaded = load_checkpoint<float>(ckpt, c.config.empty() ? nullptr : &cfg.model);
  const auto& m = *loaded.model;
  TransmitOptions o;
  o.channel = channel_arg(ch, o.use_channel);
  o.snr_db = snr;
  o.seed = c.seed.value_or(0);
  o.side_margin_db = cfg.eval.side_margin_db;
  o.lambda_id = lambda_label(loaded.meta, ckpt);
  o.cloud = fs::path(cloud).stem().string();
  const auto voxels = voxelize_coords(load_ply(cloud), m.config.bit_depth);
  const auto r = transmit_cloud(m, voxels, o);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";

  const fs::path dir = c.out;
  fs::create_directories(dir);
  write_ply(dir / "reconstruction.ply", to_point_cloud(r.reconstruction, m.config.bit_depth));
  write_reports(dir / "report.jsonl", {r.report});
  std::printf("CBR %.6f (latent %.6f, side %.6f)  D1 %.3f dB  D2 %.3f dB  points %lld\n", r.report.cbr_total,
              r.report.cbr_latent, r.report.cbr_side, r.report.d1_psnr_db, r.report.d2_psnr_db,
              static_cast<long long>(r.report.n_points_out));
  return 0;
}

struct SweepArgs {
  std::vector<std::string> checkpoints;
  std::string data;
  std::vector<double> snr;
  std::string channel = "awgn";
  std::optional<int> trials;
  bool baseline = false;
  double design_snr = 10.0;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

int cmd_sweep(const Common& c, SweepArgs a) {
  const auto cfg = read_config(c);
  if (a.checkpoints.empty()) throw std::invalid_argument("sweep: at least one --checkpoint is required");
  if (a.snr.empty()) a.snr = cfg.eval.snr_db;
  if (a.snr.empty()) throw std::invalid_argument("sweep: empty SNR grid");
  const int trials = a.trials.value_or(cfg.eval.trials);
  if (trials < 1) throw std::invalid_argument("sweep: --trials must be positive");
  const auto seed = c.seed.value_or(0);

  std::vector<LoadedModel<float>> models;
  for (const auto& p : a.checkpoints) {
    require_file(p, "checkpoint");
    models.push_back(load_checkpoint<float>(p, c.config.empty() ? nullptr : &cfg.model));
  }
  const int bd = models.front().model->config.bit_depth;
  for (const auto& m : models)
    if (m.model->config.bit_depth != bd) throw std::invalid_argument("sweep: checkpoints disagree on bit_depth");
  const auto clouds = resolve_clouds(a.data, "val", cfg, bd);
  if (clouds.empty()) throw std::invalid_argument("sweep: no clouds");

  bool use_channel = true;
  const auto kind = channel_arg(a.channel, use_channel);
  std::vector<std::function<std::vector<TransmissionReport>()>> jobs;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (double snr : a.snr)
      jobs.push_back([&, i, snr] {
        TransmitOptions o;
        o.channel = kind;
        o.use_channel = use_channel;
        o.snr_db = snr;
        o.seed = seed;
        o.side_margin_db = cfg.eval.side_margin_db;
        o.lambda_id = lambda_label(models[i].meta, a.checkpoints[i]);
        return evaluate(*models[i].model, clouds, o, trials).reports;
      });

  if (a.baseline) {
    // Same bandwidth as the first checkpoint at the design SNR.
    for (std::size_t cl = 0; cl < clouds.size(); ++cl)
      jobs.push_back([&, cl] {
        TransmitOptions o;
        o.channel = kind;
        o.snr_db = a.design_snr;
        o.side_margin_db = cfg.eval.side_margin_db;
        o.compute_d2 = false;
        const double budget = transmit_cloud(*models.front().model, clouds[cl].voxels, o).report.cbr_total;
        const auto sc = sscc_config_for_budget(clouds[cl].voxels, bd, budget, a.design_snr, default_amc_table());
        std::vector<TransmissionReport> out;
        for (double snr : a.snr)
          for (int t = 0; t < trials; ++t) {
            auto r = sscc_transmit(clouds[cl].voxels, bd, sc, kind, snr, seed + 1000 * cl + std::uint64_t(t)).report;
            r.cloud = clouds[cl].name;
            out.push_back(std::move(r));
          }
        return out;
      });
  }

  const auto reports = run_pool(jobs, a.threads);
  const fs::path dir = c.out;
  write_reports(dir / "reports.jsonl", reports);
  emit_figures(dir, reports);
  write_summary_csv(dir / "summary_per_cloud.csv", summarize(reports, true));
  std::cout << "wrote " << reports.size() << " reports to " << (dir / "reports.jsonl").string() << "\n";
  return 0;
}

struct BaselineArgs {
  std::string cloud, data;
  std::vector<double> snr;
  std::string channel = "awgn";
  std::optional<int> trials;
  std::optional<double> cbr;
  double design_snr = 10.0;
};

int cmd_baseline(const Common& c, BaselineArgs a) {
  const auto cfg = read_config(c);
  if (a.snr.empty()) a.snr = cfg.eval.snr_db;
  if (a.snr.empty()) throw std::invalid_argument("baseline: empty SNR grid");
  const int trials = a.trials.value_or(cfg.eval.trials);
  const int bd = cfg.model.bit_depth;
  const auto clouds = a.cloud.empty() ? resolve_clouds(a.data, "val", cfg, bd) : load_clouds({a.cloud}, bd);
  bool use_channel = true;
  const auto kind = channel_arg(a.channel, use_channel);
  if (!use_channel) throw std::invalid_argument("baseline: needs a channel");
  const auto seed = c.seed.value_or(0);
  std::vector<TransmissionReport> reports;
  for (std::size_t cl = 0; cl < clouds.size(); ++cl) {
    const auto& v = clouds[cl].voxels;
    const auto sc = a.cbr ? sscc_config_for_budget(v, bd, *a.cbr, a.design_snr, default_amc_table())
                          : amc_select(a.design_snr, default_amc_table(), bd);
    for (double snr : a.snr)
      for (int t = 0; t < trials; ++t) {
        auto r = sscc_transmit(v, bd, sc, kind, snr, seed + 1000 * cl + std::uint64_t(t)).report;
        r.cloud = clouds[cl].name;
        reports.push_back(std::move(r));
      }
  }
  const fs::path dir = c.out;
  write_reports(dir / "reports.jsonl", reports);
  emit_figures(dir, reports);
  std::cout << "wrote " << reports.size() << " reports to " << (dir / "reports.jsonl").string() << "\n";
  return 0;
}

int cmd_plot(const Common& c, const std::vector<std::string>& inputs) {
  std::vector<TransmissionReport> all;
  for (const auto& p : inputs) {
    require_file(p, "report file");
    auto r = read_reports(p);
    all.insert(all.end(), r.begin(), r.end());
  }
  emit_figures(c.out, all);
  std::cout << "wrote figures for " << all.size() << " reports to " << c.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic point-cloud transmission: training, simulation and sweeps"};
  app.require_subcommand(1);
  Common pc, tc, xc, sc, bc, lc;  // one per subcommand so defaults do not leak

  auto* prep = app.add_subcommand("prep", "Write the synthetic dataset as PLY files plus train/val manifests");
  if (!data_root().empty()) pc.out = data_root().string();
  add_common(prep, pc);

  std::string data;
  std::optional<double> lambda;
  std::optional<int> steps;
  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "Train one rate-distortion point");
  add_common(train, tc);
  train->add_option("--data", data, "Manifest of training clouds (default $PCST_DATA_DIR/train.txt)");
  train->add_option("--lambda", lambda, "Distortion weight");
  train->add_option("--steps", steps, "Optimizer steps");
  train->add_option("--resume", resume, "Start from this checkpoint");

  std::string ckpt, cloud, channel = "awgn";
  double snr = 10.0;
  auto* transmit = app.add_subcommand("transmit", "Send one cloud through the full chain");
  add_common(transmit, xc);
  transmit->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  transmit->add_option("--cloud", cloud, "PLY point cloud")->required();
  transmit->add_option("--snr-db", snr, "Channel SNR in dB")->capture_default_str();
  transmit->add_option("--channel", channel, "awgn, rayleigh or none")
      ->check(CLI::IsMember({"awgn", "rayleigh", "none"}))
      ->capture_default_str();

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Evaluate checkpoints over an SNR grid and emit curves");
  add_common(sweep, sc);
  sweep->add_option("--checkpoint", sw.checkpoints, "Checkpoints, one per lambda point")->required();
  sweep->add_option("--data", sw.data, "Manifest of evaluation clouds (default $PCST_DATA_DIR/val.txt)");
  sweep->add_option("--snr-db", sw.snr, "SNR grid in dB (default from config)");
  sweep->add_option("--channel", sw.channel, "awgn, rayleigh or none")
      ->check(CLI::IsMember({"awgn", "rayleigh", "none"}));
  sweep->add_option("--trials", sw.trials, "Channel realisations per point");
  sweep->add_flag("--baseline", sw.baseline, "Overlay the separate source/channel coding baseline");
  sweep->add_option("--design-snr-db", sw.design_snr, "SNR used to fix the baseline's bandwidth")->capture_default_str();
  sweep->add_option("--threads", sw.threads, "Worker threads")->capture_default_str();

  BaselineArgs bl;
  auto* baseline = app.add_subcommand("baseline", "Octree + ideal channel code reference over an SNR grid");
  add_common(baseline, bc);
  baseline->add_option("--cloud", bl.cloud, "PLY point cloud (default: evaluation clouds)");
  baseline->add_option("--data", bl.data, "Manifest of clouds");
  baseline->add_option("--snr-db", bl.snr, "SNR grid in dB (default from config)");
  baseline->add_option("--channel", bl.channel, "awgn or rayleigh")->check(CLI::IsMember({"awgn", "rayleigh"}));
  baseline->add_option("--trials", bl.trials, "Channel realisations per point");
  baseline->add_option("--cbr", bl.cbr, "Bandwidth budget; the octree depth is reduced to fit");
  baseline->add_option("--design-snr-db", bl.design_snr, "SNR used to choose the code")->capture_default_str();

  std::vector<std::string> inputs;
  auto* plot = app.add_subcommand("plot", "Regenerate figures and summaries from report files");
  add_common(plot, lc);
  plot->add_option("--reports", inputs, "Report files (JSON lines)")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*prep) return cmd_prep(pc);
    if (*train) return cmd_train(tc, data, lambda, steps, resume);
    if (*transmit) return cmd_transmit(xc, ckpt, cloud, snr, channel);
    if (*sweep) return cmd_sweep(sc, sw);
    if (*baseline) return cmd_baseline(bc, bl);
    if (*plot) return cmd_plot(lc, inputs);
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).rfind("checkpoint not found", 0) == 0 ? kMissingInput : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
