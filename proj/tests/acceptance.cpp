// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// if any fails. Trained checkpoints are cached in PCST_ACCEPT_CACHE and
// reused while the config and step count are unchanged.

#include "gradient_checks.hpp"
#include "pcst/baseline.hpp"
#include "pcst/train.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace pcst;
using testutil::Mat;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-22s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char b[512];
  std::snprintf(b, sizeof(b), f, args...);
  return b;
}

// Every pipeline run in this binary goes through here.
struct PipelineLog {
  int runs = 0, count_mismatch = 0, warned = 0, d2_below_d1 = 0;

  void note(const TransmitResult& r) {
    ++runs;
    if (r.report.n_points_out != r.report.n_points_in) ++count_mismatch;
    if (!r.warnings.empty()) ++warned;
    if (r.report.d2_psnr_db < r.report.d1_psnr_db) ++d2_below_d1;
  }
} pipeline;

TransmitResult run(const PcstModel<float>& m, const NamedCloud& c, TransmitOptions o) {
  o.cloud = c.name;
  auto r = transmit_cloud(m, c.voxels, o);
  pipeline.note(r);
  return r;
}

struct Trained {
  double lambda = 0;
  std::unique_ptr<PcstModel<float>> model;
  double train_seconds = 0;
  bool cached = false;
};

Trained train_or_load(const ExperimentConfig& cfg, double lambda, const std::vector<NamedCloud>& train) {
  Trained t;
  t.lambda = lambda;
  LossConfig loss = cfg.loss;
  loss.lambda = lambda;
  const nlohmann::json key = {{"model", cfg.model}, {"loss", loss}, {"data", cfg.data}};
  const fs::path path = fs::path(PCST_ACCEPT_CACHE) / fmt("lambda_%g.ckpt", lambda);
  if (fs::exists(path)) {
    try {
      auto loaded = load_checkpoint<float>(path, &cfg.model);
      if (loaded.meta.value("key", nlohmann::json()) == key) {
        t.model = std::move(loaded.model);
        t.train_seconds = loaded.meta.at("train_seconds").get<double>();
        t.cached = true;
        return t;
      }
    } catch (const CheckpointError&) {
    }
  }
  t.model = std::make_unique<PcstModel<float>>(cfg.model, cfg.loss.seed);
  const auto t0 = Clock::now();
  TrainOptions opts;
  opts.on_step = [&](const LossRecord& r) {
    if (r.step % 100 == 0)
      std::fprintf(stderr, "  lambda %g step %d loss %.4g rate %.4g D %.4g (%.0f s)\n", lambda, r.step, r.loss, r.rate,
                   r.distortion, seconds_since(t0));
  };
  const auto res = train_model(*t.model, loss, to_tensors<float>(train), opts);
  t.train_seconds = seconds_since(t0);
  if (res.diverged) std::fprintf(stderr, "  lambda %g: %s\n", lambda, res.message.c_str());
  fs::create_directories(path.parent_path());
  save_checkpoint(path, *t.model, {{"key", key}, {"train_seconds", t.train_seconds}});
  return t;
}

std::vector<Point3> random_integer_cloud(std::size_t n, int range, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, range);
  std::vector<Point3> out(n);
  for (auto& p : out) p = {double(u(rng)), double(u(rng)), double(u(rng))};
  return out;
}

// --- criteria ---------------------------------------------------------------

void sparse_oracle() {
  const auto t0 = Clock::now();
  const auto s = testutil::sparse_oracle_sweep(240, 2024, 1e-6);
  const double secs = seconds_since(t0);
  verdict(s.cases >= 200 && s.failures == 0 && secs < 60, "sparse-op oracle",
          fmt("%d cases, %d failures, worst rel %.2e, %.1f s", s.cases, s.failures, s.worst, secs));
}

void gradients() {
  const auto t0 = Clock::now();
  const auto irn = testutil::irn_gradient_check(21);
  const auto lik = testutil::likelihood_gradient_check(5);
  const auto bce = testutil::bce_gradient_check(9);

  // BCE on probabilities, the form used for reporting distortion.
  const std::vector<std::uint8_t> truth{1, 0, 1, 0, 0, 1};
  Mat p(6, 1);
  p << 0.3, 0.2, 0.9, 0.6, 0.05, 0.75;
  auto f = [&] { return bce_distortion(truth, std::vector<double>(p.data(), p.data() + 6)); };
  const auto g = bce_distortion_grad(truth, std::vector<double>(p.data(), p.data() + 6));
  const Mat num = testutil::numeric_grad(f, p, 1e-7);
  const double bce_p = testutil::grad_rel_error(Eigen::Map<const Mat>(g.data(), 6, 1), num);

  const auto chain = testutil::full_chain_gradient_check(3);
  const double secs = seconds_since(t0);
  const double module = std::max({irn.worst, lik.worst, bce.worst, bce_p});
  verdict(module < 1e-4 && chain.worst < 1e-3 && chain.tensors > 20 && secs < 300, "gradient suite",
          fmt("irn %.1e, likelihood %.1e, bce %.1e/%.1e, full chain %.1e over %d tensors (worst %s), %.1f s", irn.worst,
              lik.worst, bce.worst, bce_p, chain.worst, chain.tensors, chain.worst_name.c_str(), secs));
}

void entropy_normalisation(const std::vector<Trained>& models) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& t : models) {
    const auto& d = t.model->density;
    const int range = 200;
    ag::Matrix<float> grid(2 * range + 1, d.channels());
    for (int i = -range; i <= range; ++i) grid.row(i + range).setConstant(float(i));
    const auto lik = d.likelihood(grid);
    for (int c = 0; c < d.channels(); ++c) {
      double s = 0;
      for (Eigen::Index i = 0; i < lik.rows(); ++i) s += double(lik(i, c));
      lo = std::min(lo, s), hi = std::max(hi, s);
    }
  }
  const auto k = symbol_budget(0.25, 1.0);
  const auto q = quantize_budget(k, {2, 4, 6, 8, 12, 16});
  verdict(lo >= 0.999 && hi <= 1.001 && k == 2 && q == 2, "entropy normalisation",
          fmt("channel mass in [%.6f, %.6f]; P=0.25, eta=1 -> k=%g, quantised %d", lo, hi, double(k), int(q)));
}

void lossless_coders() {
  std::mt19937_64 rng(77);
  int octree_bad = 0, klen_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const int depth = std::uniform_int_distribution<int>(1, 10)(rng);
    const int n = std::uniform_int_distribution<int>(1, 400)(rng);
    std::uniform_int_distribution<int> u(0, (1 << depth) - 1);
    std::set<Coord> s;
    for (int j = 0; j < n; ++j) s.insert({u(rng), u(rng), u(rng)});
    std::vector<Coord> in(s.begin(), s.end());
    std::shuffle(in.begin(), in.end(), rng);
    auto out = octree_decode(octree_encode(in, depth), depth);
    std::sort(out.begin(), out.end());
    if (out != std::vector<Coord>(s.begin(), s.end())) ++octree_bad;
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t alphabet = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 2000)(rng);
    // Mix of skewed and uniform index streams.
    std::discrete_distribution<std::size_t> skew({8, 4, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    std::uniform_int_distribution<std::size_t> flat(0, alphabet - 1);
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = (i % 2) ? flat(rng) : skew(rng) % alphabet;
    if (klen_decode(klen_encode(idx, alphabet), n, alphabet) != idx) ++klen_bad;
  }
  verdict(octree_bad == 0 && klen_bad == 0 && pipeline.count_mismatch == 0 && pipeline.warned == 0,
          "lossless contracts",
          fmt("octree %d/1000 and k-length %d/1000 mismatches; %d pipeline runs, %d with N_out != N_in, %d warned",
              octree_bad, klen_bad, pipeline.runs, pipeline.count_mismatch, pipeline.warned));
}

void channel_statistics() {
  const std::size_t n = 1000000;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  std::vector<cdouble> s(n);
  double ps = 0;
  for (auto& x : s) {
    x = {g(rng), g(rng)};
    ps += std::norm(x);
  }
  for (auto& x : s) x *= std::sqrt(double(n) / ps);  // exactly unit power

  double worst = 0;
  for (auto kind : {ChannelKind::awgn, ChannelKind::rayleigh})
    for (double snr : {0.0, 10.0, 20.0}) {
      const auto ch = realize_channel(kind, snr, n, 11 + std::uint64_t(snr));
      const auto y = transmit(s, ch);
      double sig = 0, noise = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sig += std::norm(ch.h[i] * s[i]);
        noise += std::norm(y[i] - ch.h[i] * s[i]);
      }
      worst = std::max(worst, std::abs(10 * std::log10(sig / noise) - snr));
    }

  const std::size_t m = 100000;
  const std::vector<cdouble> s2(s.begin(), s.begin() + m);
  const auto ch = realize_channel(ChannelKind::rayleigh, 10.0, m, 99);
  const auto y = transmit(s2, ch);
  const auto z = equalize(y, ch);
  double raw = 0, eq = 0;
  for (std::size_t i = 0; i < m; ++i) {
    raw += std::norm(y[i] - s2[i]);
    eq += std::norm(z[i] - s2[i]);
  }
  raw /= double(m), eq /= double(m);
  verdict(worst <= 0.1 && eq < raw, "channel statistics",
          fmt("max |empirical - target| %.4f dB over 1e6 symbols; Rayleigh 10 dB MSE equalised %.4f < raw %.4f", worst,
              eq, raw));
}

struct Point {
  double cbr = 0, d1 = 0, untrained_d1 = 0;
};

Point rd_point(const Trained& t, const PcstModel<float>& untrained, const std::vector<NamedCloud>& val, int trials) {
  Point p;
  int n = 0;
  for (std::size_t c = 0; c < val.size(); ++c)
    for (int k = 0; k < trials; ++k) {
      TransmitOptions o;
      o.snr_db = 10.0;
      o.seed = 500 + 100 * c + std::uint64_t(k);
      const auto r = run(*t.model, val[c], o);
      o.forced_index = r.klen;
      const auto u = run(untrained, val[c], o);
      p.cbr += r.report.cbr_total;
      p.d1 += r.report.d1_psnr_db;
      p.untrained_d1 += u.report.d1_psnr_db;
      ++n;
    }
  p.cbr /= n, p.d1 /= n, p.untrained_d1 /= n;
  return p;
}

void toy_rd(const ExperimentConfig& cfg, const std::vector<Trained>& models, const std::vector<NamedCloud>& val) {
  const PcstModel<float> untrained(cfg.model, cfg.loss.seed);
  const auto lo = rd_point(models[0], untrained, val, 3);
  const auto hi = rd_point(models[1], untrained, val, 3);
  const double secs = models[0].train_seconds + models[1].train_seconds;
  const bool pareto = hi.cbr > lo.cbr && hi.d1 > lo.d1;
  const double gap = std::min(lo.d1 - lo.untrained_d1, hi.d1 - hi.untrained_d1);
  verdict(pareto && gap >= 5 && secs <= 1800, "toy RD",
          fmt("lambda %g: CBR %.4f D1 %.2f dB (untrained %.2f); lambda %g: CBR %.4f D1 %.2f dB (untrained %.2f); "
              "training %.0f s%s",
              models[0].lambda, lo.cbr, lo.d1, lo.untrained_d1, models[1].lambda, hi.cbr, hi.d1, hi.untrained_d1, secs,
              models[0].cached && models[1].cached ? " (cached)" : ""));
}

void cliff(const std::vector<Trained>& models, const std::vector<NamedCloud>& val, int bit_depth) {
  const int trials = 3;
  std::vector<double> snrs;
  for (int s = 0; s <= 14; ++s) snrs.push_back(s);

  auto pcst_curve = [&](const Trained& t) {
    std::vector<double> d1(snrs.size(), 0.0);
    for (std::size_t i = 0; i < snrs.size(); ++i) {
      for (std::size_t c = 0; c < val.size(); ++c)
        for (int k = 0; k < trials; ++k) {
          TransmitOptions o;
          o.snr_db = snrs[i];
          o.seed = 9000 + 100 * c + std::uint64_t(k);
          d1[i] += run(*t.model, val[c], o).report.d1_psnr_db;
        }
      d1[i] /= double(val.size() * trials);
    }
    return d1;
  };
  auto max_step = [](const std::vector<double>& v, bool drop_only) {
    double m = 0;
    for (std::size_t i = 1; i < v.size(); ++i) m = std::max(m, drop_only ? v[i] - v[i - 1] : std::abs(v[i] - v[i - 1]));
    return m;
  };

  // SSCC gets each cloud's PCST budget at 10 dB and picks its code at 10 dB.
  std::vector<double> sscc(snrs.size(), 0.0);
  for (std::size_t c = 0; c < val.size(); ++c) {
    TransmitOptions o;
    o.snr_db = 10.0;
    o.seed = 9000 + 100 * c;
    const double budget = run(*models[0].model, val[c], o).report.cbr_total;
    const auto code = sscc_config_for_budget(val[c].voxels, bit_depth, budget, 10.0, default_amc_table());
    for (std::size_t i = 0; i < snrs.size(); ++i) {
      double acc = 0;
      for (int k = 0; k < trials; ++k)
        acc += sscc_transmit(val[c].voxels, bit_depth, code, ChannelKind::awgn, snrs[i], 9000 + 100 * c + k)
                   .report.d1_psnr_db;
      sscc[i] += acc / trials;
    }
  }
  for (auto& v : sscc) v /= double(val.size());

  const double sscc_cliff = max_step(sscc, true);
  std::string detail = fmt("SSCC max one-step gain %.2f dB", sscc_cliff);
  bool ok = sscc_cliff >= 10;
  for (const auto& t : models) {
    const auto curve = pcst_curve(t);
    const double step = max_step(curve, false);
    ok = ok && step <= 3;
    detail += fmt("; PCST lambda %g max |step| %.2f dB (D1 %.2f..%.2f)", t.lambda, step,
                  *std::min_element(curve.begin(), curve.end()), *std::max_element(curve.begin(), curve.end()));
  }
  verdict(ok, "cliff contrast", detail);
}

void side_info(const std::vector<Trained>& models, const std::vector<NamedCloud>& val) {
  auto share = [&](const Trained& t) {
    SideShare s;
    for (std::size_t c = 0; c < val.size(); ++c) {
      TransmitOptions o;
      o.snr_db = 10.0;
      o.seed = 700 + c;
      const auto r = run(*t.model, val[c], o);
      const auto p = side_share(r.side, r.report.n_points_in, ChannelKind::awgn, 10.0, o.side_margin_db);
      s.coords = std::max(s.coords, p.coords);
      s.klen = std::max(s.klen, p.klen);
    }
    return s;
  };
  const auto a = share(models[0]);
  const auto b = share(models[1]);
  verdict(a.coords <= 0.01 && a.klen <= 0.002, "side-info share",
          fmt("lambda %g: coords %.5f, k-length %.5f CBR (worst cloud); lambda %g for reference: coords %.5f, "
              "k-length %.5f",
              models[0].lambda, a.coords, a.klen, models[1].lambda, b.coords, b.klen));
}

void metric_oracle() {
  std::mt19937_64 rng(12);
  int nn_bad = 0, d1_bad = 0, d2_bad = 0, order_bad = 0, pairs = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t na = std::uniform_int_distribution<std::size_t>(1, 500)(rng);
    const std::size_t nb = std::uniform_int_distribution<std::size_t>(1, 500)(rng);
    const int range = std::uniform_int_distribution<int>(3, 40)(rng);
    const auto a = random_integer_cloud(na, range, rng);
    const auto b = random_integer_cloud(nb, range, rng);
    const KdTree tb(b);
    for (const auto& q : a) {
      double d2 = 0;
      const auto j = tb.nearest(q, &d2);
      const auto k = testutil::brute_nearest(b, q);
      if (j != k || d2 != squared_distance(q, b[k])) ++nn_bad;
    }
    const double peak = range;
    const double d1_oracle =
        psnr_from_error(std::max(testutil::brute_d1_error(a, b), testutil::brute_d1_error(b, a)), peak);
    if (d1_psnr(a, b, peak) != d1_oracle) ++d1_bad;

    const auto nrm_a = metric_normals(a), nrm_b = metric_normals(b);
    auto plane = [](const std::vector<Point3>& x, const std::vector<Point3>& y, const std::vector<Point3>& ny) {
      double acc = 0;
      for (const auto& p : x) {
        const auto j = testutil::brute_nearest(y, p);
        const double d = (p[0] - y[j][0]) * ny[j][0] + (p[1] - y[j][1]) * ny[j][1] + (p[2] - y[j][2]) * ny[j][2];
        acc += d * d;
      }
      return acc / double(x.size());
    };
    const double d2 = d2_psnr(a, b, nrm_a, nrm_b, peak);
    if (d2 != psnr_from_error(std::max(plane(a, b, nrm_b), plane(b, a, nrm_a)), peak)) ++d2_bad;
    if (d2 < d1_psnr(a, b, peak)) ++order_bad;
    ++pairs;
  }
  const bool ok = nn_bad == 0 && d1_bad == 0 && d2_bad == 0 && order_bad == 0 && pipeline.d2_below_d1 == 0;
  verdict(ok, "metric oracle",
          fmt("%d random pairs: nearest %d, D1 %d, D2 %d mismatches, D2<D1 %d; pipeline reports with D2<D1 %d/%d", pairs,
              nn_bad, d1_bad, d2_bad, order_bad, pipeline.d2_below_d1, pipeline.runs));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  sparse_oracle();
  gradients();
  channel_statistics();

  const auto cfg = load_config(fs::path(PCST_SOURCE_DIR) / "configs/desk.json");
  const auto clouds = synthetic_clouds(cfg.data, cfg.model.bit_depth);
  const auto [train, val] = split_dataset(clouds, cfg.data.train_fraction, cfg.data.seed);
  std::vector<Trained> models;
  for (double lambda : {cfg.loss.lambda, 1e6}) {
    std::fprintf(stderr, "training lambda %g on %zu clouds\n", lambda, train.size());
    models.push_back(train_or_load(cfg, lambda, train));
  }

  entropy_normalisation(models);
  toy_rd(cfg, models, val);
  cliff(models, val, cfg.model.bit_depth);
  side_info(models, val);
  // These two also cover every pipeline run above.
  lossless_coders();
  metric_oracle();

  std::printf("%s (%d failed, %.0f s)\n", failures ? "FAILED" : "ALL PASSED", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
