#pragma once

#include "pcst/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace pcst {

// Reports are stored one JSON object per line.

inline void write_reports(std::ostream& out, const std::vector<TransmissionReport>& reports) {
  for (const auto& r : reports) out << nlohmann::json(r).dump() << '\n';
}

inline void write_reports(const std::filesystem::path& path, const std::vector<TransmissionReport>& reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_reports(out, reports);
}

inline std::vector<TransmissionReport> read_reports(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report file " + path.string());
  std::vector<TransmissionReport> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<TransmissionReport>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

/// Mean and sample std over the trials of one (scheme, lambda, channel, snr, cloud) cell.
struct SummaryRow {
  std::string scheme, lambda_id, channel_kind, cloud;
  double snr_db = 0;
  int trials = 0;
  double d1_mean = 0, d1_std = 0, d2_mean = 0, d2_std = 0, cbr_mean = 0, cbr_std = 0;
};

inline std::vector<SummaryRow> summarize(const std::vector<TransmissionReport>& reports, bool per_cloud = false) {
  using Key = std::tuple<std::string, std::string, std::string, double, std::string>;
  std::map<Key, std::vector<const TransmissionReport*>> groups;
  for (const auto& r : reports)
    groups[{r.scheme, r.lambda_id, r.channel_kind, r.snr_db, per_cloud ? r.cloud : std::string()}].push_back(&r);

  auto stats = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(s / double(v.size() - 1)) : 0.0};
  };
  std::vector<SummaryRow> rows;
  for (const auto& [key, rs] : groups) {
    SummaryRow row;
    std::tie(row.scheme, row.lambda_id, row.channel_kind, row.snr_db, row.cloud) = key;
    row.trials = static_cast<int>(rs.size());
    std::vector<double> d1, d2, cb;
    for (const auto* r : rs) {
      d1.push_back(r->d1_psnr_db);
      d2.push_back(r->d2_psnr_db);
      cb.push_back(r->cbr_total);
    }
    std::tie(row.d1_mean, row.d1_std) = stats(d1);
    std::tie(row.d2_mean, row.d2_std) = stats(d2);
    std::tie(row.cbr_mean, row.cbr_std) = stats(cb);
    rows.push_back(row);
  }
  return rows;
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "scheme,lambda_id,channel,snr_db,cloud,trials,d1_mean,d1_std,d2_mean,d2_std,cbr_mean,cbr_std\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.scheme << ',' << r.lambda_id << ',' << r.channel_kind << ',' << r.snr_db << ',' << r.cloud << ','
        << r.trials << ',' << r.d1_mean << ',' << r.d1_std << ',' << r.d2_mean << ',' << r.d2_std << ','
        << r.cbr_mean << ',' << r.cbr_std << '\n';
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  int width = 640, height = 420;
};

/// RD curves: one series per (scheme, channel, SNR), points sorted by CBR.
inline std::vector<Series> rd_series(const std::vector<SummaryRow>& rows) {
  std::map<std::string, std::vector<std::pair<double, double>>> pts;
  for (const auto& r : rows) {
    char name[96];
    std::snprintf(name, sizeof(name), "%s %s %g dB", r.scheme.c_str(), r.channel_kind.c_str(), r.snr_db);
    pts[name].push_back({r.cbr_mean, r.d1_mean});
  }
  std::vector<Series> out;
  for (auto& [name, p] : pts) {
    std::sort(p.begin(), p.end());
    Series s{name, {}, {}};
    for (const auto& [x, y] : p) {
      s.x.push_back(x);
      s.y.push_back(y);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Quality against channel SNR: one series per (scheme, lambda, channel).
inline std::vector<Series> snr_series(const std::vector<SummaryRow>& rows) {
  std::map<std::string, std::vector<std::pair<double, double>>> pts;
  for (const auto& r : rows) {
    std::string name = r.scheme;
    if (!r.lambda_id.empty()) name += " " + r.lambda_id;
    name += " " + r.channel_kind;
    pts[name].push_back({r.snr_db, r.d1_mean});
  }
  std::vector<Series> out;
  for (auto& [name, p] : pts) {
    std::sort(p.begin(), p.end());
    Series s{name, {}, {}};
    for (const auto& [x, y] : p) {
      if (!std::isfinite(x)) continue;  // noiseless runs have no place on an SNR axis
      s.x.push_back(x);
      s.y.push_back(y);
    }
    if (!s.x.empty()) out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof(b), "%.4g", v);
  return b;
}

}  // namespace detail

/// Line plot with markers, linear axes padded 5 % around the data.
inline std::string render_svg(const PlotSpec& p) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double px = 0.05 * (x1 - x0), py = 0.05 * (y1 - y0);
  x0 -= px, x1 += px, y0 -= py, y1 += py;

  const double L = 70, R = 180, T = 40, B = 50;
  const double W = p.width - L - R, H = p.height - T - B;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * W; };
  auto sy = [&](double y) { return T + (1 - (y - y0) / (y1 - y0)) * H; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << p.width << "\" height=\"" << p.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L + W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << detail::xml_escape(p.title)
    << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W << "\" height=\"" << H
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y0 + (y1 - y0) * i / 5;
    o << "<text x=\"" << sx(xv) << "\" y=\"" << T + H + 16 << "\" text-anchor=\"middle\">" << detail::fmt(xv) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << detail::fmt(yv) << "</text>\n";
    o << "<line x1=\"" << L << "\" x2=\"" << L + W << "\" y1=\"" << sy(yv) << "\" y2=\"" << sy(yv)
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << L + W / 2 << "\" y=\"" << p.height - 12 << "\" text-anchor=\"middle\">"
    << detail::xml_escape(p.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << T + H / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::xml_escape(p.y_label) << "</text>\n";

  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const auto& s = p.series[k];
    const char* c = colors[k % 8];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << sx(s.x[i]) << ',' << sy(s.y[i]);
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << "<circle cx=\"" << sx(s.x[i]) << "\" cy=\"" << sy(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    const double ly = T + 14 + 16 * double(k);
    o << "<line x1=\"" << L + W + 10 << "\" x2=\"" << L + W + 28 << "\" y1=\"" << ly - 4 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << L + W + 32 << "\" y=\"" << ly << "\">" << detail::xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_svg(const std::filesystem::path& path, const PlotSpec& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << render_svg(p);
}

/// rd.svg, snr.svg and summary.csv next to each other in `dir`.
inline void emit_figures(const std::filesystem::path& dir, const std::vector<TransmissionReport>& reports) {
  std::filesystem::create_directories(dir);
  const auto rows = summarize(reports);
  write_summary_csv(dir / "summary.csv", rows);
  write_svg(dir / "rd.svg", {"D1-PSNR vs CBR", "CBR", "D1-PSNR (dB)", rd_series(rows)});
  write_svg(dir / "snr.svg", {"D1-PSNR vs channel SNR", "SNR (dB)", "D1-PSNR (dB)", snr_series(rows)});
}

}  // namespace pcst
