#pragma once

// Training metrics: one record per logging point, written as CSV and JSONL
// with fixed number formatting so identical runs give identical files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rime {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MetricsRecord {
  std::size_t env_step = 0;
  std::string phase;  // pretrain or online
  double eval_return = kNaN;
  double success_rate = kNaN;
  int sessions = 0;
  int labels = 0;
  std::size_t n_trusted = 0;
  std::size_t n_flipped = 0;
  std::size_t n_discarded = 0;
  double rho = kNaN;
  double tau_lower = kNaN;
  double flip_precision = kNaN;
  double flip_recall = kNaN;
  double trusted_corruption = kNaN;
  double reward_loss = kNaN;
  double critic_loss = kNaN;
  double actor_loss = kNaN;
  double alpha = kNaN;
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "env_step",  "phase",     "eval_return", "success_rate", "sessions",       "labels",
      "n_trusted", "n_flipped", "n_discarded", "rho",          "tau_lower",      "flip_precision",
      "flip_recall", "trusted_corruption", "reward_loss", "critic_loss", "actor_loss", "alpha"};
  return cols;
}

inline std::vector<std::string> metrics_fields(const MetricsRecord& r) {
  return {std::to_string(r.env_step), r.phase,
          format_number(r.eval_return), format_number(r.success_rate),
          std::to_string(r.sessions), std::to_string(r.labels),
          std::to_string(r.n_trusted), std::to_string(r.n_flipped),
          std::to_string(r.n_discarded), format_number(r.rho),
          format_number(r.tau_lower), format_number(r.flip_precision),
          format_number(r.flip_recall), format_number(r.trusted_corruption),
          format_number(r.reward_loss), format_number(r.critic_loss),
          format_number(r.actor_loss), format_number(r.alpha)};
}

inline std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream out;
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : records) {
    const auto f = metrics_fields(r);
    for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i];
    out << '\n';
  }
  return out.str();
}

inline std::string metrics_jsonl(const std::vector<MetricsRecord>& records) {
  // non-finite values become strings so every line stays valid JSON
  std::ostringstream out;
  const auto& cols = metrics_columns();
  for (const auto& r : records) {
    const auto f = metrics_fields(r);
    out << '{';
    for (std::size_t i = 0; i < f.size(); ++i) {
      out << (i ? "," : "") << '"' << cols[i] << "\":";
      const bool text = i == 1 || f[i] == "nan" || f[i] == "inf" || f[i] == "-inf";
      out << (text ? "\"" + f[i] + "\"" : f[i]);
    }
    out << "}\n";
  }
  return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<MetricsRecord> out;
  auto num = [](const std::string& s) { return s == "nan" ? kNaN : std::stod(s); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != metrics_columns().size()) throw std::runtime_error("malformed metrics row in " + path);
    MetricsRecord r;
    r.env_step = std::stoull(f[0]);
    r.phase = f[1];
    r.eval_return = num(f[2]);
    r.success_rate = num(f[3]);
    r.sessions = std::stoi(f[4]);
    r.labels = std::stoi(f[5]);
    r.n_trusted = std::stoull(f[6]);
    r.n_flipped = std::stoull(f[7]);
    r.n_discarded = std::stoull(f[8]);
    r.rho = num(f[9]);
    r.tau_lower = num(f[10]);
    r.flip_precision = num(f[11]);
    r.flip_recall = num(f[12]);
    r.trusted_corruption = num(f[13]);
    r.reward_loss = num(f[14]);
    r.critic_loss = num(f[15]);
    r.actor_loss = num(f[16]);
    r.alpha = num(f[17]);
    out.push_back(r);
  }
  return out;
}

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

/// Minimal SVG line chart of eval return against environment steps.
inline std::string svg_plot(const std::vector<PlotSeries>& series, const std::string& title) {
  const double W = 640, H = 400, L = 60, R = 20, T = 30, B = 40;
  constexpr double inf = std::numeric_limits<double>::infinity();
  double x0 = inf, x1 = -inf, y0 = inf, y1 = -inf;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L << "\" y=\"" << H - 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << format_number(x0)
    << "</text>\n";
  o << "<text x=\"" << W - R << "\" y=\"" << H - 10 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
    << format_number(x1) << "</text>\n";
  o << "<text x=\"5\" y=\"" << py(y1) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">" << format_number(y1)
    << "</text>\n";
  o << "<text x=\"5\" y=\"" << py(y0) << "\" font-family=\"sans-serif\" font-size=\"11\">" << format_number(y0)
    << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 5 << "\" y=\"" << T + 15 * (k + 1) << "\" text-anchor=\"end\" fill=\"" << c
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace rime
