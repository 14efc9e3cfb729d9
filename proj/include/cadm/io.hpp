#pragma once

// CSV emission/parsing for the result schemas and a small static SVG
// renderer for line and scatter plots.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cadm/errors.hpp"
#include "cadm/eval.hpp"
#include "cadm/trainer.hpp"

namespace cadm::io {

/// Shortest text that round-trips the double; '.' separator regardless of locale.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

inline void write_metrics_header(std::ostream& out) {
  write_row(out, {"iteration", "dataset_size", "mean_loss", "mean_return"});
}

inline void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  write_row(out, {std::to_string(r.iteration), std::to_string(r.dataset_size), fmt(r.mean_loss),
                  fmt(r.mean_return)});
}

inline void write_eval(std::ostream& out, const eval::EvalReport& rep) {
  write_row(out, {"env", "regime", "seed", "episode", "return"});
  for (std::size_t i = 0; i < rep.returns.size(); ++i)
    write_row(out, {std::string(envs::to_string(rep.env)), std::string(envs::to_string(rep.regime)),
                    std::to_string(rep.seed), std::to_string(i), fmt(rep.returns[i])});
}

inline void write_sweep(std::ostream& out, const std::vector<eval::SweepRow>& rows) {
  write_row(out, {"param", "value", "mse", "n"});
  for (const auto& r : rows) write_row(out, {r.param, fmt(r.value), fmt(r.mse), std::to_string(r.n)});
}

inline void write_latents(std::ostream& out, const std::vector<eval::LatentRow>& rows) {
  std::vector<std::string> header{"param_value", "ep", "t"};
  const Eigen::Index zd = rows.empty() ? 10 : rows.front().z.size();
  for (Eigen::Index i = 0; i < zd; ++i) header.push_back("z" + std::to_string(i));
  write_row(out, header);
  for (const auto& r : rows) {
    std::vector<std::string> cells{fmt(r.param_value), std::to_string(r.episode), std::to_string(r.t)};
    for (Eigen::Index i = 0; i < r.z.size(); ++i) cells.push_back(fmt(r.z[i]));
    write_row(out, cells);
  }
}

inline void write_trace(std::ostream& out, const std::vector<eval::TraceRow>& rows) {
  write_row(out, {"t", "dim", "true", "predicted"});
  for (const auto& r : rows)
    for (Eigen::Index d = 0; d < r.truth.size(); ++d)
      write_row(out, {std::to_string(r.t), std::to_string(d), fmt(r.truth[d]), fmt(r.predicted[d])});
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw DataError("csv: no column named '" + name + "'");
  }

  std::vector<double> numeric_column(int idx) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string& cell = rows[r][idx];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw DataError("csv: non-numeric value '" + cell + "' in column '" + header[idx] + "' row " +
                        std::to_string(r + 1));
      out.push_back(v);
    }
    return out;
  }
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line) || line.empty()) throw DataError("csv: missing header row");
  if (line.back() == '\r') line.pop_back();
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size())
      throw DataError("csv: line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ScatterPoint {
  double x;
  double y;
  double color_value;
};

namespace detail {

constexpr double kWidth = 640, kHeight = 440, kMargin = 60;

struct Frame {
  double xmin, xmax, ymin, ymax;
  double sx(double x) const { return kMargin + (x - xmin) / (xmax - xmin) * (kWidth - 2 * kMargin); }
  double sy(double y) const { return kHeight - kMargin - (y - ymin) / (ymax - ymin) * (kHeight - 2 * kMargin); }
};

inline Frame frame_for(const std::vector<double>& xs, const std::vector<double>& ys) {
  Frame f{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (double x : xs)
    if (std::isfinite(x)) f.xmin = std::min(f.xmin, x), f.xmax = std::max(f.xmax, x);
  for (double y : ys)
    if (std::isfinite(y)) f.ymin = std::min(f.ymin, y), f.ymax = std::max(f.ymax, y);
  if (!std::isfinite(f.xmin)) f.xmin = 0, f.xmax = 1;
  if (!std::isfinite(f.ymin)) f.ymin = 0, f.ymax = 1;
  if (f.xmax == f.xmin) f.xmin -= 0.5, f.xmax += 0.5;
  if (f.ymax == f.ymin) f.ymin -= 0.5, f.ymax += 0.5;
  return f;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline void open_svg(std::ostringstream& o, const Frame& f, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
    << "</text>\n";
  o << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin
    << "\" height=\"" << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << escape(xlabel) << "</text>\n";
  o << "<text x=\"15\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 "
    << kHeight / 2 << ")\">" << escape(ylabel) << "</text>\n";
  o << "<text x=\"" << kMargin << "\" y=\"" << kHeight - kMargin + 16 << "\" font-size=\"10\">" << fmt(f.xmin) << "</text>\n";
  o << "<text x=\"" << kWidth - kMargin << "\" y=\"" << kHeight - kMargin + 16
    << "\" font-size=\"10\" text-anchor=\"end\">" << fmt(f.xmax) << "</text>\n";
  o << "<text x=\"" << kMargin - 4 << "\" y=\"" << kHeight - kMargin << "\" font-size=\"10\" text-anchor=\"end\">"
    << fmt(f.ymin) << "</text>\n";
  o << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 10 << "\" font-size=\"10\" text-anchor=\"end\">"
    << fmt(f.ymax) << "</text>\n";
}

inline const char* palette(std::size_t i) {
  static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return kColors[i % 10];
}

// Linear blue-to-red ramp for t in [0, 1].
inline std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(40 + 200 * t), 60,
                static_cast<int>(240 - 200 * t));
  return buf;
}

}  // namespace detail

/// One <polyline> per series, one vertex per data point.
inline std::string render_lines(const std::vector<Series>& series, const std::string& title,
                                const std::string& xlabel, const std::string& ylabel) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const detail::Frame f = detail::frame_for(xs, ys);
  std::ostringstream o;
  detail::open_svg(o, f, title, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    o << "<polyline fill=\"none\" stroke=\"" << detail::palette(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < series[i].x.size(); ++k) {
      if (k) o << ' ';
      o << fmt(f.sx(series[i].x[k])) << ',' << fmt(f.sy(series[i].y[k]));
    }
    o << "\"><title>" << detail::escape(series[i].name) << "</title></polyline>\n";
    if (series.size() > 1)
      o << "<text x=\"" << detail::kWidth - detail::kMargin + 4 << "\" y=\"" << detail::kMargin + 14 * (i + 1)
        << "\" font-size=\"10\" fill=\"" << detail::palette(i) << "\">" << detail::escape(series[i].name)
        << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// One <circle> per point, colored by `color_value` on a blue-red ramp.
inline std::string render_scatter(const std::vector<ScatterPoint>& pts, const std::string& title,
                                  const std::string& xlabel, const std::string& ylabel) {
  std::vector<double> xs, ys;
  double cmin = std::numeric_limits<double>::infinity(), cmax = -cmin;
  for (const auto& p : pts) {
    xs.push_back(p.x);
    ys.push_back(p.y);
    cmin = std::min(cmin, p.color_value);
    cmax = std::max(cmax, p.color_value);
  }
  const detail::Frame f = detail::frame_for(xs, ys);
  std::ostringstream o;
  detail::open_svg(o, f, title, xlabel, ylabel);
  for (const auto& p : pts) {
    const double t = cmax > cmin ? (p.color_value - cmin) / (cmax - cmin) : 0.5;
    o << "<circle cx=\"" << fmt(f.sx(p.x)) << "\" cy=\"" << fmt(f.sy(p.y)) << "\" r=\"2.5\" fill=\""
      << detail::ramp(t) << "\" fill-opacity=\"0.7\"><title>" << fmt(p.color_value) << "</title></circle>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace cadm::io
