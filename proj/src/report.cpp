#include "nabi/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nabi/stats.hpp"

namespace nabi::io {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               const std::string& header) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty CSV '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header)
    throw std::runtime_error("unexpected CSV header in '" + path + "': " + line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

const std::vector<std::string> kMethodOrder = {"mcmc", "nbe",  "fkl", "rkl1",
                                               "rkl2", "rkl3", "nre"};

int method_rank(const std::string& m) {
  for (size_t i = 0; i < kMethodOrder.size(); ++i)
    if (kMethodOrder[i] == m) return static_cast<int>(i);
  return static_cast<int>(kMethodOrder.size());
}

const char* method_color(const std::string& m) {
  static const std::map<std::string, const char*> colors = {
      {"mcmc", "#333333"}, {"nbe", "#e41a1c"},  {"fkl", "#377eb8"},
      {"rkl1", "#4daf4a"}, {"rkl2", "#984ea3"}, {"rkl3", "#ff7f00"},
      {"nre", "#a65628"}};
  auto it = colors.find(m);
  return it == colors.end() ? "#888888" : it->second;
}

}  // namespace

void write_report_csv(const std::string& path, const std::vector<MethodScores>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "method,rmspe,mape,mis90,cov90,mcrps,wallclock_s\n";
  for (const auto& r : rows) {
    os << r.method << ',' << fmt(r.rmspe) << ',' << fmt(r.mape) << ',' << fmt(r.mis90)
       << ',' << fmt(r.cov90) << ',' << (r.mcrps ? fmt(*r.mcrps) : std::string())
       << ',' << fmt(r.wallclock_s) << '\n';
  }
  if (!os) throw std::runtime_error("I/O failure writing '" + path + "'");
}

std::vector<MethodScores> read_report_csv(const std::string& path) {
  auto rows = read_csv(path, "method,rmspe,mape,mis90,cov90,mcrps,wallclock_s");
  std::vector<MethodScores> out;
  for (const auto& r : rows) {
    if (r.size() != 7) throw std::runtime_error("bad report row in '" + path + "'");
    MethodScores m;
    m.method = r[0];
    m.rmspe = std::stod(r[1]);
    m.mape = std::stod(r[2]);
    m.mis90 = std::stod(r[3]);
    m.cov90 = std::stod(r[4]);
    if (!r[5].empty()) m.mcrps = std::stod(r[5]);
    m.wallclock_s = std::stod(r[6]);
    out.push_back(std::move(m));
  }
  return out;
}

void write_dump_csv(const std::string& path, const std::vector<DatasetScore>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "method,dataset_id,abs_err,sq_err,is90,crps,covered\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.dataset_id << ',' << fmt(r.abs_err) << ','
       << fmt(r.sq_err) << ',' << fmt(r.is90) << ','
       << (r.crps ? fmt(*r.crps) : std::string()) << ',' << (r.covered ? 1 : 0)
       << '\n';
  }
  if (!os) throw std::runtime_error("I/O failure writing '" + path + "'");
}

std::vector<DatasetScore> read_dump_csv(const std::string& path) {
  auto rows = read_csv(path, "method,dataset_id,abs_err,sq_err,is90,crps,covered");
  std::vector<DatasetScore> out;
  for (const auto& r : rows) {
    if (r.size() != 7) throw std::runtime_error("bad dump row in '" + path + "'");
    DatasetScore d;
    d.method = r[0];
    d.dataset_id = std::stoll(r[1]);
    d.abs_err = std::stod(r[2]);
    d.sq_err = std::stod(r[3]);
    d.is90 = std::stod(r[4]);
    if (!r[5].empty()) d.crps = std::stod(r[5]);
    d.covered = r[6] == "1";
    out.push_back(std::move(d));
  }
  return out;
}

void write_estimates_csv(const std::string& path, const std::vector<DatasetScore>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "method,dataset_id,theta_true,estimate,q05,q95\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.dataset_id << ',' << fmt(r.theta_true) << ','
       << fmt(r.estimate) << ',' << fmt(r.q05) << ',' << fmt(r.q95) << '\n';
  }
  if (!os) throw std::runtime_error("I/O failure writing '" + path + "'");
}

std::vector<DatasetScore> read_estimates_csv(const std::string& path) {
  auto rows = read_csv(path, "method,dataset_id,theta_true,estimate,q05,q95");
  std::vector<DatasetScore> out;
  for (const auto& r : rows) {
    if (r.size() != 6) throw std::runtime_error("bad estimates row in '" + path + "'");
    DatasetScore d;
    d.method = r[0];
    d.dataset_id = std::stoll(r[1]);
    d.theta_true = std::stod(r[2]);
    d.estimate = std::stod(r[3]);
    d.q05 = std::stod(r[4]);
    d.q95 = std::stod(r[5]);
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

struct Svg {
  std::ostringstream body;
  int w, h;
  Svg(int width, int height) : w(width), h(height) {}
  void line(double x1, double y1, double x2, double y2, const char* color,
            double sw = 1.0, const char* dash = nullptr) {
    body << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2
         << "' stroke='" << color << "' stroke-width='" << sw << "'";
    if (dash) body << " stroke-dasharray='" << dash << "'";
    body << "/>\n";
  }
  void circle(double x, double y, double r, const char* color, double opacity) {
    body << "<circle cx='" << x << "' cy='" << y << "' r='" << r << "' fill='" << color
         << "' fill-opacity='" << opacity << "'/>\n";
  }
  void rect(double x, double y, double rw, double rh, const char* fill,
            const char* stroke) {
    body << "<rect x='" << x << "' y='" << y << "' width='" << rw << "' height='" << rh
         << "' fill='" << fill << "' stroke='" << stroke << "'/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 12,
            const char* anchor = "start", const char* color = "#000") {
    body << "<text x='" << x << "' y='" << y << "' font-size='" << size
         << "' font-family='sans-serif' text-anchor='" << anchor << "' fill='" << color
         << "'>" << s << "</text>\n";
  }
  void save(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
       << "' viewBox='0 0 " << w << " " << h << "'>\n"
       << "<rect width='100%' height='100%' fill='white'/>\n"
       << body.str() << "</svg>\n";
  }
};

std::vector<std::string> methods_in(const std::vector<DatasetScore>& rows) {
  std::vector<std::string> ms;
  for (const auto& r : rows)
    if (std::find(ms.begin(), ms.end(), r.method) == ms.end()) ms.push_back(r.method);
  std::sort(ms.begin(), ms.end(),
            [](const std::string& a, const std::string& b) {
              return method_rank(a) < method_rank(b);
            });
  return ms;
}

}  // namespace

void write_scatter_svg(const std::string& path, const std::vector<DatasetScore>& rows) {
  auto ms = methods_in(rows);
  if (ms.empty()) throw std::invalid_argument("write_scatter_svg: no rows");
  int panel = 220, pad = 45;
  int cols = static_cast<int>(ms.size());
  Svg svg(pad + cols * (panel + 16), panel + 2 * pad);
  double lo = 1e30, hi = -1e30;
  for (const auto& r : rows) {
    lo = std::min({lo, r.theta_true, r.estimate});
    hi = std::max({hi, r.theta_true, r.estimate});
  }
  double range = std::max(hi - lo, 1e-12);
  lo -= 0.05 * range;
  hi += 0.05 * range;
  for (int m = 0; m < cols; ++m) {
    double x0 = pad + m * (panel + 16);
    double y0 = pad;
    auto sx = [&](double v) { return x0 + (v - lo) / (hi - lo) * panel; };
    auto sy = [&](double v) { return y0 + panel - (v - lo) / (hi - lo) * panel; };
    svg.rect(x0, y0, panel, panel, "none", "#999");
    svg.line(sx(lo), sy(lo), sx(hi), sy(hi), "#bbbbbb", 1.0, "4,3");
    for (const auto& r : rows)
      if (r.method == ms[static_cast<size_t>(m)])
        svg.circle(sx(r.theta_true), sy(r.estimate), 1.6,
                   method_color(r.method), 0.45);
    svg.text(x0 + panel / 2.0, y0 + panel + 30, ms[static_cast<size_t>(m)], 13, "middle");
  }
  svg.text(12, pad + panel / 2.0, "estimate", 12, "middle");
  svg.text(pad + cols * (panel + 16) / 2.0, 20, "posterior mean vs true parameter", 14,
           "middle");
  svg.save(path);
}

void write_box_svg(const std::string& path, const std::vector<DatasetScore>& rows) {
  auto ms = methods_in(rows);
  if (ms.empty()) throw std::invalid_argument("write_box_svg: no rows");
  struct Panel {
    const char* title;
    std::function<std::optional<double>(const DatasetScore&)> get;
  };
  std::vector<Panel> panels = {
      {"absolute error", [](const DatasetScore& d) { return std::optional<double>(d.abs_err); }},
      {"90% interval score", [](const DatasetScore& d) { return std::optional<double>(d.is90); }},
      {"squared error", [](const DatasetScore& d) { return std::optional<double>(d.sq_err); }}};
  int pw = 260, ph = 220, pad = 50;
  Svg svg(pad + static_cast<int>(panels.size()) * (pw + 30), ph + 2 * pad + 20);
  for (size_t p = 0; p < panels.size(); ++p) {
    double x0 = pad + static_cast<double>(p) * (pw + 30);
    double y0 = pad;
    svg.rect(x0, y0, pw, ph, "none", "#999");
    // gather values per method
    double vmax = 0;
    std::vector<std::vector<double>> vals(ms.size());
    for (const auto& r : rows) {
      auto v = panels[p].get(r);
      if (!v) continue;
      size_t mi = static_cast<size_t>(
          std::find(ms.begin(), ms.end(), r.method) - ms.begin());
      vals[mi].push_back(*v);
    }
    for (auto& v : vals)
      if (!v.empty())
        vmax = std::max(vmax, stats::quantile_type7(v, 0.98));
    vmax = std::max(vmax, 1e-12);
    auto sy = [&](double v) { return y0 + ph - std::min(v / vmax, 1.0) * (ph - 10); };
    double slot = static_cast<double>(pw) / static_cast<double>(ms.size());
    for (size_t mi = 0; mi < ms.size(); ++mi) {
      if (vals[mi].empty()) continue;
      auto& v = vals[mi];
      double q1 = stats::quantile_type7(v, 0.25);
      double q2 = stats::quantile_type7(v, 0.5);
      double q3 = stats::quantile_type7(v, 0.75);
      double w1 = stats::quantile_type7(v, 0.05);
      double w2 = stats::quantile_type7(v, 0.95);
      double cx = x0 + slot * (static_cast<double>(mi) + 0.5);
      double bw = slot * 0.5;
      const char* col = method_color(ms[mi]);
      svg.line(cx, sy(w1), cx, sy(q1), col, 1.2);
      svg.line(cx, sy(q3), cx, sy(w2), col, 1.2);
      svg.rect(cx - bw / 2, sy(q3), bw, std::max(sy(q1) - sy(q3), 0.5), "none", col);
      svg.line(cx - bw / 2, sy(q2), cx + bw / 2, sy(q2), col, 2.0);
      svg.text(cx, y0 + ph + 16, ms[mi], 10, "middle");
    }
    svg.text(x0 + pw / 2.0, y0 - 8, panels[p].title, 13, "middle");
  }
  svg.save(path);
}

}  // namespace nabi::io
