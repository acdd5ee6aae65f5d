#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "drsim/errors.hpp"
#include "drsim/scenario.hpp"

namespace drsim {

namespace {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct PlotData {
  std::string name;
  std::vector<double> preference, natural, incentivized;
  std::vector<std::size_t> qualifying;
  std::vector<std::vector<std::pair<double, double>>> trajectories;  ///< per period (step, Q_t)
  std::vector<std::vector<double>> valuation_opinions, dr_opinions;  ///< [step][agent]
  std::vector<std::string> fitness_devices;
  std::size_t fitness_period = 0;
  std::vector<std::pair<double, std::vector<double>>> fitness;  ///< (step, per-device fitness)
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '<') o += "&lt;";
    else if (ch == '>') o += "&gt;";
    else if (ch == '&') o += "&amp;";
    else o += ch;
  }
  return o;
}

// Minimal SVG canvas with a single plot area.
class Svg {
 public:
  Svg(std::string title, std::string xlabel, std::string ylabel, double x0, double x1, double y0, double y1)
      : x0_(x0), x1_(x1 > x0 ? x1 : x0 + 1), y0_(y0), y1_(y1 > y0 ? y1 : y0 + 1) {
    fmt::print(body_, "<text x='{}' y='22' font-size='15' text-anchor='middle'>{}</text>\n", kW / 2, esc(title));
    fmt::print(body_, "<text x='{}' y='{}' font-size='12' text-anchor='middle'>{}</text>\n", kL + kPw / 2, kH - 8, esc(xlabel));
    fmt::print(body_, "<text x='16' y='{}' font-size='12' text-anchor='middle' transform='rotate(-90 16 {})'>{}</text>\n",
               kT + kPh / 2, kT + kPh / 2, esc(ylabel));
    fmt::print(body_, "<rect x='{}' y='{}' width='{}' height='{}' fill='none' stroke='#333'/>\n", kL, kT, kPw, kPh);
    for (int i = 0; i <= 4; ++i) {
      const double v = y0_ + (y1_ - y0_) * i / 4.0;
      const double py = py_of(v);
      fmt::print(body_, "<line x1='{}' x2='{}' y1='{:.1f}' y2='{:.1f}' stroke='#ddd'/>\n", kL, kL + kPw, py, py);
      fmt::print(body_, "<text x='{}' y='{:.1f}' font-size='10' text-anchor='end'>{:.3g}</text>\n", kL - 4, py + 3, v);
      const double vx = x0_ + (x1_ - x0_) * i / 4.0;
      fmt::print(body_, "<text x='{:.1f}' y='{}' font-size='10' text-anchor='middle'>{:.4g}</text>\n", px_of(vx),
                 kT + kPh + 14, vx);
    }
  }

  void polyline(const Series& s, const char* color) {
    if (s.x.empty()) return;
    body_ << "<polyline class='trace' fill='none' stroke-width='1.5' stroke='" << color << "' points='";
    for (std::size_t i = 0; i < s.x.size(); ++i) fmt::print(body_, "{:.1f},{:.1f} ", px_of(s.x[i]), py_of(s.y[i]));
    body_ << "'/>\n";
    legend(s.label, color);
  }

  void bars(const std::vector<std::vector<double>>& groups, const std::vector<std::string>& labels) {
    const std::size_t n = groups.empty() ? 0 : groups.front().size();
    const double slot = kPw / static_cast<double>(std::max<std::size_t>(1, n));
    const double width = slot * 0.8 / static_cast<double>(std::max<std::size_t>(1, groups.size()));
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const char* color = kPalette[g % 8];
      for (std::size_t i = 0; i < groups[g].size(); ++i) {
        const double x = kL + slot * i + slot * 0.1 + width * g;
        const double top = py_of(groups[g][i]);
        fmt::print(body_, "<rect class='bar s{}' x='{:.1f}' y='{:.1f}' width='{:.1f}' height='{:.1f}' fill='{}'/>\n", g, x,
                   top, width, std::max(0.0, py_of(y0_) - top), color);
      }
      legend(labels[g], color);
    }
  }

  void shade_columns(const std::vector<std::size_t>& cols, std::size_t n) {
    const double slot = kPw / static_cast<double>(std::max<std::size_t>(1, n));
    for (std::size_t c : cols) {
      fmt::print(body_, "<rect x='{:.1f}' y='{}' width='{:.1f}' height='{}' fill='#f3e9c6'/>\n", kL + slot * c, kT, slot, kPh);
    }
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    fmt::print(out, "<svg xmlns='http://www.w3.org/2000/svg' width='{}' height='{}' font-family='sans-serif'>\n", kW, kH);
    out << "<rect width='100%' height='100%' fill='white'/>\n" << body_.str() << "</svg>\n";
  }

 private:
  static constexpr double kW = 820, kH = 460, kL = 70, kT = 40, kPw = 560, kPh = 360;
  double px_of(double x) const { return kL + (x - x0_) / (x1_ - x0_) * kPw; }
  double py_of(double y) const { return kT + kPh - (y - y0_) / (y1_ - y0_) * kPh; }
  void legend(const std::string& label, const char* color) {
    if (label.empty()) return;
    const double y = kT + 14 + 16 * legend_rows_++;
    fmt::print(body_, "<rect x='{}' y='{:.1f}' width='12' height='4' fill='{}'/>\n", kL + kPw + 12, y - 4, color);
    fmt::print(body_, "<text x='{}' y='{:.1f}' font-size='11'>{}</text>\n", kL + kPw + 28, y, esc(label));
  }

  double x0_, x1_, y0_, y1_;
  int legend_rows_ = 0;
  std::ostringstream body_;
};

double max_of(const std::vector<std::vector<double>>& vs) {
  double m = 0.0;
  for (const auto& v : vs) {
    for (double x : v) m = std::max(m, x);
  }
  return m;
}

// Weekly energy as period games progress: every period holds its last
// recorded Q_t once its game has stopped.
Series power_evolution(const PlotData& d) {
  Series s;
  s.label = d.name;
  std::size_t longest = 0;
  std::vector<double> steps;
  for (const auto& tr : d.trajectories) {
    for (const auto& [st, _] : tr) steps.push_back(st);
    longest = std::max(longest, tr.size());
  }
  if (longest == 0) return s;
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  std::vector<std::size_t> cursor(d.trajectories.size(), 0);
  for (double st : steps) {
    double total = 0.0;
    for (std::size_t p = 0; p < d.trajectories.size(); ++p) {
      const auto& tr = d.trajectories[p];
      if (tr.empty()) continue;
      while (cursor[p] + 1 < tr.size() && tr[cursor[p] + 1].first <= st) ++cursor[p];
      total += tr[cursor[p]].second;
    }
    s.x.push_back(st);
    s.y.push_back(total);
  }
  return s;
}

void plot_opinions(const std::vector<std::vector<double>>& traj, const std::string& topic, const std::filesystem::path& path,
                   PlotReport& rep) {
  if (traj.empty()) {
    rep.warnings.push_back(fmt::format("opinions_{}: empty trajectory, plot skipped", topic));
    return;
  }
  Svg svg(fmt::format("Opinion dynamics: {}", topic), "iteration", "opinion", 0, static_cast<double>(traj.size() - 1), 0, 1);
  const std::size_t n = traj.front().size();
  for (std::size_t i = 0; i < n; ++i) {
    Series s;
    for (std::size_t t = 0; t < traj.size(); ++t) {
      s.x.push_back(static_cast<double>(t));
      s.y.push_back(traj[t][i]);
    }
    svg.polyline(s, kPalette[i % 8]);
  }
  svg.save(path);
  rep.written.push_back(path);
}

void plot_single(const PlotData& d, const std::filesystem::path& plots, PlotReport& rep) {
  const std::size_t n = d.preference.size();
  if (n == 0) {
    rep.warnings.push_back("allocation: no periods, plot skipped");
  } else {
    const double top = max_of({d.preference, d.natural, d.incentivized}) * 1.1;
    Svg svg(fmt::format("Final power allocation at each period ({})", d.name), "period", "energy (kWh)", 0,
            static_cast<double>(n), 0, top);
    svg.shade_columns(d.qualifying, n);
    bool incentivized = d.incentivized != d.natural;
    std::vector<std::vector<double>> groups{d.preference, d.natural};
    std::vector<std::string> labels{"preference", "natural game"};
    if (incentivized) {
      groups.push_back(d.incentivized);
      labels.push_back("incentivized");
    }
    svg.bars(groups, labels);
    svg.save(plots / "allocation.svg");
    rep.written.push_back(plots / "allocation.svg");
  }

  const Series evo = power_evolution(d);
  if (evo.x.empty()) {
    rep.warnings.push_back("power evolution: empty trajectory, plot skipped");
  } else {
    const double lo = *std::min_element(evo.y.begin(), evo.y.end());
    const double hi = *std::max_element(evo.y.begin(), evo.y.end());
    Svg svg("Power evolution", "revision step", "weekly energy (kWh)", 0, evo.x.back(), lo * 0.95, hi * 1.05);
    svg.polyline(evo, kPalette[0]);
    svg.save(plots / "power_evolution.svg");
    rep.written.push_back(plots / "power_evolution.svg");
  }

  plot_opinions(d.valuation_opinions, "valuation", plots / "opinions_valuation.svg", rep);
  plot_opinions(d.dr_opinions, "dr_willingness", plots / "opinions_dr_willingness.svg", rep);

  if (d.fitness.empty()) {
    rep.warnings.push_back("fitness: empty trajectory, plot skipped");
  } else {
    double lo = 1e300, hi = -1e300;
    for (const auto& [_, row] : d.fitness) {
      for (double f : row) {
        lo = std::min(lo, f);
        hi = std::max(hi, f);
      }
    }
    const double pad = std::max(1e-6, 0.05 * (hi - lo));
    Svg svg(fmt::format("Fitness evolution, tracked household, period {}", d.fitness_period), "revision step", "fitness",
            d.fitness.front().first, d.fitness.back().first, lo - pad, hi + pad);
    for (std::size_t dev = 0; dev < d.fitness_devices.size(); ++dev) {
      Series s;
      s.label = d.fitness_devices[dev];
      for (const auto& [st, row] : d.fitness) {
        s.x.push_back(st);
        s.y.push_back(row[dev]);
      }
      svg.polyline(s, kPalette[dev % 8]);
    }
    svg.save(plots / "fitness.svg");
    rep.written.push_back(plots / "fitness.svg");
  }
}

std::size_t pick_fitness_period(const RunResult& r) {
  if (!r.qualifying.empty()) return r.qualifying.front();
  std::size_t best = 0;
  for (std::size_t t = 0; t < r.incentivized.periods.size(); ++t) {
    if (r.incentivized.periods[t].steps > r.incentivized.periods[best].steps) best = t;
  }
  return best;
}

PlotData from_result(const RunResult& r) {
  PlotData d;
  d.name = r.config.name;
  d.preference = r.preference_profile;
  d.natural = r.natural.aggregate;
  d.incentivized = r.incentivized.aggregate;
  d.qualifying = r.qualifying;
  for (const auto& p : r.incentivized.periods) {
    std::vector<std::pair<double, double>> tr;
    for (const auto& pt : p.trajectory) tr.emplace_back(static_cast<double>(pt.step), pt.aggregate);
    d.trajectories.push_back(std::move(tr));
  }
  d.valuation_opinions = r.valuation_opinions.trajectory;
  d.dr_opinions = r.dr_opinions.trajectory;
  if (!r.households.empty() && !r.incentivized.periods.empty()) {
    for (const auto& dev : r.households[r.config.tracked_household].devices) d.fitness_devices.push_back(dev.name);
    d.fitness_period = pick_fitness_period(r);
    const auto& p = r.incentivized.periods[d.fitness_period];
    for (std::size_t i = 0; i < p.tracked_fitness.size(); ++i) {
      d.fitness.emplace_back(static_cast<double>(p.trajectory[i].step), p.tracked_fitness[i]);
    }
  }
  return d;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  if (!in) return rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::vector<std::vector<double>> read_opinions(const std::filesystem::path& path) {
  std::vector<std::vector<double>> traj;
  const auto rows = read_csv(path);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<double> v;
    for (std::size_t c = 1; c < rows[i].size(); ++c) v.push_back(std::stod(rows[i][c]));
    traj.push_back(std::move(v));
  }
  return traj;
}

PlotData from_dir(const std::filesystem::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw IoError(fmt::format("{}: no summary.json", dir.string()));
  nlohmann::json s;
  try {
    s = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", (dir / "summary.json").string(), e.what()));
  }
  PlotData d;
  d.name = s.value("scenario", dir.filename().string());
  d.preference = s.at("energy_preference_kWh").get<std::vector<double>>();
  d.natural = s.at("energy_natural_kWh").get<std::vector<double>>();
  d.incentivized = s.at("energy_incentivized_kWh").get<std::vector<double>>();
  d.qualifying = s.at("qualifying_periods").get<std::vector<std::size_t>>();
  for (std::size_t t = 0; t < d.preference.size(); ++t) {
    std::vector<std::pair<double, double>> tr;
    const auto rows = read_csv(dir / fmt::format("trajectory_{}.csv", t));
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() >= 2) tr.emplace_back(std::stod(rows[i][0]), std::stod(rows[i][1]));
    }
    d.trajectories.push_back(std::move(tr));
  }
  d.valuation_opinions = read_opinions(dir / "opinions_valuation.csv");
  d.dr_opinions = read_opinions(dir / "opinions_dr_willingness.csv");
  const auto fit = read_csv(dir / "fitness.csv");
  if (fit.size() > 1) {
    d.fitness_devices.assign(fit[0].begin() + 2, fit[0].end());
    d.fitness_period = d.qualifying.empty() ? 0 : d.qualifying.front();
    if (d.qualifying.empty()) {
      // Without incentives, pick the period whose game ran longest.
      double longest = -1;
      for (std::size_t t = 0; t < d.trajectories.size(); ++t) {
        if (!d.trajectories[t].empty() && d.trajectories[t].back().first > longest) {
          longest = d.trajectories[t].back().first;
          d.fitness_period = t;
        }
      }
    }
    for (std::size_t i = 1; i < fit.size(); ++i) {
      if (fit[i].size() < 2 || std::stoul(fit[i][0]) != d.fitness_period) continue;
      std::vector<double> row;
      for (std::size_t c = 2; c < fit[i].size(); ++c) row.push_back(std::stod(fit[i][c]));
      d.fitness.emplace_back(std::stod(fit[i][1]), std::move(row));
    }
  }
  return d;
}

std::filesystem::path plots_dir(const std::filesystem::path& dir) {
  const auto p = dir / "plots";
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", p.string(), ec.message()));
  return p;
}

}  // namespace

PlotReport emit_plots(const RunResult& result, const std::filesystem::path& dir) {
  PlotReport rep;
  plot_single(from_result(result), plots_dir(dir), rep);
  return rep;
}

PlotReport plot_result_dirs(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out_dir) {
  PlotReport rep;
  if (dirs.empty()) return rep;
  std::vector<PlotData> data;
  for (const auto& d : dirs) data.push_back(from_dir(d));
  const auto plots = plots_dir(out_dir);
  if (data.size() == 1) {
    plot_single(data.front(), plots, rep);
    return rep;
  }
  std::vector<Series> traces;
  double lo = 1e300, hi = -1e300, right = 0;
  for (const auto& d : data) {
    Series s = power_evolution(d);
    if (s.x.empty()) {
      rep.warnings.push_back(fmt::format("{}: empty trajectory, trace skipped", d.name));
      continue;
    }
    lo = std::min(lo, *std::min_element(s.y.begin(), s.y.end()));
    hi = std::max(hi, *std::max_element(s.y.begin(), s.y.end()));
    right = std::max(right, s.x.back());
    traces.push_back(std::move(s));
  }
  if (traces.empty()) {
    rep.warnings.push_back("power evolution: every trajectory empty, plot skipped");
  } else {
    Svg svg("Power evolution for different incentive scenarios", "revision step", "weekly energy (kWh)", 0, right,
            lo * 0.95, hi * 1.05);
    for (std::size_t i = 0; i < traces.size(); ++i) svg.polyline(traces[i], kPalette[i % 8]);
    svg.save(plots / "power_evolution_comparison.svg");
    rep.written.push_back(plots / "power_evolution_comparison.svg");
  }
  const std::size_t n = data.front().natural.size();
  std::vector<std::vector<double>> groups{data.front().natural};
  std::vector<std::string> labels{"natural game"};
  for (const auto& d : data) {
    if (d.incentivized.size() != n) continue;
    groups.push_back(d.incentivized);
    labels.push_back(d.name);
  }
  Svg svg("Final power allocation by scenario", "period", "energy (kWh)", 0, static_cast<double>(n), 0, max_of(groups) * 1.1);
  svg.bars(groups, labels);
  svg.save(plots / "allocation_comparison.svg");
  rep.written.push_back(plots / "allocation_comparison.svg");
  return rep;
}

}  // namespace drsim
