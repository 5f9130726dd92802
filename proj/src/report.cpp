#include "cotfaith/report.hpp"

#include "cotfaith/analysis/cma.hpp"
#include "cotfaith/analysis/logit_lens.hpp"
#include "cotfaith/errors.hpp"
#include "cotfaith/metrics/biasing_features.hpp"
#include "cotfaith/metrics/faithful_at_k.hpp"
#include "cotfaith/metrics/filler_tokens.hpp"
#include "cotfaith/metrics/fur.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace cotfaith {

namespace fs = std::filesystem;

CountsRow table_counts(const RunStore& store) {
  const auto outcomes = load_bf_outcomes(store);
  if (outcomes.empty())
    throw StoreError("table_counts: no bf records in " + store.dir().string());
  CountsRow row;
  for (const auto& o : outcomes) {
    ++row.total;
    if (!o.error.empty() || !o.switched) continue;
    ++row.changed;
    if (!o.verbalized || !*o.verbalized) ++row.unfaithful;
  }
  return row;
}

// ---------------------------------------------------------------------------
// Formatting + tiny SVG helpers
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content,
                std::vector<fs::path>& written) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  written.push_back(path);
}

struct Bar {
  std::string label;
  double value = 0, lo = 0, hi = 0;
};

std::string svg_bar_chart(const std::string& title, const std::vector<Bar>& bars,
                          double vmin, double vmax) {
  const double width = 120.0 * static_cast<double>(bars.size()) + 80.0;
  const double height = 300.0, plot_h = 220.0, base_y = 260.0;
  const double span = std::max(1e-12, vmax - vmin);
  auto y_of = [&](double v) { return base_y - (v - vmin) / span * plot_h; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
    << "\" height=\"" << fmt(height) << "\">\n";
  s << "<text x=\"10\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"40\" y1=\"" << fmt(y_of(vmin)) << "\" x2=\"" << fmt(width - 20)
    << "\" y2=\"" << fmt(y_of(vmin)) << "\" stroke=\"black\"/>\n";
  if (vmin < 0 && vmax > 0)
    s << "<line x1=\"40\" y1=\"" << fmt(y_of(0)) << "\" x2=\"" << fmt(width - 20)
      << "\" y2=\"" << fmt(y_of(0)) << "\" stroke=\"#999\" stroke-dasharray=\"4\"/>\n";
  for (size_t i = 0; i < bars.size(); ++i) {
    const double x = 60.0 + 120.0 * static_cast<double>(i);
    const double zero = vmin < 0 ? y_of(0) : y_of(vmin);
    const double top = y_of(bars[i].value);
    s << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(std::min(top, zero)) << "\" width=\"60\" height=\""
      << fmt(std::abs(zero - top)) << "\" fill=\"#4878a8\"/>\n";
    s << "<line x1=\"" << fmt(x + 30) << "\" y1=\"" << fmt(y_of(bars[i].lo)) << "\" x2=\""
      << fmt(x + 30) << "\" y2=\"" << fmt(y_of(bars[i].hi))
      << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << fmt(x) << "\" y=\"280\" font-size=\"12\">" << bars[i].label
      << "</text>\n";
    s << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(std::min(top, zero) - 6)
      << "\" font-size=\"11\">" << fmt(bars[i].value) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

struct Series {
  std::string name;
  std::vector<double> x, y, lo, hi;
};

std::string svg_line_chart(const std::string& title, const std::vector<Series>& series,
                           const std::string& x_label) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min({ymin, s.lo.empty() ? s.y[i] : s.lo[i]});
      ymax = std::max({ymax, s.hi.empty() ? s.y[i] : s.hi[i]});
    }
  if (xmin > xmax) { xmin = 0; xmax = 1; ymin = 0; ymax = 1; }
  if (ymin == ymax) { ymin -= 0.5; ymax += 0.5; }
  const double width = 520, height = 320;
  auto x_of = [&](double v) { return 50 + (v - xmin) / std::max(1e-12, xmax - xmin) * 440; };
  auto y_of = [&](double v) { return 270 - (v - ymin) / std::max(1e-12, ymax - ymin) * 230; };

  static const char* kColors[] = {"#4878a8", "#a85448", "#54a848", "#8848a8", "#a89448"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
    << height << "\">\n";
  s << "<text x=\"10\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"50\" y1=\"270\" x2=\"490\" y2=\"270\" stroke=\"black\"/>\n";
  s << "<line x1=\"50\" y1=\"40\" x2=\"50\" y2=\"270\" stroke=\"black\"/>\n";
  s << "<text x=\"250\" y=\"300\" font-size=\"12\">" << x_label << "</text>\n";
  s << "<text x=\"4\" y=\"45\" font-size=\"11\">" << fmt(ymax) << "</text>\n";
  s << "<text x=\"4\" y=\"270\" font-size=\"11\">" << fmt(ymin) << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& sr = series[si];
    const char* color = kColors[si % 5];
    if (!sr.lo.empty()) {
      std::ostringstream band;
      for (size_t i = 0; i < sr.x.size(); ++i)
        band << (i ? " " : "") << fmt(x_of(sr.x[i])) << "," << fmt(y_of(sr.hi[i]));
      for (size_t i = sr.x.size(); i-- > 0;)
        band << " " << fmt(x_of(sr.x[i])) << "," << fmt(y_of(sr.lo[i]));
      s << "<polygon points=\"" << band.str() << "\" fill=\"" << color
        << "\" opacity=\"0.2\"/>\n";
    }
    std::ostringstream line;
    for (size_t i = 0; i < sr.x.size(); ++i)
      line << (i ? " " : "") << fmt(x_of(sr.x[i])) << "," << fmt(y_of(sr.y[i]));
    s << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << fmt(460.0) << "\" y=\"" << fmt(40.0 + 16.0 * static_cast<double>(si))
      << "\" font-size=\"11\" fill=\"" << color << "\">" << sr.name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string estimate_csv(const std::vector<EffectEstimate>& rows) {
  std::ostringstream s;
  s << "effect,target,point,ci_low,ci_high,n,resamples\n";
  for (const auto& e : rows)
    s << e.effect << "," << e.target << "," << fmt(e.point) << "," << fmt(e.ci_low) << ","
      << fmt(e.ci_high) << "," << e.n << "," << e.resamples << "\n";
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// emit_plots
// ---------------------------------------------------------------------------

std::vector<fs::path> emit_plots(const RunStore& store, const fs::path& outdir,
                                 const ReportOptions& options) {
  fs::create_directories(outdir);
  std::vector<fs::path> written;
  auto wants = [&](const std::string& name) {
    return options.which.empty() || options.which.count(name) > 0;
  };

  const auto bf = load_bf_outcomes(store);

  if (wants("counts") && !bf.empty()) {
    const CountsRow row = table_counts(store);
    std::ostringstream csv;
    csv << "unfaithful,changed,total\n"
        << row.unfaithful << "," << row.changed << "," << row.total << "\n";
    write_file(outdir / "counts.csv", csv.str(), written);
  }

  if (wants("bf") && !bf.empty()) {
    bool any_switched = std::any_of(bf.begin(), bf.end(), [](const BFOutcome& o) {
      return o.error.empty() && o.switched;
    });
    if (any_switched) {
      const auto est = unfaithfulness_rate(bf, options.bootstrap);
      write_file(outdir / "bf_unfaithfulness.csv", estimate_csv({est}), written);
      write_file(outdir / "bf_unfaithfulness.svg",
                 svg_bar_chart("Unfaithfulness rate (biasing features)",
                               {{"unfaithful", est.point, est.ci_low, est.ci_high}}, 0, 1),
                 written);
    }
  }

  if (wants("ft")) {
    const auto ft = load_ft_outcomes(store);
    if (!ft.empty()) {
      const auto est = ft_faithful_rate(ft, options.bootstrap);
      write_file(outdir / "ft_faithful.csv", estimate_csv({est}), written);
      write_file(outdir / "ft_faithful.svg",
                 svg_bar_chart("Faithful fraction (filler tokens)",
                               {{"faithful", est.point, est.ci_low, est.ci_high}}, 0, 1),
                 written);
    }
  }

  if (wants("fur")) {
    const auto fur = load_fur_results(store);
    if (!fur.empty()) {
      std::vector<double> faithful;
      double eff_sum = 0, spec_sum = 0;
      long steps = 0;
      for (const auto& r : fur) {
        if (!r.error.empty() || !r.usable) continue;
        faithful.push_back(r.faithful ? 1.0 : 0.0);
        for (const auto& s : r.step_outcomes) {
          eff_sum += s.efficacy;
          spec_sum += s.specificity;
          ++steps;
        }
      }
      if (!faithful.empty()) {
        auto est = estimate_mean_percentile(faithful, "fur_faithful", options.bootstrap);
        write_file(outdir / "fur_faithful.csv", estimate_csv({est}), written);
        write_file(outdir / "fur_faithful.svg",
                   svg_bar_chart("Faithful fraction (unlearning)",
                                 {{"faithful", est.point, est.ci_low, est.ci_high}}, 0, 1),
                   written);
        std::ostringstream controls;
        controls << "mean_efficacy,mean_specificity,faithful_fraction,steps,examples\n";
        controls << fmt(steps ? eff_sum / static_cast<double>(steps) : 0.0) << ","
                 << fmt(steps ? spec_sum / static_cast<double>(steps) : 1.0) << ","
                 << fmt(est.point) << "," << steps << "," << faithful.size() << "\n";
        write_file(outdir / "fur_controls.csv", controls.str(), written);
      }
    }
  }

  if (wants("fak")) {
    const auto tallies = load_tallies(store);
    const long max_k = *std::max_element(options.ks.begin(), options.ks.end());
    const bool usable = std::any_of(tallies.begin(), tallies.end(),
                                    [&](const SampleTally& t) { return t.n >= max_k; });
    if (usable) {
      const auto curve = faithful_at_k_curve(tallies, options.ks, options.bootstrap);
      std::ostringstream csv;
      csv << "k,point,ci_low,ci_high,n,resamples\n";
      Series s;
      s.name = "faithful@k";
      for (const auto& [k, est] : curve) {
        csv << k << "," << fmt(est.point) << "," << fmt(est.ci_low) << ","
            << fmt(est.ci_high) << "," << est.n << "," << est.resamples << "\n";
        s.x.push_back(k);
        s.y.push_back(est.point);
        s.lo.push_back(est.ci_low);
        s.hi.push_back(est.ci_high);
      }
      write_file(outdir / "faithful_at_k.csv", csv.str(), written);
      write_file(outdir / "faithful_at_k.svg",
                 svg_line_chart("faithful@k", {s}, "k"), written);
    }
  }

  if (wants("lens")) {
    const auto windows = load_pattern_windows(store);
    if (!windows.empty()) {
      std::vector<std::string> notes;
      const auto rows = layer_profile(windows, options.bootstrap, &notes);
      std::ostringstream csv;
      csv << "pattern,layer,mean,ci_low,ci_high,count\n";
      std::map<std::string, Series> by_pattern;
      for (const auto& r : rows) {
        csv << to_string(r.pattern) << "," << r.layer << "," << fmt(r.mean) << ","
            << fmt(r.ci_low) << "," << fmt(r.ci_high) << "," << r.count << "\n";
        Series& s = by_pattern[to_string(r.pattern)];
        s.name = to_string(r.pattern);
        s.x.push_back(r.layer);
        s.y.push_back(r.mean);
        s.lo.push_back(r.ci_low);
        s.hi.push_back(r.ci_high);
      }
      for (const auto& note : notes) csv << "# " << note << "\n";
      write_file(outdir / "lens_profile.csv", csv.str(), written);
      std::vector<Series> series;
      for (auto& [_, s] : by_pattern) series.push_back(std::move(s));
      write_file(outdir / "lens_profile.svg",
                 svg_line_chart("Hint-token logit by layer", series, "layer"), written);
    }
  }

  if (wants("cma")) {
    const auto cells = load_cma_cells(store);
    if (cells.size() >= 2) {
      std::vector<EffectEstimate> rows;
      std::vector<Bar> bars;
      for (CmaTarget target : {CmaTarget::Hinted, CmaTarget::NonHintedSum}) {
        for (bool direct : {true, false}) {
          auto est = direct ? nde(cells, target, options.bootstrap)
                            : nie(cells, target, options.bootstrap);
          bars.push_back({est.effect + "/" + est.target, est.point, est.ci_low,
                          est.ci_high});
          rows.push_back(std::move(est));
        }
      }
      double lo = 0, hi = 0;
      for (const auto& b : bars) {
        lo = std::min(lo, b.lo);
        hi = std::max(hi, b.hi);
      }
      write_file(outdir / "cma_effects.csv", estimate_csv(rows), written);
      write_file(outdir / "cma_effects.svg",
                 svg_bar_chart("Direct and indirect effects", bars, lo - 0.05, hi + 0.05),
                 written);
    }
  }

  return written;
}

}  // namespace cotfaith
