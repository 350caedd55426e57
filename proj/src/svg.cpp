#include "modbal/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>

#include "modbal/io.hpp"

namespace modbal {

namespace {

constexpr double kWidth = 760;
constexpr double kHeight = 420;
constexpr double kLeft = 72;
constexpr double kRight = 190;  // room for the legend
constexpr double kTop = 44;
constexpr double kBottom = 56;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string escape(const std::string& s) {
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

std::string fmt(double v, const char* f = "%.3f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string header(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth, "%.0f") +
                  "\" height=\"" + fmt(kHeight, "%.0f") + "\" viewBox=\"0 0 " + fmt(kWidth, "%.0f") +
                  " " + fmt(kHeight, "%.0f") + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<title>" + escape(title) + "</title>\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(title) + "</text>\n";
  return s;
}

struct Frame {
  AxisRange x, y;
  double px(double v) const {
    return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight);
  }
  double py(double v) const {
    return kHeight - kBottom - (v - y.lo) / (y.hi - y.lo) * (kHeight - kTop - kBottom);
  }
};

std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label,
                 bool x_ticks) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  s += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x1) + "\" y2=\"" + fmt(y0) + "\"/>\n";
  s += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x0) + "\" y2=\"" + fmt(y1) + "\"/>\n";
  s += "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.y.lo + (f.y.hi - f.y.lo) * i / 4.0;
    s += "<text class=\"ytick\" x=\"" + fmt(x0 - 6) + "\" y=\"" + fmt(f.py(v) + 4) +
         "\" text-anchor=\"end\">" + fmt(v, "%.4g") + "</text>\n";
  }
  if (x_ticks) {
    for (int i = 0; i <= 4; ++i) {
      const double v = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
      s += "<text class=\"xtick\" x=\"" + fmt(f.px(v)) + "\" y=\"" + fmt(y0 + 16) +
           "\" text-anchor=\"middle\">" + fmt(v, "%.4g") + "</text>\n";
    }
  }
  s += "<text x=\"" + fmt((x0 + x1) / 2) + "\" y=\"" + fmt(kHeight - 14) +
       "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
  return s;
}

std::string legend(const std::vector<std::string>& names) {
  std::string s = "<g class=\"legend\">\n";
  const double x = kWidth - kRight + 16;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 8 + 18.0 * static_cast<double>(i);
    s += "<g class=\"legend-entry\"><rect x=\"" + fmt(x) + "\" y=\"" + fmt(y - 9) +
         "\" width=\"12\" height=\"12\" fill=\"" + color(i) + "\"/><text x=\"" + fmt(x + 18) +
         "\" y=\"" + fmt(y + 1) + "\">" + escape(names[i]) + "</text></g>\n";
  }
  return s + "</g>\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

AxisRange padded_range(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("padded_range of no values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  if (hi > lo) {
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
  }
  const double pad = lo != 0.0 ? 0.05 * std::abs(lo) : 1.0;
  return {lo - pad, hi + pad};
}

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
  if (series.empty()) throw std::invalid_argument("line_chart needs at least one series");
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw std::invalid_argument("series '" + s.name + "' has mismatched x and y lengths");
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  if (xs.empty()) throw std::invalid_argument("line_chart: every series is empty");
  const Frame f{padded_range(xs), padded_range(ys)};
  std::string out = header(title) + axes(f, x_label, y_label, true);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.name);
    out += "<polyline class=\"series\" fill=\"none\" stroke-width=\"1.5\" stroke=\"";
    out += color(i);
    out += "\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (k > 0) out += ' ';
      out += fmt(f.px(s.x[k])) + "," + fmt(f.py(s.y[k]));
    }
    out += "\"/>\n";
  }
  return out + legend(names) + "</svg>\n";
}

std::string bar_chart(const std::string& title, const std::vector<std::string>& bar_names,
                      const std::vector<BarGroup>& groups) {
  if (groups.empty() || bar_names.empty()) throw std::invalid_argument("bar_chart needs data");
  std::vector<double> ys{0.0};
  for (const auto& g : groups) {
    if (g.values.size() != bar_names.size())
      throw std::invalid_argument("bar group '" + g.label + "' has the wrong number of values");
    ys.insert(ys.end(), g.values.begin(), g.values.end());
  }
  const Frame f{{0.0, static_cast<double>(groups.size())}, padded_range(ys)};
  std::string out = header(title) + axes(f, "", "score", false);
  const double slot = f.px(1.0) - f.px(0.0);
  const double bar_w = 0.8 * slot / static_cast<double>(bar_names.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double left = f.px(static_cast<double>(g)) + 0.1 * slot;
    for (std::size_t b = 0; b < bar_names.size(); ++b) {
      const double v = groups[g].values[b];
      const double top = f.py(std::max(v, 0.0));
      const double base = f.py(std::min(v, 0.0));
      out += "<rect class=\"bar\" x=\"" + fmt(left + bar_w * static_cast<double>(b)) + "\" y=\"" +
             fmt(top) + "\" width=\"" + fmt(bar_w) + "\" height=\"" + fmt(base - top) +
             "\" fill=\"" + color(b) + "\"/>\n";
    }
    out += "<text class=\"xtick\" x=\"" + fmt(left + 0.4 * slot) + "\" y=\"" +
           fmt(kHeight - kBottom + 16) + "\" text-anchor=\"middle\">" + escape(groups[g].label) +
           "</text>\n";
  }
  return out + legend(bar_names) + "</svg>\n";
}

std::vector<double> bias_curve(const std::vector<StepRecord>& records, int window) {
  if (window < 1) throw std::invalid_argument("bias_curve window must be >= 1");
  std::vector<double> out(records.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    sum += std::abs(records[i].grad_a - records[i].grad_b);
    if (i >= static_cast<std::size_t>(window))
      sum -= std::abs(records[i - window].grad_a - records[i - window].grad_b);
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

PlotReport plot_report(const std::string& run_id, const SuiteReport& report) {
  PlotReport p;
  p.run_id = run_id;
  for (const auto& agg : report.aggregates) {
    const std::string label = agg.group + ":" + agg.label;
    std::vector<const CellResult*> cells;
    for (const auto& c : report.cells)
      if (c.ok && c.group == agg.group && c.label == agg.label) cells.push_back(&c);
    if (cells.empty()) continue;
    std::size_t steps = cells.front()->records.size();
    for (const auto* c : cells) steps = std::min(steps, c->records.size());
    PlotRun run{label, std::vector<StepRecord>(steps)};
    const double inv = 1.0 / static_cast<double>(cells.size());
    for (std::size_t t = 0; t < steps; ++t) {
      StepRecord& r = run.records[t];
      r.step = static_cast<int>(t);
      for (const auto* c : cells) {
        const StepRecord& x = c->records[t];
        r.task_loss += inv * x.task_loss;
        r.distill_loss += inv * x.distill_loss;
        r.grad_a += inv * x.grad_a;
        r.grad_b += inv * x.grad_b;
        r.s_a += inv * x.s_a;
        r.s_b += inv * x.s_b;
        r.entropy_a += inv * x.entropy_a;
        r.entropy_b += inv * x.entropy_b;
      }
    }
    p.runs.push_back(std::move(run));
    p.evals.push_back({label, agg.iou_both.mean, agg.iou_a.mean, agg.iou_b.mean});
  }
  return p;
}

std::vector<std::filesystem::path> render_plots(const PlotReport& report,
                                                const std::filesystem::path& dir, int window) {
  if (report.runs.empty()) throw std::invalid_argument("render_plots: report has no runs");
  std::vector<std::filesystem::path> written;
  const std::string tag = report.run_id.empty() ? "" : " (" + report.run_id + ")";

  std::vector<Series> bias;
  for (const auto& r : report.runs) {
    Series s{r.label, {}, bias_curve(r.records, window)};
    for (const auto& rec : r.records) s.x.push_back(rec.step);
    bias.push_back(std::move(s));
  }
  written.push_back(dir / "gradient_bias.svg");
  write_text(written.back(), line_chart("Gradient bias" + tag, "step",
                                        "mean |grad_a - grad_b| (trailing window)", bias));

  const PlotRun& first = report.runs.front();
  Series ga{"grad_a (" + first.label + ")", {}, {}}, gb{"grad_b (" + first.label + ")", {}, {}};
  for (const auto& rec : first.records) {
    ga.x.push_back(rec.step);
    gb.x.push_back(rec.step);
    ga.y.push_back(rec.grad_a);
    gb.y.push_back(rec.grad_b);
  }
  written.push_back(dir / "grad_contrib.svg");
  write_text(written.back(),
             line_chart("Gradient contribution" + tag, "step", "task-gradient norm", {ga, gb}));

  if (!report.evals.empty()) {
    std::vector<BarGroup> groups;
    for (const auto& e : report.evals) groups.push_back({e.label, {e.both, e.a_only, e.b_only}});
    written.push_back(dir / "restricted_eval.svg");
    write_text(written.back(),
               bar_chart("Restricted-modality evaluation" + tag, {"both", "a_only", "b_only"}, groups));
  }
  return written;
}

}  // namespace modbal
