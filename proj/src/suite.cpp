#include "modbal/suite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace modbal {

void AblationConfig::apply(RunConfig& run) const {
  run.enable_mdi = mdi;
  run.enable_hcg_low = hcg_low;
  run.enable_hcg_high = hcg_high;
  run.enable_miw = miw;
}

std::vector<AblationConfig> standard_ablation() {
  return {{"baseline", false, false, false, false}, {"mdi", true, false, false, false},
          {"hcg-low", false, true, false, false},   {"hcg-high", false, false, true, false},
          {"miw", false, false, false, true},       {"full", true, true, true, true}};
}

AblationConfig parse_ablation(const std::string& text) {
  if (text == "baseline") return {"baseline", false, false, false, false};
  if (text == "full") return {"full", true, true, true, true};
  AblationConfig a;
  a.label = text;
  std::stringstream ss(text);
  std::string part;
  bool any = false;
  while (std::getline(ss, part, '+')) {
    if (part == "mdi") a.mdi = true;
    else if (part == "hcg-low") a.hcg_low = true;
    else if (part == "hcg-high") a.hcg_high = true;
    else if (part == "miw") a.miw = true;
    else throw std::invalid_argument("unknown ablation component '" + part + "' in '" + text + "'");
    any = true;
  }
  if (!any) throw std::invalid_argument("empty ablation spec");
  return a;
}

Stat Stat::of(const std::vector<double>& xs) {
  Stat s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (s.n - 1));
    s.se = s.std / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

const CellAggregate* SuiteReport::find(const std::string& group, const std::string& label) const {
  for (const auto& a : aggregates)
    if (a.group == group && a.label == label) return &a;
  return nullptr;
}

std::string grad_boost_label(double lambda) {
  std::ostringstream os;
  os << "lambda=" << lambda;
  return os.str();
}

CellResult run_cell(const std::string& group, const std::string& label, const RunConfig& run,
                    const GeneratorConfig& gen, int window, const StepCallback& on_step) {
  CellResult c;
  c.group = group;
  c.label = label;
  c.seed = run.seed;
  c.run = run;
  try {
    TrainResult tr = train(gen, run, on_step);
    c.records = std::move(tr.records);
    if (!c.records.empty()) {
      const std::size_t tail = std::min(c.records.size(), static_cast<std::size_t>(window));
      double s = 0.0;
      for (std::size_t i = c.records.size() - tail; i < c.records.size(); ++i) s += c.records[i].task_loss;
      c.final_loss = s / static_cast<double>(tail);
      c.gradient_bias = gradient_bias(std::span<const StepRecord>(c.records), window);
      c.feature_gradient_bias =
          gradient_bias(std::span<const FeatureGradRecord>(tr.feature_grads), window);
    }
    const auto samples = eval_set(gen, run);
    c.iou_both = eval_restricted(tr.model, samples, EvalMode::Both, run);
    c.iou_a = eval_restricted(tr.model, samples, EvalMode::AOnly, run);
    c.iou_b = eval_restricted(tr.model, samples, EvalMode::BOnly, run);
    c.ok = true;
  } catch (const std::exception& e) {
    c.ok = false;
    c.error = e.what();
  }
  return c;
}

PairedDiff paired_difference(const SuiteReport& report, const std::string& group,
                             const std::string& label_x, const std::string& label_y,
                             double CellResult::*metric) {
  std::vector<double> diffs;
  for (const CellResult& x : report.cells) {
    if (x.group != group || x.label != label_x || !x.ok) continue;
    for (const CellResult& y : report.cells) {
      if (y.group == group && y.label == label_y && y.seed == x.seed && y.ok) {
        diffs.push_back(x.*metric - y.*metric);
        break;
      }
    }
  }
  const Stat s = Stat::of(diffs);
  return {s.n, s.mean, s.se};
}

std::vector<CellAggregate> aggregate(const std::vector<CellResult>& cells) {
  std::vector<CellAggregate> out;
  for (const CellResult& c : cells) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](const CellAggregate& a) {
      return a.group == c.group && a.label == c.label;
    });
    if (seen) continue;
    CellAggregate a;
    a.group = c.group;
    a.label = c.label;
    std::vector<double> loss, bias, fbias, both, ao, bo;
    for (const CellResult& d : cells) {
      if (d.group != c.group || d.label != c.label) continue;
      if (!d.ok) {
        ++a.failed;
        continue;
      }
      loss.push_back(d.final_loss);
      bias.push_back(d.gradient_bias);
      fbias.push_back(d.feature_gradient_bias);
      both.push_back(d.iou_both);
      ao.push_back(d.iou_a);
      bo.push_back(d.iou_b);
    }
    a.final_loss = Stat::of(loss);
    a.gradient_bias = Stat::of(bias);
    a.feature_gradient_bias = Stat::of(fbias);
    a.iou_both = Stat::of(both);
    a.iou_a = Stat::of(ao);
    a.iou_b = Stat::of(bo);
    out.push_back(std::move(a));
  }
  return out;
}

SuiteReport run_experiment_suite(const RunConfig& base, const GeneratorConfig& gen,
                                 const SuiteSpec& spec) {
  if (spec.seeds.empty()) throw std::invalid_argument("experiment suite needs at least one seed");
  base.validate();
  gen.validate();

  struct Job {
    std::string group, label;
    RunConfig run;
  };
  std::vector<Job> jobs;
  for (double lambda : spec.grad_boost) {
    RunConfig r = base;
    r.grad_boost_lambda = lambda;
    r.validate();
    for (auto seed : spec.seeds) {
      r.seed = seed;
      jobs.push_back({"grad_boost", grad_boost_label(lambda), r});
    }
  }
  for (WeightingStrategy st : spec.weighting) {
    RunConfig r = base;
    r.strategy = st;
    for (auto seed : spec.seeds) {
      r.seed = seed;
      jobs.push_back({"weighting", std::string(to_string(st)), r});
    }
  }
  for (const AblationConfig& ab : spec.ablation) {
    RunConfig r = base;
    ab.apply(r);
    for (auto seed : spec.seeds) {
      r.seed = seed;
      jobs.push_back({"ablation", ab.label, r});
    }
  }

  // Identical configurations (e.g. lambda=1 and the default strategy) train once.
  std::vector<std::size_t> source(jobs.size());
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    source[i] = i;
    for (std::size_t u : unique) {
      if (jobs[u].run == jobs[i].run) {
        source[i] = u;
        break;
      }
    }
    if (source[i] == i) unique.push_back(i);
  }

  SuiteReport report;
  report.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < unique.size(); k = next++) {
      const Job& j = jobs[unique[k]];
      report.cells[unique[k]] = run_cell(j.group, j.label, j.run, gen, spec.window);
    }
  };
  const int threads = std::max(1, std::min<int>(spec.threads, static_cast<int>(unique.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (source[i] == i) continue;
    report.cells[i] = report.cells[source[i]];
    report.cells[i].group = jobs[i].group;
    report.cells[i].label = jobs[i].label;
  }
  report.aggregates = aggregate(report.cells);
  return report;
}

}  // namespace modbal
