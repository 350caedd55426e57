#include "modbal/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modbal/gradcheck.hpp"
#include "modbal/io.hpp"
#include "modbal/svg.hpp"

namespace modbal {

namespace fs = std::filesystem;

namespace {

struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_out_root() {
  const char* env = std::getenv("MODBAL_OUT_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

void add_generator_options(CLI::App* app, GeneratorConfig& g) {
  app->add_option("--height", g.height, "Image height")->group("Generator");
  app->add_option("--width", g.width, "Image width")->group("Generator");
  app->add_option("--min-blobs", g.min_blobs)->group("Generator");
  app->add_option("--max-blobs", g.max_blobs)->group("Generator");
  app->add_option("--min-blob-size", g.min_blob_size)->group("Generator");
  app->add_option("--max-blob-size", g.max_blob_size)->group("Generator");
  app->add_option("--contrast-a", g.contrast_a)->group("Generator");
  app->add_option("--contrast-b", g.contrast_b)->group("Generator");
  app->add_option("--noise-a", g.noise_a)->group("Generator");
  app->add_option("--noise-b", g.noise_b)->group("Generator");
  app->add_option("--blur-b", g.blur_b, "Box-blur radius of modality B")->group("Generator");
  app->add_option("--offset-b-y", g.offset_b_y, "Row shift of modality B")->group("Generator");
  app->add_option("--offset-b-x", g.offset_b_x, "Column shift of modality B")->group("Generator");
  app->add_option("--texture-a", g.texture_a, "Distractor amplitude in A")->group("Generator");
  app->add_option("--distractors-a", g.distractors_a, "Distractor count in A")->group("Generator");
  app->add_option("--hidden-a", g.hidden_a, "Probability an object is invisible in A")
      ->group("Generator");
}

void add_run_options(CLI::App* app, RunConfig& r) {
  app->add_option("--steps", r.steps, "Training steps");
  app->add_option("--lr", r.lr, "Learning rate");
  app->add_option("--delta", r.delta, "MDI blend between diversity and response");
  app->add_option("--alpha", r.alpha, "Weight of L_RW");
  app->add_option("--beta", r.beta, "Weight of L_DA");
  app->add_option("--gamma", r.gamma, "Weight of L_Struct");
  app->add_option_function<std::string>(
         "--strategy", [&r](const std::string& s) { r.strategy = *parse_strategy(s); },
         "Fusion weighting: inverse|uniform|forward")
      ->check(CLI::IsMember({"inverse", "uniform", "forward"}));
  app->add_option("--lambda", r.grad_boost_lambda, "Gradient multiplier on modality A's encoder");
  app->add_option("--enable-mdi", r.enable_mdi, "true|false");
  app->add_option("--enable-hcg-low", r.enable_hcg_low, "true|false");
  app->add_option("--enable-hcg-high", r.enable_hcg_high, "true|false");
  app->add_option("--enable-miw", r.enable_miw, "true|false");
  app->add_option("--momentum", r.momentum)->group("Optimizer");
  app->add_option("--weight-decay", r.weight_decay)->group("Optimizer");
  app->add_flag_callback(
         "--momentum-sgd",
         [&r] {
           r.momentum = 0.937;
           r.weight_decay = 0.0005;
         },
         "Momentum 0.937 with weight decay 0.0005")
      ->group("Optimizer");
  app->add_option("--batch-size", r.batch_size)->group("Optimizer");
  app->add_option("--aux-weight", r.aux_weight, "Weight of the auxiliary losses in the objective");
  app->add_flag_callback("--aux", [&r] { r.aux_weight = 0.1; }, "Train with auxiliary losses at 0.1");
  app->add_option("--score-ema", r.score_ema, "Temporal smoothing of the dominance scores");
  app->add_option("--eval-samples", r.eval_samples);
  app->add_option("--hidden-channels", r.model.hidden_channels)->group("Model");
  app->add_option("--feature-channels", r.model.feature_channels)->group("Model");
  app->add_option("--qk-dim", r.model.qk_dim)->group("Model");
}

// CLI11 only reads config files for the top-level app, so a subcommand's
// --config file is turned into flags. Keys given on the command line are
// skipped, which makes the command line take precedence.
std::vector<std::string> config_flags(const CLI::App& sub, const std::string& path) {
  std::vector<std::string> out;
  for (const CLI::ConfigItem& item : CLI::ConfigTOML{}.from_file(path)) {
    if (item.name.empty() || item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && item.parents != std::vector<std::string>{sub.get_name()}) continue;
    std::string flag = "--" + item.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    const CLI::Option* opt = sub.get_option_no_throw(flag);
    if (opt == nullptr || flag == "--config") {
      throw CLI::ConversionError("config file '" + path + "' has unknown key '" + item.fullname() + "'");
    }
    if (opt->count() > 0) continue;
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    out.push_back(flag);
    out.push_back(value);
  }
  return out;
}

std::vector<std::uint64_t> seed_list(int count, const std::vector<std::uint64_t>& explicit_seeds) {
  if (!explicit_seeds.empty()) return explicit_seeds;
  std::vector<std::uint64_t> out;
  for (int i = 1; i <= count; ++i) out.push_back(static_cast<std::uint64_t>(i));
  return out;
}

std::string cell_dir_name(const CellResult& c) {
  std::string s = c.group + "-" + c.label + "-seed" + std::to_string(c.seed);
  for (char& ch : s)
    if (ch == '=' || ch == '+' || ch == '/' || ch == ' ') ch = '_';
  return s;
}

void print_aggregates(std::ostream& os, const std::vector<CellAggregate>& aggs) {
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %-12s %3s %6s %18s %18s %8s %8s\n", "group", "label", "n",
                "failed", "gradient_bias", "iou_both", "a_only", "b_only");
  os << line;
  for (const auto& a : aggs) {
    std::snprintf(line, sizeof line, "%-11s %-12s %3d %6d %9.5f +- %-6.4f %9.5f +- %-6.4f %8.4f %8.4f\n",
                  a.group.c_str(), a.label.c_str(), a.gradient_bias.n, a.failed, a.gradient_bias.mean,
                  a.gradient_bias.se, a.iou_both.mean, a.iou_both.se, a.iou_a.mean, a.iou_b.mean);
    os << line;
  }
}

int run_train(const ExperimentManifest& base, const fs::path& out_root) {
  ExperimentManifest m = base;
  m.command = "train";
  m.seeds = {m.run.seed};
  m.run.validate();
  m.generator.validate();
  if (m.run_id.empty()) m.run_id = derive_run_id(m);
  const fs::path dir = out_root / m.run_id;
  m.outputs = {{"manifest", "manifest.json"},
               {"metrics", "metrics.jsonl"},
               {"summary", "summary.csv"}};
  if (m.run.steps > 0) {
    m.outputs["plot:gradient_bias"] = "plots/gradient_bias.svg";
    m.outputs["plot:grad_contrib"] = "plots/grad_contrib.svg";
    m.outputs["plot:restricted_eval"] = "plots/restricted_eval.svg";
  }
  write_manifest(m, dir / "manifest.json");

  MetricsWriter metrics(dir / "metrics.jsonl");
  CellResult cell = run_cell("train", m.run_id, m.run, m.generator, 100,
                             [&](const StepRecord& r) { metrics.append(r); });
  write_summary_csv({summary_row(m.run_id, cell)}, dir / "summary.csv");
  if (!cell.ok) throw RuntimeFailure(cell.error);

  if (!cell.records.empty()) {
    PlotReport p{m.run_id, {{m.run_id, cell.records}}, {{m.run_id, cell.iou_both, cell.iou_a, cell.iou_b}}};
    render_plots(p, dir / "plots");
  }
  std::printf("run %s: %d steps, final loss %.6f, gradient bias %.6f, iou both %.4f a_only %.4f b_only %.4f\n",
              m.run_id.c_str(), m.run.steps, cell.final_loss, cell.gradient_bias, cell.iou_both,
              cell.iou_a, cell.iou_b);
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

int run_suite(ExperimentManifest m, const fs::path& out_root, int threads) {
  m.command = "suite";
  if (m.run_id.empty()) m.run_id = derive_run_id(m);
  const fs::path dir = out_root / m.run_id;

  SuiteSpec spec{m.grad_boost, m.weighting, m.ablation, m.seeds, 100, threads};
  const SuiteReport report = run_experiment_suite(m.run, m.generator, spec);

  m.outputs = {{"manifest", "manifest.json"},
               {"summary", "summary.csv"},
               {"report", "report.json"},
               {"plot:gradient_bias", "plots/gradient_bias.svg"},
               {"plot:grad_contrib", "plots/grad_contrib.svg"},
               {"plot:restricted_eval", "plots/restricted_eval.svg"}};
  std::vector<SummaryRow> rows;
  for (const auto& c : report.cells) {
    const std::string rel = "cells/" + cell_dir_name(c) + "/metrics.jsonl";
    m.outputs["cell:" + c.group + ":" + c.label + ":" + std::to_string(c.seed)] = rel;
    write_metrics(c.records, dir / rel);
    rows.push_back(summary_row(m.run_id, c));
  }
  write_manifest(m, dir / "manifest.json");
  write_summary_csv(rows, dir / "summary.csv");
  {
    auto out = open_output(dir / "report.json");
    out << to_json(m.run_id, report.aggregates).dump(2) << '\n';
  }
  const PlotReport plots = plot_report(m.run_id, report);
  if (!plots.runs.empty()) render_plots(plots, dir / "plots");

  print_aggregates(std::cout, report.aggregates);
  int failed = 0;
  for (const auto& c : report.cells) {
    if (c.ok) continue;
    ++failed;
    std::fprintf(stderr, "cell %s/%s seed %llu failed: %s\n", c.group.c_str(), c.label.c_str(),
                 static_cast<unsigned long long>(c.seed), c.error.c_str());
  }
  std::printf("wrote %s (%zu cells)\n", dir.string().c_str(), report.cells.size());
  return failed == 0 ? 0 : 2;
}

int run_grad_check(int instances, std::uint64_t seed) {
  GradCheckOptions opts;
  opts.instances = instances;
  opts.seed = seed;
  const auto rows = run_grad_checks(opts);
  bool ok = true;
  std::printf("%-22s %9s %9s %8s %12s %10s %8s  %s\n", "check", "instances", "rejected", "failures",
              "worst_rel", "tolerance", "seconds", "result");
  for (const auto& r : rows) {
    std::printf("%-22s %9d %9d %8d %12.3e %10.0e %8.2f  %s\n", r.name.c_str(), r.instances,
                r.rejected, r.failures, r.worst_error, r.tolerance, r.seconds,
                r.passed() ? "PASS" : "FAIL");
    ok = ok && r.passed();
  }
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient checks FAILED");
  return ok ? 0 : 2;
}

void write_pgm(const fs::path& path, std::span<const double> v, std::size_t h, std::size_t w) {
  auto out = open_output(path);
  out << "P2\n" << w << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double c = std::clamp(v[y * w + x], 0.0, 1.0);
      out << (x ? " " : "") << static_cast<int>(std::lround(255.0 * c));
    }
    out << '\n';
  }
}

int run_gen_data(const GeneratorConfig& g, std::uint64_t seed, int count, const fs::path& dir) {
  g.validate();
  if (count < 1) throw std::invalid_argument("--count must be >= 1");
  auto out = open_output(dir / "samples.jsonl");
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = train_data_seed(seed, i);
    const SyntheticSample sample = gen_sample(g, s);
    nlohmann::ordered_json j;
    j["index"] = i;
    j["seed"] = s;
    j["height"] = g.height;
    j["width"] = g.width;
    j["mod_a"] = std::vector<double>(sample.mod_a.values().begin(), sample.mod_a.values().end());
    j["mod_b"] = std::vector<double>(sample.mod_b.values().begin(), sample.mod_b.values().end());
    j["gt"] = std::vector<double>(sample.gt.values().begin(), sample.gt.values().end());
    out << j.dump() << '\n';
    const std::string stem = "sample" + std::to_string(i);
    write_pgm(dir / (stem + "_a.pgm"), sample.mod_a.values(), g.height, g.width);
    write_pgm(dir / (stem + "_b.pgm"), sample.mod_b.values(), g.height, g.width);
    write_pgm(dir / (stem + "_gt.pgm"), sample.gt.values(), g.height, g.width);
  }
  std::printf("wrote %d samples to %s\n", count, dir.string().c_str());
  return 0;
}

int run_report(const fs::path& dir, const fs::path& plots_dir) {
  const ExperimentManifest m = read_manifest(dir / "manifest.json");
  const auto rows = read_summary_csv(dir / "summary.csv");
  SuiteReport report;
  for (const auto& row : rows) {
    CellResult c;
    c.group = row.group;
    c.label = row.label;
    c.seed = row.seed;
    c.ok = row.status == "ok";
    c.error = row.error;
    c.final_loss = row.final_loss;
    c.gradient_bias = row.gradient_bias;
    c.feature_gradient_bias = row.feature_gradient_bias;
    c.iou_both = row.iou_both;
    c.iou_a = row.iou_a;
    c.iou_b = row.iou_b;
    const std::string key = m.command == "train"
                                ? "metrics"
                                : "cell:" + row.group + ":" + row.label + ":" + std::to_string(row.seed);
    const auto it = m.outputs.find(key);
    if (it == m.outputs.end()) throw RuntimeFailure("manifest has no metrics entry '" + key + "'");
    c.records = read_metrics(dir / it->second);
    report.cells.push_back(std::move(c));
  }
  report.aggregates = aggregate(report.cells);
  const PlotReport plots = plot_report(m.run_id, report);
  bool any = false;
  for (const auto& r : plots.runs) any = any || !r.records.empty();
  if (!any) throw RuntimeFailure("no step records under " + dir.string());
  for (const auto& p : render_plots(plots, plots_dir.empty() ? dir / "plots" : plots_dir))
    std::printf("wrote %s\n", p.string().c_str());
  print_aggregates(std::cout, report.aggregates);
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Modality-dominance experiments on a synthetic two-modality detector", "modbal"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  ExperimentManifest m;
  m.generator = GeneratorConfig::a_dominant();
  std::string out_dir;
  std::string run_id;

  auto* train = app.add_subcommand("train", "Train one configuration and write its metrics");
  std::string config_path;
  train->add_option("--config", config_path, "TOML config file; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  add_run_options(train, m.run);
  add_generator_options(train, m.generator);
  train->add_option("--seed", m.run.seed, "Run seed");
  std::string manifest_path;
  train->add_option("--manifest", manifest_path, "Re-run the configuration recorded in a manifest")
      ->check(CLI::ExistingFile);
  train->add_option("--out-dir", out_dir, "Output root (default $MODBAL_OUT_DIR or ./runs)");
  train->add_option("--run-id", run_id, "Run directory name (default derived from the config)");

  auto* suite = app.add_subcommand("suite", "Grad-boost, weighting and ablation sweeps over seeds");
  suite->add_option("--config", config_path, "TOML config file; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  add_run_options(suite, m.run);
  add_generator_options(suite, m.generator);
  int seed_count = 5;
  std::vector<std::uint64_t> explicit_seeds;
  std::vector<std::string> weighting, ablation;
  int threads = 1;
  suite->add_option("--seeds", seed_count, "Number of seeds (1..N)")->check(CLI::PositiveNumber);
  suite->add_option("--seed-list", explicit_seeds, "Explicit seeds")->delimiter(',');
  suite->add_option("--grad-boost", m.grad_boost, "Lambda values, e.g. 1,3,5")->delimiter(',');
  suite->add_option("--weighting", weighting, "Strategies, e.g. inverse,uniform,forward")
      ->delimiter(',')
      ->check(CLI::IsMember({"inverse", "uniform", "forward"}));
  suite->add_option("--ablation", ablation,
                    "'standard' or configs such as baseline,mdi,hcg-low+hcg-high,full")
      ->delimiter(',');
  suite->add_option("--threads", threads, "Cells trained in parallel")->check(CLI::PositiveNumber);
  suite->add_option("--out-dir", out_dir, "Output root (default $MODBAL_OUT_DIR or ./runs)");
  suite->add_option("--run-id", run_id, "Run directory name (default derived from the config)");

  auto* grad = app.add_subcommand("grad-check", "Run the finite-difference gradient battery");
  int instances = 100;
  std::uint64_t check_seed = 7;
  grad->add_option("--instances", instances, "Instances per check")->check(CLI::PositiveNumber);
  grad->add_option("--seed", check_seed, "Battery seed");

  auto* gen = app.add_subcommand("gen-data", "Write synthetic samples (JSONL and PGM) for inspection");
  add_generator_options(gen, m.generator);
  int count = 8;
  std::uint64_t gen_seed = 1;
  gen->add_option("--count", count, "Number of samples");
  gen->add_option("--seed", gen_seed, "Stream seed");
  gen->add_option("--out-dir", out_dir, "Output directory (default $MODBAL_OUT_DIR/samples)");

  auto* rep = app.add_subcommand("report", "Render plots and summaries from a stored run");
  std::string input, plots_dir;
  rep->add_option("input", input, "Run directory holding manifest.json")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--plots-dir", plots_dir, "Where to write the SVGs (default <input>/plots)");

  try {
    app.parse(argc, argv);
    if (!config_path.empty()) {
      const CLI::App* sub = *train ? train : suite;
      std::vector<std::string> args(argv + 1, argv + argc);
      const auto extra = config_flags(*sub, config_path);
      args.insert(args.end(), extra.begin(), extra.end());
      std::reverse(args.begin(), args.end());
      app.parse(args);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const fs::path root = out_dir.empty() ? default_out_root() : fs::path(out_dir);
  try {
    if (*train) {
      if (!manifest_path.empty()) {
        const ExperimentManifest loaded = read_manifest(manifest_path);
        if (loaded.command != "train")
          throw std::invalid_argument("manifest '" + manifest_path + "' is not a train manifest");
        m = loaded;
        m.outputs.clear();
      }
      if (!run_id.empty()) m.run_id = run_id;
      return run_train(m, root);
    }
    if (*suite) {
      m.seeds = seed_list(seed_count, explicit_seeds);
      for (const auto& w : weighting) m.weighting.push_back(*parse_strategy(w));
      for (const auto& a : ablation) {
        if (a == "standard") {
          for (auto& s : standard_ablation()) m.ablation.push_back(s);
        } else {
          m.ablation.push_back(parse_ablation(a));
        }
      }
      if (m.grad_boost.empty() && m.weighting.empty() && m.ablation.empty()) {
        std::cerr << "suite: give at least one of --grad-boost, --weighting, --ablation\n"
                  << suite->help();
        return 1;
      }
      m.run.validate();
      if (!run_id.empty()) m.run_id = run_id;
      return run_suite(m, root, threads);
    }
    if (*grad) return run_grad_check(instances, check_seed);
    if (*gen) return run_gen_data(m.generator, gen_seed, count, out_dir.empty() ? root / "samples" : root);
    if (*rep) return run_report(input, plots_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace modbal
