#include "modbal/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

namespace modbal {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

template <class T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) j.at(key).get_to(dst);
}

WeightingStrategy strategy_from(const json& j) {
  const auto text = j.get<std::string>();
  const auto s = parse_strategy(text);
  if (!s) throw IoError("unknown weighting strategy '" + text + "'");
  return *s;
}

const char* kCsvHeader =
    "run_id,group,label,seed,steps,status,final_loss,gradient_bias,feature_gradient_bias,"
    "iou_both,iou_a_only,iou_b_only,error";

}  // namespace

std::ofstream open_output(const fs::path& path, bool append) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

ordered_json to_json(const GeneratorConfig& g) {
  return {{"height", g.height},         {"width", g.width},
          {"min_blobs", g.min_blobs},   {"max_blobs", g.max_blobs},
          {"min_blob_size", g.min_blob_size}, {"max_blob_size", g.max_blob_size},
          {"contrast_a", g.contrast_a}, {"contrast_b", g.contrast_b},
          {"noise_a", g.noise_a},       {"noise_b", g.noise_b},
          {"blur_b", g.blur_b},         {"offset_b_y", g.offset_b_y},
          {"offset_b_x", g.offset_b_x}, {"texture_a", g.texture_a},
          {"distractors_a", g.distractors_a}, {"hidden_a", g.hidden_a}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  get_if(j, "height", g.height);
  get_if(j, "width", g.width);
  get_if(j, "min_blobs", g.min_blobs);
  get_if(j, "max_blobs", g.max_blobs);
  get_if(j, "min_blob_size", g.min_blob_size);
  get_if(j, "max_blob_size", g.max_blob_size);
  get_if(j, "contrast_a", g.contrast_a);
  get_if(j, "contrast_b", g.contrast_b);
  get_if(j, "noise_a", g.noise_a);
  get_if(j, "noise_b", g.noise_b);
  get_if(j, "blur_b", g.blur_b);
  get_if(j, "offset_b_y", g.offset_b_y);
  get_if(j, "offset_b_x", g.offset_b_x);
  get_if(j, "texture_a", g.texture_a);
  get_if(j, "distractors_a", g.distractors_a);
  get_if(j, "hidden_a", g.hidden_a);
  return g;
}

ordered_json to_json(const RunConfig& r) {
  return {{"strategy", std::string(to_string(r.strategy))},
          {"enable_mdi", r.enable_mdi},
          {"enable_hcg_low", r.enable_hcg_low},
          {"enable_hcg_high", r.enable_hcg_high},
          {"enable_miw", r.enable_miw},
          {"grad_boost_lambda", r.grad_boost_lambda},
          {"steps", r.steps},
          {"lr", r.lr},
          {"seed", r.seed},
          {"delta", r.delta},
          {"alpha", r.alpha},
          {"beta", r.beta},
          {"gamma", r.gamma},
          {"momentum", r.momentum},
          {"weight_decay", r.weight_decay},
          {"batch_size", r.batch_size},
          {"aux_weight", r.aux_weight},
          {"score_ema", r.score_ema},
          {"eval_samples", r.eval_samples},
          {"hidden_channels", r.model.hidden_channels},
          {"feature_channels", r.model.feature_channels},
          {"qk_dim", r.model.qk_dim}};
}

RunConfig run_from_json(const json& j) {
  RunConfig r;
  if (j.contains("strategy")) r.strategy = strategy_from(j.at("strategy"));
  get_if(j, "enable_mdi", r.enable_mdi);
  get_if(j, "enable_hcg_low", r.enable_hcg_low);
  get_if(j, "enable_hcg_high", r.enable_hcg_high);
  get_if(j, "enable_miw", r.enable_miw);
  get_if(j, "grad_boost_lambda", r.grad_boost_lambda);
  get_if(j, "steps", r.steps);
  get_if(j, "lr", r.lr);
  get_if(j, "seed", r.seed);
  get_if(j, "delta", r.delta);
  get_if(j, "alpha", r.alpha);
  get_if(j, "beta", r.beta);
  get_if(j, "gamma", r.gamma);
  get_if(j, "momentum", r.momentum);
  get_if(j, "weight_decay", r.weight_decay);
  get_if(j, "batch_size", r.batch_size);
  get_if(j, "aux_weight", r.aux_weight);
  get_if(j, "score_ema", r.score_ema);
  get_if(j, "eval_samples", r.eval_samples);
  get_if(j, "hidden_channels", r.model.hidden_channels);
  get_if(j, "feature_channels", r.model.feature_channels);
  get_if(j, "qk_dim", r.model.qk_dim);
  return r;
}

ordered_json to_json(const ExperimentManifest& m) {
  ordered_json j;
  j["run_id"] = m.run_id;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["generator"] = to_json(m.generator);
  j["run"] = to_json(m.run);
  j["seeds"] = m.seeds;
  j["grad_boost"] = m.grad_boost;
  ordered_json ws = ordered_json::array();
  for (auto w : m.weighting) ws.push_back(std::string(to_string(w)));
  j["weighting"] = ws;
  ordered_json ab = ordered_json::array();
  for (const auto& a : m.ablation) {
    ab.push_back({{"label", a.label},
                  {"mdi", a.mdi},
                  {"hcg_low", a.hcg_low},
                  {"hcg_high", a.hcg_high},
                  {"miw", a.miw}});
  }
  j["ablation"] = ab;
  j["outputs"] = m.outputs;
  return j;
}

ExperimentManifest manifest_from_json(const json& j) {
  ExperimentManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.command = j.at("command").get<std::string>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.generator = generator_from_json(j.at("generator"));
  m.run = run_from_json(j.at("run"));
  get_if(j, "seeds", m.seeds);
  get_if(j, "grad_boost", m.grad_boost);
  if (j.contains("weighting"))
    for (const auto& w : j.at("weighting")) m.weighting.push_back(strategy_from(w));
  if (j.contains("ablation")) {
    for (const auto& a : j.at("ablation")) {
      m.ablation.push_back({a.at("label").get<std::string>(), a.at("mdi").get<bool>(),
                            a.at("hcg_low").get<bool>(), a.at("hcg_high").get<bool>(),
                            a.at("miw").get<bool>()});
    }
  }
  get_if(j, "outputs", m.outputs);
  return m;
}

ordered_json to_json(const StepRecord& r) {
  return {{"step", r.step},         {"task_loss", r.task_loss}, {"distill_loss", r.distill_loss},
          {"grad_a", r.grad_a},     {"grad_b", r.grad_b},       {"s_a", r.s_a},
          {"s_b", r.s_b},           {"entropy_a", r.entropy_a}, {"entropy_b", r.entropy_b}};
}

StepRecord record_from_json(const json& j) {
  StepRecord r;
  j.at("step").get_to(r.step);
  j.at("task_loss").get_to(r.task_loss);
  j.at("distill_loss").get_to(r.distill_loss);
  j.at("grad_a").get_to(r.grad_a);
  j.at("grad_b").get_to(r.grad_b);
  j.at("s_a").get_to(r.s_a);
  j.at("s_b").get_to(r.s_b);
  j.at("entropy_a").get_to(r.entropy_a);
  j.at("entropy_b").get_to(r.entropy_b);
  return r;
}

std::string derive_run_id(const ExperimentManifest& m) {
  ExperimentManifest key = m;
  key.run_id.clear();
  key.outputs.clear();
  const std::string text = to_json(key).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%012" PRIx64, h >> 16);
  return m.command + "-" + buf;
}

void write_manifest(const ExperimentManifest& m, const fs::path& path) {
  auto out = open_output(path);
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ExperimentManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

MetricsWriter::MetricsWriter(const fs::path& path) : path_(path), out_(open_output(path)) {}

void MetricsWriter::append(const StepRecord& r) {
  out_ << to_json(r).dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing '" + path_.string() + "'");
}

void write_metrics(const std::vector<StepRecord>& records, const fs::path& path) {
  MetricsWriter w(path);
  for (const auto& r : records) w.append(r);
}

std::vector<StepRecord> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics '" + path.string() + "'");
  std::vector<StepRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

SummaryRow summary_row(const std::string& run_id, const CellResult& c) {
  return {run_id,          c.group,         c.label,
          c.seed,          c.run.steps,     c.ok ? "ok" : "failed",
          c.final_loss,    c.gradient_bias, c.feature_gradient_bias,
          c.iou_both,      c.iou_a,         c.iou_b,
          c.error};
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const fs::path& path) {
  auto out = open_output(path);
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.run_id) << ',' << csv_field(r.group) << ',' << csv_field(r.label) << ','
        << r.seed << ',' << r.steps << ',' << r.status << ',' << num(r.final_loss) << ','
        << num(r.gradient_bias) << ',' << num(r.feature_gradient_bias) << ',' << num(r.iou_both)
        << ',' << num(r.iou_a) << ',' << num(r.iou_b) << ',' << csv_field(r.error) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<SummaryRow> read_summary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open summary '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw IoError("'" + path.string() + "' does not start with the summary header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 13) throw IoError("'" + path.string() + "': expected 13 fields, got " + std::to_string(f.size()));
    rows.push_back({f[0], f[1], f[2], std::stoull(f[3]), std::stoi(f[4]), f[5], std::stod(f[6]),
                    std::stod(f[7]), std::stod(f[8]), std::stod(f[9]), std::stod(f[10]),
                    std::stod(f[11]), f[12]});
  }
  return rows;
}

ordered_json to_json(const std::string& run_id, const std::vector<CellAggregate>& aggs) {
  auto stat = [](const Stat& s) {
    return ordered_json{{"n", s.n}, {"mean", s.mean}, {"std", s.std}, {"se", s.se}};
  };
  ordered_json arr = ordered_json::array();
  for (const auto& a : aggs) {
    arr.push_back({{"group", a.group},
                   {"label", a.label},
                   {"failed", a.failed},
                   {"final_loss", stat(a.final_loss)},
                   {"gradient_bias", stat(a.gradient_bias)},
                   {"feature_gradient_bias", stat(a.feature_gradient_bias)},
                   {"iou_both", stat(a.iou_both)},
                   {"iou_a_only", stat(a.iou_a)},
                   {"iou_b_only", stat(a.iou_b)}});
  }
  return {{"run_id", run_id}, {"aggregates", arr}};
}

}  // namespace modbal
