#include "raml/cli.hpp"

#include "raml/data.hpp"
#include "raml/eval.hpp"
#include "raml/theorem.hpp"
#include "raml/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace raml::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { Int, UInt, Real, Bool, Text };

struct OptionSpec {
  std::string key;  // JSON key; the flag is the key with '_' replaced by '-'
  Kind kind;
  json fallback;    // null means "unset" (only meaningful for optional values)
  std::string help;
  bool required = false;
};

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

json parse_text(const OptionSpec& spec, const std::string& text) {
  auto fail = [&]() -> json {
    throw UsageError(flag_name(spec.key) + ": cannot parse '" + text + "'");
  };
  const char* first = text.data();
  const char* last = text.data() + text.size();
  switch (spec.kind) {
    case Kind::Int: {
      long long v = 0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) return fail();
      return v;
    }
    case Kind::UInt: {
      unsigned long long v = 0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) return fail();
      return v;
    }
    case Kind::Real: {
      double v = 0;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) return fail();
      return v;
    }
    case Kind::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      return fail();
    case Kind::Text:
      return text;
  }
  return fail();
}

void check_file_value(const OptionSpec& spec, const json& v) {
  bool ok = false;
  switch (spec.kind) {
    case Kind::Int: ok = v.is_number_integer(); break;
    case Kind::UInt: ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); break;
    case Kind::Real: ok = v.is_number(); break;
    case Kind::Bool: ok = v.is_boolean(); break;
    case Kind::Text: ok = v.is_string(); break;
  }
  if (!v.is_null() && !ok) throw UsageError("config key '" + spec.key + "' has the wrong type");
}

/// Resolved settings: defaults, then --config file, then explicit flags.
class Settings {
 public:
  explicit Settings(json values) : values_(std::move(values)) {}

  const json& raw() const { return values_; }
  bool has(const std::string& key) const { return !values_.at(key).is_null(); }
  long long integer(const std::string& key) const { return values_.at(key).get<long long>(); }
  std::uint64_t unsigned_integer(const std::string& key) const {
    return values_.at(key).get<std::uint64_t>();
  }
  double real(const std::string& key) const { return values_.at(key).get<double>(); }
  bool flag(const std::string& key) const { return values_.at(key).get<bool>(); }
  std::string text(const std::string& key) const { return values_.at(key).get<std::string>(); }

  void set(const std::string& key, json v) { values_[key] = std::move(v); }

 private:
  json values_;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<OptionSpec> options;
  std::function<void(Settings&)> action;
};

// ---------------------------------------------------------------------------
// Shared helpers

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

fs::path prepare_out(const Settings& s) {
  fs::path out = s.text("out");
  fs::create_directories(out);
  return out;
}

void write_run_json(const fs::path& out, const std::string& command, const Settings& s) {
  json j = s.raw();
  j["command"] = command;
  write_json(out / "run.json", j);
}

void require_dir(const std::string& key, const fs::path& p) {
  if (!fs::is_directory(p)) throw UsageError("--" + key + ": not a directory: " + p.string());
}

void require_file(const std::string& key, const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("--" + key + ": no such file: " + p.string());
}

/// A data root holding train/ and test/, or a single dataset directory.
fs::path split_dir(const fs::path& root, const std::string& split) {
  if (fs::is_regular_file(root / split / "meta.json")) return root / split;
  if (fs::is_regular_file(root / "meta.json")) return root;
  throw UsageError("--data: no dataset found under " + root.string());
}

std::optional<fs::path> optional_split(const fs::path& root, const std::string& split) {
  if (fs::is_regular_file(root / split / "meta.json")) return root / split;
  return std::nullopt;
}

Metric metric_of(const Settings& s) {
  try {
    return parse_metric(s.text("metric"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::vector<OptionSpec> train_options() {
  const TrainConfig d;
  return {
      {"epochs", Kind::Int, d.epochs, "training epochs"},
      {"batch_size", Kind::Int, d.batch_size, "minibatch size"},
      {"learning_rate", Kind::Real, d.learning_rate, "Adam step size"},
      {"weight_decay", Kind::Real, d.weight_decay, "L2 weight decay"},
      {"decoupled_weight_decay", Kind::Bool, d.decoupled_weight_decay, "AdamW-style decay"},
      {"lambda1", Kind::Real, d.lambda1, "unimodal loss weight"},
      {"lambda2", Kind::Real, d.lambda2, "sparsity loss weight"},
      {"embed_dim", Kind::Int, d.embed_dim, "embedding size D"},
      {"hidden", Kind::Int, d.hidden, "encoder hidden width"},
      {"sigma_floor", Kind::Real, d.sigma_floor, "lower bound added to sigma"},
      {"seed", Kind::UInt, d.seed, "master seed"},
      {"literal_losses", Kind::Bool, d.literal_losses, "unmasked unimodal/sparsity losses"},
      {"materialize_patterns", Kind::Bool, d.materialize_patterns,
       "train on every pattern of every sample"},
      {"augment", Kind::Bool, d.augment, "missing-pattern augmentation"},
      {"strategy", Kind::Text, std::string(to_string(d.strategy)), "adaptive | identical | fixed"},
  };
}

TrainConfig train_config_of(const Settings& s) {
  TrainConfig c;
  c.epochs = static_cast<int>(s.integer("epochs"));
  c.batch_size = static_cast<int>(s.integer("batch_size"));
  c.learning_rate = s.real("learning_rate");
  c.weight_decay = s.real("weight_decay");
  c.decoupled_weight_decay = s.flag("decoupled_weight_decay");
  c.lambda1 = s.real("lambda1");
  c.lambda2 = s.real("lambda2");
  c.embed_dim = static_cast<int>(s.integer("embed_dim"));
  c.hidden = static_cast<int>(s.integer("hidden"));
  c.sigma_floor = s.real("sigma_floor");
  c.seed = s.unsigned_integer("seed");
  c.literal_losses = s.flag("literal_losses");
  c.materialize_patterns = s.flag("materialize_patterns");
  c.augment = s.flag("augment");
  try {
    c.strategy = parse_strategy(s.text("strategy"));
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

std::vector<OptionSpec> concat(std::vector<OptionSpec> a, const std::vector<OptionSpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

OptionSpec out_option() { return {"out", Kind::Text, nullptr, "output directory", true}; }
OptionSpec data_option() { return {"data", Kind::Text, nullptr, "dataset directory", true}; }
OptionSpec checkpoint_option() {
  return {"checkpoint", Kind::Text, nullptr, "checkpoint.json", true};
}
OptionSpec metric_option() { return {"metric", Kind::Text, "wa", "wa | ua"}; }

void write_report(const fs::path& out, const EvalReport& report) {
  write_json(out / "report.json", report.to_json());
  write_file(out / "report.csv", report.to_csv());
}

struct LoadedEval {
  Checkpoint checkpoint;
  Dataset test;  // standardized with the checkpoint's statistics
};

LoadedEval load_for_eval(const Settings& s) {
  const fs::path cp_path = s.text("checkpoint");
  require_file("checkpoint", cp_path);
  require_dir("data", s.text("data"));
  const fs::path dir = split_dir(s.text("data"), "test");
  LoadedEval loaded{load_checkpoint(cp_path), {}};
  Dataset raw = load_dataset(dir);
  check_compatible(loaded.checkpoint, raw);
  loaded.test = loaded.checkpoint.standardizer.empty() ? raw
                                                       : loaded.checkpoint.standardizer.apply(raw);
  return loaded;
}

Classifier classifier_of(const Checkpoint& cp, const std::string& strategy) {
  if (const auto* raml = std::get_if<RamlModel>(&cp.model)) {
    if (strategy.empty()) return make_classifier(*raml);
    try {
      return make_classifier(*raml, parse_strategy(strategy));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (!strategy.empty()) throw UsageError("--strategy applies to RAML checkpoints only");
  return make_classifier(std::get<ConcatModel>(cp.model));
}

// ---------------------------------------------------------------------------
// Subcommands

SyntheticSpec spec_from_json(const json& j) {
  SyntheticSpec spec;
  static const std::vector<std::string> known{
      "num_modalities", "num_classes", "input_dims",   "shared_dim",
      "private_dim",    "center_scale", "noise",       "train_per_class",
      "test_per_class", "seed",         "identical_projections", "noise_spread"};
  if (!j.is_object()) throw UsageError("--spec: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw UsageError("--spec: unknown key '" + key + "'");
  }
  try {
    spec.num_modalities = j.value("num_modalities", spec.num_modalities);
    spec.num_classes = j.value("num_classes", spec.num_classes);
    if (j.contains("input_dims")) {
      spec.input_dims = j.at("input_dims").get<std::vector<int>>();
    } else {
      spec.input_dims.assign(static_cast<std::size_t>(std::max(spec.num_modalities, 0)),
                             spec.input_dims.front());
    }
    spec.shared_dim = j.value("shared_dim", spec.shared_dim);
    spec.private_dim = j.value("private_dim", spec.private_dim);
    spec.center_scale = j.value("center_scale", spec.center_scale);
    spec.noise = j.value("noise", spec.noise);
    spec.noise_spread = j.value("noise_spread", spec.noise_spread);
    spec.train_per_class = j.value("train_per_class", spec.train_per_class);
    spec.test_per_class = j.value("test_per_class", spec.test_per_class);
    spec.seed = j.value("seed", spec.seed);
    spec.identical_projections = j.value("identical_projections", spec.identical_projections);
  } catch (const json::exception& e) {
    throw UsageError(std::string("--spec: ") + e.what());
  }
  return spec;
}

json spec_to_json(const SyntheticSpec& spec) {
  return {{"num_modalities", spec.num_modalities},
          {"num_classes", spec.num_classes},
          {"input_dims", spec.input_dims},
          {"shared_dim", spec.shared_dim},
          {"private_dim", spec.private_dim},
          {"center_scale", spec.center_scale},
          {"noise", spec.noise},
          {"noise_spread", spec.noise_spread},
          {"train_per_class", spec.train_per_class},
          {"test_per_class", spec.test_per_class},
          {"seed", spec.seed},
          {"identical_projections", spec.identical_projections}};
}

void cmd_gen_data(Settings& s) {
  SyntheticSpec spec = SyntheticSpec::reference();
  if (s.has("spec")) {
    const fs::path path = s.text("spec");
    require_file("spec", path);
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw UsageError("--spec: " + std::string(e.what()));
    }
    spec = spec_from_json(j);
  }
  if (s.has("seed")) spec.seed = s.unsigned_integer("seed");
  s.set("seed", spec.seed);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const fs::path out = prepare_out(s);
  const SyntheticData data = generate_synthetic(spec, spec.seed);
  save_dataset(data.train.data, out / "train");
  save_dataset(data.test.data, out / "test");
  write_json(out / "spec.json", spec_to_json(spec));
  s.set("resolved_spec", spec_to_json(spec));
  write_run_json(out, "gen-data", s);
  std::printf("wrote %ld train / %ld test samples to %s\n",
              static_cast<long>(data.train.data.num_samples()),
              static_cast<long>(data.test.data.num_samples()), out.string().c_str());
}

void cmd_train(Settings& s) {
  require_dir("data", s.text("data"));
  const std::string model_kind = s.text("model");
  if (model_kind != "raml" && model_kind != "concat")
    throw UsageError("--model must be raml or concat");
  const TrainConfig config = train_config_of(s);
  const fs::path root = s.text("data");
  const fs::path train_path = split_dir(root, "train");
  const auto val_path = optional_split(root, "test");

  const fs::path out = prepare_out(s);
  write_run_json(out, "train", s);

  const Dataset train = load_dataset(train_path);
  std::optional<Dataset> validation;
  if (val_path && s.flag("validate")) validation = load_dataset(*val_path);
  const Dataset* val = validation ? &*validation : nullptr;

  Checkpoint cp{config, RamlModel{}, {}, {}};
  for (const auto& m : train.modalities) cp.modality_names.push_back(m.name);
  std::vector<EpochLog> history;
  if (model_kind == "raml") {
    FitResult r = fit(config, train, val);
    cp.model = std::move(r.model);
    cp.standardizer = std::move(r.standardizer);
    history = std::move(r.history);
  } else {
    ConcatFitResult r = build_concat_baseline(config, train, val);
    cp.config.augment = false;
    cp.config.lambda1 = 0;
    cp.config.lambda2 = 0;
    cp.model = std::move(r.model);
    cp.standardizer = std::move(r.standardizer);
    history = std::move(r.history);
  }
  save_checkpoint(cp, out / "checkpoint.json");
  write_file(out / "train_log.csv", train_log_csv(history));
  if (!history.empty()) {
    const EpochLog& last = history.back();
    std::printf("epoch %d loss %.6f val %.4f\n", last.epoch, last.loss.total, last.val_metric);
  }
}

void cmd_eval(Settings& s) {
  const Metric metric = metric_of(s);
  LoadedEval loaded = load_for_eval(s);
  const fs::path out = prepare_out(s);
  write_run_json(out, "eval", s);
  const Classifier classify = classifier_of(loaded.checkpoint, s.text("strategy"));
  const EvalReport report = evaluate_grid(classify, loaded.test, metric);
  write_report(out, report);
  std::printf("average %s %.6f\n", to_string(metric).c_str(), report.average());
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> levels;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size())
      throw UsageError("--levels: cannot parse '" + item + "'");
    levels.push_back(v);
  }
  if (levels.empty()) throw UsageError("--levels: empty list");
  return levels;
}

CorruptionKind kind_of(const Settings& s, const std::string& key) {
  try {
    return parse_corruption_kind(s.text(key));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void check_modality(long long m, int count, const std::string& key) {
  if (m < 0 || m >= count)
    throw UsageError("--" + key + " " + std::to_string(m) + " out of range for " +
                     std::to_string(count) + " modalities");
}

void cmd_sweep(Settings& s) {
  const Metric metric = metric_of(s);
  const CorruptionKind kind = kind_of(s, "kind");
  const std::vector<double> levels =
      s.text("levels").empty() ? default_levels(kind) : parse_levels(s.text("levels"));
  LoadedEval loaded = load_for_eval(s);
  const int M = loaded.test.num_modalities();
  check_modality(s.integer("modality"), M, "modality");

  std::optional<CorruptionSetting> fixed;
  if (s.integer("fixed_modality") >= 0) {
    check_modality(s.integer("fixed_modality"), M, "fixed-modality");
    fixed = CorruptionSetting{static_cast<int>(s.integer("fixed_modality")),
                              kind_of(s, "fixed_kind"), s.real("fixed_level")};
  }
  const fs::path out = prepare_out(s);
  write_run_json(out, "sweep", s);
  const Classifier classify = classifier_of(loaded.checkpoint, s.text("strategy"));
  const EvalReport report =
      evaluate_corruption_sweep(classify, loaded.test, static_cast<int>(s.integer("modality")),
                                kind, levels, metric, fixed, s.unsigned_integer("eval_seed"));
  write_report(out, report);
  for (const auto& row : report.rows) std::printf("%s %.6f\n", row.condition.c_str(), row.value);
}

void cmd_ablate(Settings& s) {
  const Metric metric = metric_of(s);
  require_dir("data", s.text("data"));
  TrainConfig base = train_config_of(s);
  base.strategy = WeightingStrategy::Adaptive;
  const fs::path root = s.text("data");
  const fs::path train_path = split_dir(root, "train");
  const fs::path test_path = optional_split(root, "test").value_or(train_path);
  const fs::path out = prepare_out(s);
  write_run_json(out, "ablate", s);

  const Dataset train = load_dataset(train_path);
  const Dataset test_raw = load_dataset(test_path);

  struct Variant {
    std::string group;
    std::string name;
    TrainConfig config;
  };
  std::vector<Variant> variants;
  auto loss_variant = [&](const std::string& name, bool unimodal, bool sparsity) {
    TrainConfig c = base;
    c.lambda1 = unimodal ? base.lambda1 : 0.0;
    c.lambda2 = sparsity ? base.lambda2 : 0.0;
    variants.push_back(Variant{"loss", name, c});
  };
  loss_variant("LM", false, false);
  loss_variant("LM+LD", false, true);
  loss_variant("LM+LU", true, false);
  loss_variant("LM+LU+LD", true, true);
  for (WeightingStrategy w : {WeightingStrategy::Identical, WeightingStrategy::Fixed,
                              WeightingStrategy::Adaptive}) {
    TrainConfig c = base;
    c.strategy = w;
    variants.push_back(Variant{"weighting", std::string(raml::to_string(w)), c});
  }

  json report_json = {{"loss", json::array()}, {"weighting", json::array()}};
  std::string csv = "group,variant,condition,metric,value,n\n";
  std::map<std::string, EvalReport> trained;  // reuse identical configurations
  for (const Variant& v : variants) {
    const std::string key = to_json(v.config).dump();
    auto it = trained.find(key);
    if (it == trained.end()) {
      FitResult r = fit(v.config, train);
      const Dataset test = r.standardizer.apply(test_raw);
      it = trained.emplace(key, evaluate_grid(make_classifier(r.model), test, metric)).first;
    }
    const EvalReport& report = it->second;
    report_json[v.group].push_back({{"variant", v.name}, {"rows", report.to_json()["rows"]}});
    for (const auto& row : report.rows) {
      csv += v.group + "," + v.name + "," + row.condition + "," + row.metric + "," +
             format_double(row.value) + "," + std::to_string(row.n) + "\n";
    }
    std::printf("%s %s average %.6f\n", v.group.c_str(), v.name.c_str(), report.average());
  }
  write_json(out / "report.json", report_json);
  write_file(out / "report.csv", csv);
}

void cmd_verify_theorem(Settings& s) {
  const long long trials = s.integer("trials");
  const long long dmin = s.integer("dmin");
  const long long dmax = s.integer("dmax");
  if (trials < 1) throw UsageError("--trials must be positive");
  if (dmin < 1 || dmax < dmin) throw UsageError("need 1 <= --dmin <= --dmax");
  const fs::path out = prepare_out(s);
  write_run_json(out, "verify-theorem", s);
  const theorem::OrderingReport r = theorem::verify_ordering(
      trials, static_cast<int>(dmin), static_cast<int>(dmax), s.unsigned_integer("seed"));
  json j = {{"trials", r.trials},
            {"violations", r.violations},
            {"worst_fine_coarse", r.worst_fine_coarse},
            {"worst_coarse_uniform", r.worst_coarse_uniform},
            {"tolerance", theorem::kOrderingTolerance}};
  write_json(out / "report.json", j);
  std::printf("violations=%ld worst_fine_coarse=%.17g worst_coarse_uniform=%.17g\n", r.violations,
              r.worst_fine_coarse, r.worst_coarse_uniform);
  if (r.violations > 0) throw std::runtime_error("ordering violated");
}

void cmd_inspect_weights(Settings& s) {
  LoadedEval loaded = load_for_eval(s);
  const auto* model = std::get_if<RamlModel>(&loaded.checkpoint.model);
  if (!model) throw UsageError("inspect-weights needs a RAML checkpoint");
  const int M = loaded.test.num_modalities();
  check_modality(s.integer("modality"), M, "modality");
  const long long count = s.integer("samples");
  if (count < 0) throw UsageError("--samples must be non-negative");
  std::vector<Eigen::Index> samples;
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(count, loaded.test.num_samples()); ++i)
    samples.push_back(i);

  const fs::path out = prepare_out(s);
  write_run_json(out, "inspect-weights", s);
  const auto conditions = heatmap_conditions();
  const auto maps = export_weight_heatmap(*model, loaded.test, samples,
                                          static_cast<int>(s.integer("modality")), conditions,
                                          s.unsigned_integer("eval_seed"));
  json summary = json::array();
  for (const auto& h : maps) {
    write_file(out / ("weights_" + h.condition + ".csv"), heatmap_csv(h));
    std::vector<double> mean(h.mean_weight.data(), h.mean_weight.data() + h.mean_weight.size());
    summary.push_back({{"condition", h.condition}, {"mean_weight", mean}});
    std::printf("%s corrupted-modality mean weight %.6f\n", h.condition.c_str(),
                h.mean_weight(h.corrupted_modality));
  }
  write_json(out / "report.json", {{"modality", s.integer("modality")}, {"conditions", summary}});
}

std::vector<Command> commands() {
  std::vector<Command> cmds;
  cmds.push_back({"gen-data",
                  "generate the synthetic multimodal dataset",
                  {out_option(),
                   {"spec", Kind::Text, nullptr, "generator spec JSON"},
                   {"seed", Kind::UInt, nullptr, "generator seed (overrides the spec)"}},
                  cmd_gen_data});
  cmds.push_back({"train", "train a RAML or Concat model",
                  concat({data_option(), out_option(),
                          {"model", Kind::Text, "raml", "raml | concat"},
                          {"validate", Kind::Bool, true,
                           "score test/ after each epoch when present"}},
                         train_options()),
                  cmd_train});
  cmds.push_back({"eval",
                  "accuracy under every missing pattern",
                  {checkpoint_option(), data_option(), out_option(), metric_option(),
                   {"strategy", Kind::Text, "", "override the fusion strategy"}},
                  cmd_eval});
  cmds.push_back({"sweep",
                  "accuracy across corruption levels on one modality",
                  {checkpoint_option(), data_option(), out_option(), metric_option(),
                   {"strategy", Kind::Text, "", "override the fusion strategy"},
                   {"modality", Kind::Int, 0, "corrupted modality index"},
                   {"kind", Kind::Text, "gaussian", "gaussian | mask"},
                   {"levels", Kind::Text, "", "comma-separated levels"},
                   {"fixed_modality", Kind::Int, -1, "second corrupted modality (-1: none)"},
                   {"fixed_kind", Kind::Text, "gaussian", "gaussian | mask"},
                   {"fixed_level", Kind::Real, 0.0, "level of the second corruption"},
                   {"eval_seed", Kind::UInt, kEvalSeed, "corruption seed"}},
                  cmd_sweep});
  cmds.push_back({"ablate", "loss-component and weighting-strategy ablations",
                  concat({data_option(), out_option(), metric_option()}, train_options()),
                  cmd_ablate});
  cmds.push_back({"verify-theorem",
                  "check the uniform <= coarse <= fine ordering",
                  {{"out", Kind::Text, ".", "output directory"},
                   {"trials", Kind::Int, 100000, "random instances"},
                   {"dmin", Kind::Int, 1, "smallest dimension"},
                   {"dmax", Kind::Int, 8, "largest dimension"},
                   {"seed", Kind::UInt, 0, "seed"}},
                  cmd_verify_theorem});
  cmds.push_back({"inspect-weights",
                  "per-element fusion weights under corruption",
                  {checkpoint_option(), data_option(), out_option(),
                   {"modality", Kind::Int, 0, "corrupted modality index"},
                   {"samples", Kind::Int, 8, "number of test samples to export"},
                   {"eval_seed", Kind::UInt, kEvalSeed, "corruption seed"}},
                  cmd_inspect_weights});
  return cmds;
}

const char* type_name(Kind kind) {
  switch (kind) {
    case Kind::Int: return "INT";
    case Kind::UInt: return "UINT";
    case Kind::Real: return "FLOAT";
    case Kind::Bool: return "BOOL";
    case Kind::Text: return "TEXT";
  }
  return "";
}

Settings resolve(const Command& cmd, const std::map<std::string, json>& explicit_values,
                 const std::string& config_path) {
  json values = json::object();
  for (const auto& o : cmd.options) values[o.key] = o.fallback;

  if (!config_path.empty()) {
    if (!fs::is_regular_file(config_path)) throw UsageError("--config: no such file: " + config_path);
    json file;
    try {
      file = json::parse(read_file(config_path));
    } catch (const json::parse_error& e) {
      throw UsageError("--config: " + std::string(e.what()));
    }
    if (!file.is_object()) throw UsageError("--config: expected a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (key == "command") {
        if (value != cmd.name)
          throw UsageError("--config was written by '" + value.dump() + "', not " + cmd.name);
        continue;
      }
      if (key == "resolved_spec" && cmd.name == "gen-data") continue;
      auto it = std::find_if(cmd.options.begin(), cmd.options.end(),
                             [&](const OptionSpec& o) { return o.key == key; });
      if (it == cmd.options.end()) throw UsageError("--config: unknown key '" + key + "'");
      check_file_value(*it, value);
      values[key] = value;
    }
  }
  for (const auto& [key, value] : explicit_values) values[key] = value;
  for (const auto& o : cmd.options) {
    if (o.required && values[o.key].is_null())
      throw UsageError(flag_name(o.key) + " is required");
  }
  return Settings(std::move(values));
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Redundancy-adaptive multimodal fusion toolkit", "raml"};
  app.require_subcommand(1, 1);

  const std::vector<Command> cmds = commands();
  std::deque<std::string> storage;
  struct Bound {
    CLI::App* sub;
    CLI::Option* opt;
    const OptionSpec* spec;
  };
  std::vector<Bound> bound;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  std::map<const CLI::App*, std::string> config_paths;
  std::deque<std::string> config_storage;

  for (const Command& cmd : cmds) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    subs.emplace_back(sub, &cmd);
    config_storage.emplace_back();
    sub->add_option("--config", config_storage.back(), "flat-key JSON config (e.g. a run.json)");
    for (const OptionSpec& o : cmd.options) {
      storage.emplace_back();
      std::string help = o.help;
      if (!o.fallback.is_null()) help += " [" + o.fallback.dump() + "]";
      CLI::Option* opt = nullptr;
      if (o.kind == Kind::Bool) {
        opt = sub->add_option(flag_name(o.key), storage.back(), help)
                  ->expected(0, 1)
                  ->type_name("[BOOL]");
      } else {
        opt = sub->add_option(flag_name(o.key), storage.back(), help)->type_name(type_name(o.kind));
      }
      bound.push_back({sub, opt, &o});
    }
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  std::size_t config_index = 0;
  for (auto [sub, cmd] : subs) {
    const std::string& config_path = config_storage[config_index++];
    if (!sub->parsed()) continue;
    try {
      std::map<std::string, json> explicit_values;
      for (const Bound& b : bound) {
        if (b.sub != sub || b.opt->count() == 0) continue;
        const CLI::Option* opt = b.opt;
        const OptionSpec* spec = b.spec;
        const std::string text = opt->results().empty() ? std::string() : opt->results().back();
        explicit_values[spec->key] =
            (spec->kind == Kind::Bool && text.empty()) ? json(true) : parse_text(*spec, text);
      }
      Settings settings = resolve(*cmd, explicit_values, config_path);
      cmd->action(settings);
      return kExitOk;
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n\n" << sub->help();
      return kExitUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  std::cerr << app.help();
  return kExitUsage;
}

}  // namespace

int run(std::span<const std::string> args) {
  return dispatch(std::vector<std::string>(args.begin(), args.end()));
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(std::move(args));
}

}  // namespace raml::cli
