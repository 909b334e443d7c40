#include "xsell/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <set>

#include "xsell/analysis.hpp"
#include "xsell/csv.hpp"
#include "xsell/cv.hpp"
#include "xsell/error.hpp"
#include "xsell/hash.hpp"
#include "xsell/prep.hpp"
#include "xsell/rng.hpp"
#include "xsell/table_io.hpp"
#include "xsell/treeshap.hpp"

namespace xsell {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Artifact paths.

namespace artifact {
namespace {
fs::path case_kind(const char* root, const CrossSellCase& c, ModelKind kind) {
  return fs::path(root) / c.id() / std::string(model_kind_name(kind));
}
}  // namespace

fs::path customers_csv() { return "data/customers.csv"; }
fs::path case_dir(const CrossSellCase& c) { return fs::path("cases") / c.id(); }
fs::path cases_index() { return "cases/index.json"; }
fs::path tune_result(ModelKind kind) {
  return fs::path("tune") / (std::string(model_kind_name(kind)) + ".json");
}
fs::path model_dir(const CrossSellCase& c, ModelKind kind) { return case_kind("models", c, kind); }
fs::path eval_dir(const CrossSellCase& c, ModelKind kind) { return case_kind("eval", c, kind); }
fs::path shap_dir(const CrossSellCase& c, ModelKind kind) { return case_kind("shap", c, kind); }
fs::path robustness_dir(const CrossSellCase& c, ModelKind kind) {
  return case_kind("robustness", c, kind);
}
fs::path validation_dir(const CrossSellCase& c, ModelKind kind) {
  return case_kind("validation", c, kind);
}
fs::path report_dir() { return "report"; }
fs::path failures() { return "failures"; }
fs::path manifest() { return "manifest.json"; }
fs::path run_log() { return "run_log.json"; }
}  // namespace artifact

// ---------------------------------------------------------------------------
// Config.

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", where));
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
    }
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("{}: '{}' has the wrong type", where, key));
  }
}

}  // namespace

CrossSellCase parse_case_spec(const json& j) {
  CrossSellCase c;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) {
      throw ConfigError(fmt::format("case '{}' must look like \"Power->TV:2016\"", s));
    }
    const auto [owner, target] = parse_case_pair(s.substr(0, colon));
    int year = 0;
    try {
      year = std::stoi(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("case '{}': bad train year", s));
    }
    c = CrossSellCase::make(owner, target, year);
  } else if (j.is_object()) {
    check_keys(j, {"owner", "target", "train_year", "test_year"}, "case");
    try {
      c = CrossSellCase::make(parse_contract_type(j.at("owner").get<std::string>()),
                              parse_contract_type(j.at("target").get<std::string>()),
                              j.at("train_year").get<int>());
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("case: {}", e.what()));
    }
    if (j.contains("test_year") && j.at("test_year") != c.test_year) {
      throw ConfigError("case: test_year must be train_year + 1");
    }
  } else {
    throw ConfigError("case must be a string or an object");
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"data", "cases", "models", "tune", "k_folds", "seed", "seeds", "threshold", "alpha",
              "small_effect_cutoff", "cardinality_cap", "exclude_target_holders", "explain",
              "validation", "emit", "output_dir", "threads"},
             "config");
  PipelineConfig c;
  std::uint64_t seed = 1;
  read_opt(j, "seed", seed, "config");
  c.seeds = {seed, seed, seed, seed};

  if (!j.contains("data")) throw ConfigError("config: 'data' section is required");
  const json& data = j.at("data");
  check_keys(data, {"synthetic", "customers_csv"}, "data");
  if (data.contains("synthetic") == data.contains("customers_csv")) {
    throw ConfigError("data: give exactly one of 'synthetic' and 'customers_csv'");
  }
  if (data.contains("synthetic")) {
    const json& s = data.at("synthetic");
    check_keys(s,
               {"n_customers", "business_fraction", "first_year", "last_year",
                "target_positive_ratio", "signal_spec", "noise_scale", "seed"},
               "data.synthetic");
    c.synthetic = GeneratorConfig::from_json(s);
    if (s.contains("seed")) c.seeds.data = c.synthetic->seed;
  } else {
    std::string p;
    read_opt(data, "customers_csv", p, "data");
    c.customers_csv = fs::path(p).is_absolute() ? fs::path(p) : base_dir / p;
  }

  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    check_keys(s, {"data", "cv", "tune", "explain"}, "seeds");
    read_opt(s, "data", c.seeds.data, "seeds");
    read_opt(s, "cv", c.seeds.cv, "seeds");
    read_opt(s, "tune", c.seeds.tune, "seeds");
    read_opt(s, "explain", c.seeds.explain, "seeds");
  }
  if (c.synthetic) c.synthetic->seed = c.seeds.data;

  if (j.contains("cases")) {
    if (!j.at("cases").is_array()) throw ConfigError("config: 'cases' must be a list");
    for (const auto& e : j.at("cases")) c.cases.push_back(parse_case_spec(e));
  } else {
    c.cases.push_back(CrossSellCase::make(ContractType::Power, ContractType::TV, 2016));
  }

  if (j.contains("models")) {
    if (!j.at("models").is_array()) throw ConfigError("config: 'models' must be a list");
    for (const auto& m : j.at("models")) {
      if (m.is_string()) {
        const ModelKind k = parse_model_kind(m.get<std::string>());
        c.models.push_back({k, EnsembleParams::defaults(k)});
        continue;
      }
      check_keys(m, {"kind", "params"}, "models[]");
      if (!m.contains("kind")) throw ConfigError("models[]: 'kind' is required");
      const ModelKind k = parse_model_kind(m.at("kind").get<std::string>());
      c.models.push_back(
          {k, EnsembleParams::from_json(k, m.contains("params") ? m.at("params") : json::object())});
    }
  } else {
    for (ModelKind k : {ModelKind::BalancedRF, ModelKind::RUSBoost}) {
      c.models.push_back({k, EnsembleParams::defaults(k)});
    }
  }

  if (j.contains("tune")) {
    const json& t = j.at("tune");
    check_keys(t, {"enabled", "n_iter", "k_folds", "case"}, "tune");
    read_opt(t, "enabled", c.tune.enabled, "tune");
    read_opt(t, "n_iter", c.tune.n_iter, "tune");
    read_opt(t, "k_folds", c.tune.k_folds, "tune");
    if (t.contains("case")) c.tune.case_id = parse_case_spec(t.at("case")).id();
  }
  read_opt(j, "k_folds", c.k_folds, "config");
  read_opt(j, "threshold", c.threshold, "config");
  read_opt(j, "alpha", c.alpha, "config");
  read_opt(j, "small_effect_cutoff", c.small_effect_cutoff, "config");
  read_opt(j, "cardinality_cap", c.cardinality_cap, "config");
  read_opt(j, "exclude_target_holders", c.exclude_target_holders, "config");
  if (j.contains("explain")) {
    const json& e = j.at("explain");
    check_keys(e, {"max_nonbuyers_per_fold", "beeswarm_top_k"}, "explain");
    read_opt(e, "max_nonbuyers_per_fold", c.explain.max_nonbuyers_per_fold, "explain");
    read_opt(e, "beeswarm_top_k", c.explain.beeswarm_top_k, "explain");
  }
  if (j.contains("validation")) {
    const json& v = j.at("validation");
    check_keys(v, {"top_k", "bonferroni", "variance_ratio_low", "variance_ratio_high"},
               "validation");
    read_opt(v, "top_k", c.validation.top_k, "validation");
    read_opt(v, "bonferroni", c.validation.bonferroni, "validation");
    read_opt(v, "variance_ratio_low", c.validation.variance_ratio_low, "validation");
    read_opt(v, "variance_ratio_high", c.validation.variance_ratio_high, "validation");
  }
  if (j.contains("emit")) {
    const json& e = j.at("emit");
    check_keys(e, {"metrics", "shap", "robustness", "validation", "plots"}, "emit");
    read_opt(e, "metrics", c.emit.metrics, "emit");
    read_opt(e, "shap", c.emit.shap, "emit");
    read_opt(e, "robustness", c.emit.robustness, "emit");
    read_opt(e, "validation", c.emit.validation, "emit");
    read_opt(e, "plots", c.emit.plots, "emit");
  }
  if (j.contains("output_dir")) {
    std::string p;
    read_opt(j, "output_dir", p, "config");
    c.output_dir = fs::path(p).is_absolute() ? fs::path(p) : base_dir / p;
  } else {
    c.output_dir = base_dir / c.output_dir;
  }
  read_opt(j, "threads", c.threads, "config");
  c.validate();
  return c;
}

json PipelineConfig::to_json() const {
  json data;
  if (synthetic) {
    data["synthetic"] = synthetic->to_json();
  } else {
    data["customers_csv"] = customers_csv.string();
  }
  json cases_j = json::array();
  for (const auto& c : cases) cases_j.push_back(c.pair_key() + ":" + std::to_string(c.train_year));
  json models_j = json::array();
  for (const auto& m : models) {
    models_j.push_back({{"kind", std::string(model_kind_name(m.kind))}, {"params", m.params.to_json(m.kind)}});
  }
  json tune_j{{"enabled", tune.enabled}, {"n_iter", tune.n_iter}, {"k_folds", tune.k_folds}};
  return {{"data", data},
          {"cases", cases_j},
          {"models", models_j},
          {"tune", tune_j},
          {"k_folds", k_folds},
          {"seeds", {{"data", seeds.data}, {"cv", seeds.cv}, {"tune", seeds.tune}, {"explain", seeds.explain}}},
          {"threshold", threshold},
          {"alpha", alpha},
          {"small_effect_cutoff", small_effect_cutoff},
          {"cardinality_cap", cardinality_cap},
          {"exclude_target_holders", exclude_target_holders},
          {"explain",
           {{"max_nonbuyers_per_fold", explain.max_nonbuyers_per_fold},
            {"beeswarm_top_k", explain.beeswarm_top_k}}},
          {"validation",
           {{"top_k", validation.top_k},
            {"bonferroni", validation.bonferroni},
            {"variance_ratio_low", validation.variance_ratio_low},
            {"variance_ratio_high", validation.variance_ratio_high}}},
          {"emit",
           {{"metrics", emit.metrics},
            {"shap", emit.shap},
            {"robustness", emit.robustness},
            {"validation", emit.validation},
            {"plots", emit.plots}}},
          {"output_dir", output_dir.string()},
          {"threads", threads}};
}

void PipelineConfig::validate() const {
  if (synthetic.has_value() == !customers_csv.empty()) {
    throw ConfigError("config: exactly one data source is required");
  }
  if (synthetic) synthetic->validate();
  if (!customers_csv.empty() && !fs::is_regular_file(customers_csv)) {
    throw ConfigError(fmt::format("customer table not found: {}", customers_csv.string()));
  }
  if (cases.empty()) throw ConfigError("config: no cases");
  std::set<std::string> ids;
  for (const auto& c : cases) {
    c.validate();
    if (!ids.insert(c.id()).second) throw ConfigError(fmt::format("duplicate case {}", c.id()));
  }
  if (models.empty()) throw ConfigError("config: no models");
  std::set<ModelKind> kinds;
  for (const auto& m : models) {
    m.params.validate();
    if (!kinds.insert(m.kind).second) {
      throw ConfigError(fmt::format("model '{}' listed twice", model_kind_name(m.kind)));
    }
  }
  if (k_folds < 2) throw ConfigError("k_folds must be at least 2");
  if (tune.enabled) {
    if (tune.n_iter < 1) throw ConfigError("tune.n_iter must be at least 1");
    if (tune.k_folds < 2) throw ConfigError("tune.k_folds must be at least 2");
    if (!tune.case_id.empty() && !ids.contains(tune.case_id)) {
      throw ConfigError(fmt::format("tune.case '{}' is not one of the configured cases", tune.case_id));
    }
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  if (!(small_effect_cutoff >= 0.0 && small_effect_cutoff <= 1.0)) {
    throw ConfigError("small_effect_cutoff must lie in [0,1]");
  }
  if (cardinality_cap < 2) throw ConfigError("cardinality_cap must be at least 2");
  if (explain.max_nonbuyers_per_fold < -1) {
    throw ConfigError("explain.max_nonbuyers_per_fold must be -1 (all) or non-negative");
  }
  if (validation.top_k < 1) throw ConfigError("validation.top_k must be at least 1");
  if (!(validation.variance_ratio_low > 0.0 &&
        validation.variance_ratio_low <= validation.variance_ratio_high)) {
    throw ConfigError("validation variance ratio bounds must satisfy 0 < low <= high");
  }
  if ((emit.robustness || emit.validation) && !emit.shap) {
    throw ConfigError("emit.robustness and emit.validation need emit.shap");
  }
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

void apply_environment(PipelineConfig& config) {
  if (const char* dir = std::getenv("XSELL_OUTPUT_DIR"); dir != nullptr && *dir != '\0') {
    config.output_dir = dir;
  }
  if (const char* t = std::getenv("XSELL_THREADS"); t != nullptr && *t != '\0') {
    try {
      std::size_t used = 0;
      const int n = std::stoi(t, &used);
      if (used != std::string_view(t).size() || n < 1) throw std::invalid_argument(t);
      config.threads = n;
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("XSELL_THREADS must be a positive integer, got '{}'", t));
    }
  }
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError(fmt::format("config file not found: {}", path.string()));
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  PipelineConfig c = PipelineConfig::from_json(j, path.parent_path());
  apply_environment(c);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Stages.

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Generate:
      return "generate";
    case Stage::Prepare:
      return "prepare";
    case Stage::Tune:
      return "tune";
    case Stage::Train:
      return "train";
    case Stage::Evaluate:
      return "evaluate";
    case Stage::Explain:
      return "explain";
    case Stage::Robustness:
      return "robustness";
    case Stage::Validate:
      return "validate";
    case Stage::Report:
      break;
  }
  return "report";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : all_stages()) {
    if (stage_name(st) == s) return st;
  }
  throw ConfigError(fmt::format("unknown stage '{}'", s));
}

std::vector<Stage> all_stages() {
  return {Stage::Generate, Stage::Prepare,    Stage::Tune,     Stage::Train, Stage::Evaluate,
          Stage::Explain,  Stage::Robustness, Stage::Validate, Stage::Report};
}

namespace {

json failures_to_json(const std::vector<StageFailure>& fs_) {
  json a = json::array();
  for (const auto& f : fs_) {
    a.push_back({{"stage", f.stage}, {"case", f.case_id}, {"model", f.model}, {"message", f.message}});
  }
  return a;
}

std::vector<StageFailure> failures_from_json(const json& a) {
  std::vector<StageFailure> out;
  for (const auto& f : a) {
    out.push_back({f.at("stage").get<std::string>(), f.at("case").get<std::string>(),
                   f.at("model").get<std::string>(), f.at("message").get<std::string>()});
  }
  return out;
}

// Output tree owned by a stage.
fs::path stage_dir(Stage s) {
  switch (s) {
    case Stage::Generate:
      return "data";
    case Stage::Prepare:
      return "cases";
    case Stage::Tune:
      return "tune";
    case Stage::Train:
      return "models";
    case Stage::Evaluate:
      return "eval";
    case Stage::Explain:
      return "shap";
    case Stage::Robustness:
      return "robustness";
    case Stage::Validate:
      return "validation";
    case Stage::Report:
      break;
  }
  return "report";
}

fs::path failures_file(Stage s) {
  return artifact::failures() / (std::string(stage_name(s)) + ".json");
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: {}", p.string(), e.what()));
  }
}

class StageContext {
 public:
  StageContext(Stage stage, const PipelineConfig& config) : stage_(stage), config_(config) {}

  const PipelineConfig& config() const { return config_; }
  fs::path abs(const fs::path& rel) const { return config_.output_dir / rel; }
  bool exists(const fs::path& rel) const { return fs::exists(abs(rel)); }

  void write(const fs::path& rel, std::string_view bytes) {
    write_file_atomic(abs(rel), bytes);
    result_.written.push_back(rel);
  }
  void write_json(const fs::path& rel, const json& j) { write(rel, j.dump(2) + "\n"); }

  void require(Stage upstream) const {
    if (!exists(failures_file(upstream))) {
      throw DataError(fmt::format("stage '{}' needs the output of '{}' in {} (run '{}' first)",
                                  stage_name(stage_), stage_name(upstream),
                                  config_.output_dir.string(), stage_name(upstream)));
    }
  }

  // Starts from an empty output tree so reruns never mix with stale files.
  void reset(const fs::path& rel) const { fs::remove_all(abs(rel)); }

  // Runs one unit of work; library errors are recorded and the stage moves on.
  void item(const std::string& case_id, const std::string& model, const std::function<void()>& fn) {
    ++items_;
    try {
      fn();
    } catch (const Error& e) {
      result_.failures.push_back({std::string(stage_name(stage_)), case_id, model, e.what()});
      if (!first_error_) first_error_ = std::current_exception();
    }
  }

  StageResult finish() {
    write_json(failures_file(stage_), failures_to_json(result_.failures));
    if (items_ > 0 && result_.failures.size() == items_) std::rethrow_exception(first_error_);
    return std::move(result_);
  }

 private:
  Stage stage_;
  const PipelineConfig& config_;
  StageResult result_;
  std::size_t items_ = 0;
  std::exception_ptr first_error_;
};

std::vector<CustomerRecord> load_customers(const StageContext& ctx) {
  ctx.require(Stage::Generate);
  return read_customer_csv(ctx.abs(artifact::customers_csv()));
}

// Cases that survived `prepare`.
std::vector<CrossSellCase> prepared_cases(const StageContext& ctx) {
  ctx.require(Stage::Prepare);
  const json idx = read_json(ctx.abs(artifact::cases_index()));
  std::set<std::string> ok;
  for (const auto& c : idx.at("prepared")) ok.insert(c.at("id").get<std::string>());
  std::vector<CrossSellCase> out;
  for (const auto& c : ctx.config().cases) {
    if (ok.contains(c.id())) out.push_back(c);
  }
  return out;
}

const CrossSellCase* tune_case(const PipelineConfig& cfg) {
  if (cfg.tune.case_id.empty()) return &cfg.cases.front();
  for (const auto& c : cfg.cases) {
    if (c.id() == cfg.tune.case_id) return &c;
  }
  return nullptr;
}

EnsembleParams training_params(const StageContext& ctx, const ModelSpec& m) {
  if (!ctx.config().tune.enabled) return m.params;
  ctx.require(Stage::Tune);
  const fs::path p = artifact::tune_result(m.kind);
  if (!ctx.exists(p)) {
    throw DataError(fmt::format("no tuning result for {} (tuning failed)", model_kind_name(m.kind)));
  }
  return SearchResult::from_json(read_json(ctx.abs(p))).best();
}

struct FoldModels {
  FoldAssignment folds;
  std::vector<EnsembleModel> models;
};

FoldModels load_fold_models(const StageContext& ctx, const CrossSellCase& c, ModelKind kind) {
  const fs::path dir = artifact::model_dir(c, kind);
  FoldModels fm;
  fm.folds = FoldAssignment::from_json(read_json(ctx.abs(dir / "folds.json")));
  for (int f = 0; f < fm.folds.k; ++f) {
    fm.models.push_back(
        EnsembleModel::from_json(read_json(ctx.abs(dir / fmt::format("fold_{}.json", f)))));
  }
  return fm;
}

std::string kind_str(ModelKind k) { return std::string(model_kind_name(k)); }

// -- generate ---------------------------------------------------------------

void stage_generate(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  ctx.reset("data");
  ctx.item("", "", [&] {
    if (cfg.synthetic) {
      const Population pop = generate_population(*cfg.synthetic, cfg.threads);
      ctx.write(artifact::customers_csv(), write_customer_csv(pop.customers));
      ctx.write("data/contracts.csv", write_contract_csv(pop.contracts));
      ctx.write_json("data/tariffs.json", pop.tariffs.to_json());
      ctx.write_json("data/truth.json", pop.truth.to_json());
      std::string lines;
      for (const auto& l : describe_truth(pop.truth)) lines += l + "\n";
      ctx.write("data/truth.txt", lines);
    } else {
      // Normalized copy: later stages only read the output tree.
      const auto records = read_customer_csv(cfg.customers_csv);
      if (records.empty()) {
        throw DataError(fmt::format("{}: no customer rows", cfg.customers_csv.string()));
      }
      ctx.write(artifact::customers_csv(), write_customer_csv(records));
    }
  });
}

// -- prepare ----------------------------------------------------------------

void stage_prepare(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  const auto customers = load_customers(ctx);
  ctx.reset("cases");
  json prepared = json::array();
  for (const auto& c : cfg.cases) {
    ctx.item(c.id(), "", [&] {
      AssembleConfig ac;
      ac.cardinality_cap = cfg.cardinality_cap;
      ac.labels.exclude_target_holders = cfg.exclude_target_holders;
      ac.seed = cfg.seeds.data;
      const CaseDataset d = assemble_case_dataset(customers, c, ac);
      const fs::path dir = artifact::case_dir(c);
      ctx.write(dir / "features.csv", case_dataset_features_csv(d));
      ctx.write_json(dir / "meta.json", case_dataset_meta(d));
      prepared.push_back({{"id", c.id()},
                          {"case", case_to_json(c)},
                          {"rows", d.rows.rows()},
                          {"positives", d.positives()},
                          {"features", d.feature_names.size()}});
    });
  }
  ctx.write_json(artifact::cases_index(), {{"prepared", prepared}});
}

// -- tune -------------------------------------------------------------------

void stage_tune(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  ctx.require(Stage::Prepare);
  ctx.reset("tune");
  if (!cfg.tune.enabled) return;
  const CrossSellCase* c = tune_case(cfg);
  for (const auto& m : cfg.models) {
    ctx.item(c->id(), kind_str(m.kind), [&] {
      if (!ctx.exists(artifact::case_dir(*c) / "meta.json")) {
        throw DataError(fmt::format("tuning case {} was not prepared", c->id()));
      }
      const CaseDataset d = read_case_dataset(ctx.abs(artifact::case_dir(*c)));
      const SearchResult r =
          random_param_search(m.kind, default_param_space(m.kind), m.params,
                              {d.rows, d.labels, d.feature_names}, cfg.tune.n_iter,
                              cfg.tune.k_folds, cfg.seeds.tune, cfg.threads);
      json j = r.to_json();
      j["case"] = case_to_json(*c);
      ctx.write_json(artifact::tune_result(m.kind), j);
    });
  }
}

// -- train ------------------------------------------------------------------

void stage_train(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  const auto cases = prepared_cases(ctx);
  ctx.reset("models");
  for (const auto& c : cases) {
    const CaseDataset d = read_case_dataset(ctx.abs(artifact::case_dir(c)));
    for (const auto& m : cfg.models) {
      ctx.item(c.id(), kind_str(m.kind), [&] {
        const EnsembleParams params = training_params(ctx, m);
        const auto cv = cross_validate({d.rows, d.labels, d.feature_names}, m.kind, params,
                                       cfg.k_folds, cfg.seeds.cv, cfg.threads, cfg.threshold);
        const fs::path dir = artifact::model_dir(c, m.kind);
        ctx.write_json(dir / "params.json", params.to_json(m.kind));
        ctx.write_json(dir / "folds.json", cv.folds.to_json());
        for (std::size_t f = 0; f < cv.models.size(); ++f) {
          ctx.write(dir / fmt::format("fold_{}.json", f), cv.models[f].to_json().dump() + "\n");
        }
      });
    }
  }
}

// -- evaluate ---------------------------------------------------------------

void stage_evaluate(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  ctx.require(Stage::Train);
  const auto cases = prepared_cases(ctx);
  ctx.reset("eval");
  for (const auto& c : cases) {
    const CaseDataset d = read_case_dataset(ctx.abs(artifact::case_dir(c)));
    for (const auto& m : cfg.models) {
      if (!ctx.exists(artifact::model_dir(c, m.kind) / "folds.json")) continue;
      ctx.item(c.id(), kind_str(m.kind), [&] {
        const FoldModels fm = load_fold_models(ctx, c, m.kind);
        if (fm.folds.fold_of_row.size() != d.rows.rows()) {
          throw DataError("fold assignment does not match the prepared dataset");
        }
        std::vector<double> oof(d.rows.rows(), 0.0);
        std::vector<FoldMetrics> metrics(fm.models.size());
        for (int f = 0; f < fm.folds.k; ++f) {
          const auto test = fm.folds.test_rows(f);
          const FeatureMatrix x = select_rows(d.rows, test);
          const auto scores = predict_proba(fm.models[f], x, cfg.threads);
          std::vector<std::uint8_t> y;
          for (std::size_t i = 0; i < test.size(); ++i) {
            oof[test[i]] = scores[i];
            y.push_back(d.labels[test[i]]);
          }
          metrics[f] = evaluate_scores(y, scores, cfg.threshold);
          metrics[f].fold = f;
        }
        MetricsReport rep = summarize_folds(std::move(metrics));
        rep.cross_sell_case = c;
        rep.kind = m.kind;
        rep.seed = cfg.seeds.cv;
        rep.threshold = cfg.threshold;
        const fs::path dir = artifact::eval_dir(c, m.kind);
        ctx.write_json(dir / "metrics.json", rep.to_json());
        CsvWriter w;
        w.row({"CustomerId", "Fold", "Label", "Score"});
        for (std::size_t r = 0; r < oof.size(); ++r) {
          w.row({d.customer_ids[r], std::to_string(fm.folds.fold_of_row[r]),
                 std::to_string(d.labels[r]), format_double(oof[r])});
        }
        ctx.write(dir / "oof_scores.csv", w.str());
      });
    }
  }
}

// -- explain ----------------------------------------------------------------

// Test rows of a fold to explain: every buyer plus a seeded sample of
// non-buyers when capped; ascending row order.
std::vector<std::size_t> explained_rows(const std::vector<std::size_t>& test,
                                        std::span<const std::uint8_t> labels, long cap,
                                        std::uint64_t seed) {
  std::vector<std::size_t> buyers, others;
  for (std::size_t r : test) (labels[r] ? buyers : others).push_back(r);
  if (cap >= 0 && others.size() > static_cast<std::size_t>(cap)) {
    Rng rng(seed);
    const std::size_t k = static_cast<std::size_t>(cap);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(others.size() - i));
      std::swap(others[i], others[j]);
    }
    others.resize(k);
  }
  buyers.insert(buyers.end(), others.begin(), others.end());
  std::sort(buyers.begin(), buyers.end());
  return buyers;
}

void stage_explain(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  ctx.require(Stage::Train);
  const auto cases = prepared_cases(ctx);
  ctx.reset("shap");
  for (const auto& c : cases) {
    const CaseDataset d = read_case_dataset(ctx.abs(artifact::case_dir(c)));
    for (const auto& m : cfg.models) {
      if (!ctx.exists(artifact::model_dir(c, m.kind) / "folds.json")) continue;
      ctx.item(c.id(), kind_str(m.kind), [&] {
        const FoldModels fm = load_fold_models(ctx, c, m.kind);
        const fs::path dir = artifact::shap_dir(c, m.kind);
        std::vector<ShapMatrix> parts;
        FeatureMatrix values;
        values.set_cols(d.rows.cols());
        for (int f = 0; f < fm.folds.k; ++f) {
          const auto rows =
              explained_rows(fm.folds.test_rows(f), d.labels, cfg.explain.max_nonbuyers_per_fold,
                             derive_seed(cfg.seeds.explain, {static_cast<std::uint64_t>(f)}));
          const FeatureMatrix x = select_rows(d.rows, rows);
          ShapMatrix s = ensemble_shap(fm.models[f], x, cfg.threads);
          s.fold_id = f;
          s.model_ref = (artifact::model_dir(c, m.kind) / fmt::format("fold_{}.json", f)).generic_string();
          for (std::size_t i = 0; i < rows.size(); ++i) {
            s.instance_ids[i] = d.customer_ids[rows[i]];
            values.append_row(x.row(i));
          }
          const fs::path stem = dir / fmt::format("fold_{}", f);
          ctx.write(fs::path(stem) += ".csv", s.values_csv());
          ctx.write_json(fs::path(stem) += ".json", s.meta_json());
          parts.push_back(std::move(s));
        }
        const ShapMatrix all = concat_shap(parts);
        const ShapSummary sum =
            shap_summary(all, values, cfg.explain.beeswarm_top_k, cfg.seeds.explain);
        ctx.write(dir / "ranking.csv", sum.ranking_csv());
        if (cfg.emit.plots) ctx.write(dir / "beeswarm.csv", sum.points_csv());
      });
    }
  }
}

std::vector<FeatureImportance> load_ranking(const StageContext& ctx, const fs::path& dir) {
  const fs::path p = ctx.abs(dir / "ranking.csv");
  return ShapSummary::parse_ranking_csv(read_file(p), p.string());
}

// -- robustness -------------------------------------------------------------

void stage_robustness(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  ctx.require(Stage::Explain);
  const auto cases = prepared_cases(ctx);
  ctx.reset("robustness");
  for (const auto& c : cases) {
    const CaseDataset d = read_case_dataset(ctx.abs(artifact::case_dir(c)));
    std::map<std::string, std::uint8_t> label_of;
    for (std::size_t r = 0; r < d.customer_ids.size(); ++r) label_of[d.customer_ids[r]] = d.labels[r];
    for (const auto& m : cfg.models) {
      const fs::path sdir = artifact::shap_dir(c, m.kind);
      if (!ctx.exists(sdir / "ranking.csv")) continue;
      ctx.item(c.id(), kind_str(m.kind), [&] {
        const FoldAssignment folds =
            FoldAssignment::from_json(read_json(ctx.abs(artifact::model_dir(c, m.kind) / "folds.json")));
        std::vector<ShapMatrix> parts;
        std::vector<std::vector<std::uint8_t>> buyers;
        for (int f = 0; f < folds.k; ++f) {
          parts.push_back(ShapMatrix::read(ctx.abs(sdir / fmt::format("fold_{}", f))));
          std::vector<std::uint8_t> b;
          for (const auto& id : parts.back().instance_ids) {
            const auto it = label_of.find(id);
            if (it == label_of.end()) throw DataError(fmt::format("unknown customer '{}' in SHAP output", id));
            b.push_back(it->second);
          }
          buyers.push_back(std::move(b));
        }
        std::vector<std::string> order;
        for (const auto& f : load_ranking(ctx, sdir)) order.push_back(f.feature);
        const RobustnessReport rep = fold_robustness(
            parts, buyers, {cfg.alpha, cfg.small_effect_cutoff}, order, cfg.threads);
        const fs::path dir = artifact::robustness_dir(c, m.kind);
        ctx.write(dir / "robustness.csv", rep.to_csv());
        ctx.write_json(dir / "robustness.json", rep.to_json());
      });
    }
  }
}

// -- validate ---------------------------------------------------------------

void stage_validate(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  ctx.require(Stage::Explain);
  const auto cases = prepared_cases(ctx);
  const auto customers = load_customers(ctx);
  ctx.reset("validation");
  for (const auto& c : cases) {
    const CaseDataset d = read_case_dataset(ctx.abs(artifact::case_dir(c)));
    // Features of the test year, purchases of the year after.
    const CrossSellCase next = CrossSellCase::make(c.owner_type, c.target_type, c.test_year);
    for (const auto& m : cfg.models) {
      const fs::path sdir = artifact::shap_dir(c, m.kind);
      if (!ctx.exists(sdir / "ranking.csv")) continue;
      ctx.item(c.id(), kind_str(m.kind), [&] {
        const auto ranking = load_ranking(ctx, sdir);
        const auto hyps = hypotheses_from_ranking(ranking, cfg.validation.top_k);
        ValidationOptions opt;
        opt.alpha = cfg.alpha;
        opt.bonferroni = cfg.validation.bonferroni;
        opt.variance_ratio_low = cfg.validation.variance_ratio_low;
        opt.variance_ratio_high = cfg.validation.variance_ratio_high;
        opt.labels.exclude_target_holders = cfg.exclude_target_holders;
        const ValidationReport rep =
            validate_next_year(hyps, d.encoding, customers, next, opt, cfg.threads);
        const fs::path dir = artifact::validation_dir(c, m.kind);
        ctx.write(dir / "validation.csv", rep.to_csv());
        ctx.write(dir / "table_4.csv", rep.table_csv());
        ctx.write_json(dir / "validation.json", rep.to_json());
      });
    }
  }
}

// -- report -----------------------------------------------------------------

std::string percent(std::size_t pos, std::size_t n) {
  return n == 0 ? "n/a" : fmt::format("{:.1f}%", 100.0 * static_cast<double>(pos) / static_cast<double>(n));
}

void stage_report(StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config();
  const auto cases = prepared_cases(ctx);
  ctx.reset("report");
  const fs::path rdir = artifact::report_dir();

  // Table 2: one row per year pair, one column per case type.
  {
    const json idx = read_json(ctx.abs(artifact::cases_index()));
    std::vector<std::string> pairs;
    std::map<std::string, std::map<std::string, std::string>> cell;  // year -> pair -> text
    std::vector<std::string> years;
    for (const auto& e : idx.at("prepared")) {
      const CrossSellCase c = case_from_json(e.at("case"));
      const auto n = e.at("rows").get<std::size_t>();
      const auto pos = e.at("positives").get<std::size_t>();
      if (std::find(pairs.begin(), pairs.end(), c.label()) == pairs.end()) pairs.push_back(c.label());
      if (std::find(years.begin(), years.end(), c.year_label()) == years.end()) years.push_back(c.year_label());
      cell[c.year_label()][c.label()] = fmt::format("{} ({} / {})", n, pos, percent(pos, n));
    }
    std::sort(years.begin(), years.end());
    CsvWriter w;
    std::vector<std::string> header{"Year (Train/Test)"};
    header.insert(header.end(), pairs.begin(), pairs.end());
    w.row(header);
    for (const auto& y : years) {
      std::vector<std::string> row{y};
      for (const auto& p : pairs) row.push_back(cell[y].contains(p) ? cell[y][p] : "");
      w.row(row);
    }
    ctx.write(rdir / "table_2.csv", w.str());
  }

  // Table 3 and Figure 2 from the evaluation stage.
  if (ctx.exists(failures_file(Stage::Evaluate))) {
    CsvWriter t3, f2;
    std::vector<std::string> header{"Case", "Year (Train/Test)"};
    for (const auto& m : cfg.models) {
      const std::string l(model_kind_label(m.kind));
      for (const char* metric : {"AUC", "Precision", "Recall", "F2"}) {
        header.push_back(fmt::format("{} {}", l, metric));
      }
    }
    t3.row(header);
    f2.row({"Case", "Train Year", "Test Year", "Model", "AUC", "AUC SD", "Folds"});
    for (const auto& c : cases) {
      std::vector<std::string> row{c.label(), c.year_label()};
      bool any = false;
      for (const auto& m : cfg.models) {
        const fs::path p = artifact::eval_dir(c, m.kind) / "metrics.json";
        if (!ctx.exists(p)) {
          row.insert(row.end(), 4, "");
          continue;
        }
        any = true;
        const MetricsReport rep = MetricsReport::from_json(read_json(ctx.abs(p)));
        for (double v : {rep.mean.auc, rep.mean.precision, rep.mean.recall, rep.mean.f2}) {
          row.push_back(fmt::format("{:.3f}", v));
        }
        double ss = 0.0;
        for (const auto& f : rep.folds) ss += (f.auc - rep.mean.auc) * (f.auc - rep.mean.auc);
        const double sd = rep.folds.size() > 1 ? std::sqrt(ss / (rep.folds.size() - 1.0)) : 0.0;
        f2.row({c.label(), std::to_string(c.train_year), std::to_string(c.test_year),
                std::string(model_kind_label(m.kind)), format_double(rep.mean.auc),
                format_double(sd), std::to_string(rep.folds.size())});
      }
      if (any) t3.row(row);
    }
    ctx.write(rdir / "table_3.csv", t3.str());
    if (cfg.emit.plots) ctx.write(rdir / "figure_2.csv", f2.str());
  }

  for (const auto& c : cases) {
    for (const auto& m : cfg.models) {
      const std::string tag = fmt::format("{}_{}", c.id(), model_kind_name(m.kind));
      const fs::path bees = artifact::shap_dir(c, m.kind) / "beeswarm.csv";
      if (cfg.emit.plots && ctx.exists(bees)) {
        ctx.write(rdir / fmt::format("figure_3_{}_beeswarm.csv", tag), read_file(ctx.abs(bees)));
      }
      const fs::path rob = artifact::robustness_dir(c, m.kind) / "robustness.json";
      if (ctx.exists(rob)) {
        const RobustnessReport rep = RobustnessReport::from_json(read_json(ctx.abs(rob)));
        CsvWriter w;
        w.row({"Rank", "Feature", "Significance", "Effect Size", "Tag", "Light"});
        for (const auto& f : rep.features) {
          w.row({std::to_string(f.rank), f.feature, significance_stars(f.p),
                 fmt::format("{:.2f}", f.effect_size), std::string(tag_name(f.tag)),
                 std::string(tag_light(f.tag))});
        }
        ctx.write(rdir / fmt::format("figure_3_{}_robustness.csv", tag), w.str());
      }
      const fs::path val = artifact::validation_dir(c, m.kind) / "table_4.csv";
      if (ctx.exists(val)) {
        ctx.write(rdir / fmt::format("table_4_{}.csv", tag), read_file(ctx.abs(val)));
      }
    }
  }

  // Failures recorded by every stage that ran.
  std::vector<StageFailure> all;
  for (Stage s : all_stages()) {
    if (s == Stage::Report || !ctx.exists(failures_file(s))) continue;
    for (auto& f : failures_from_json(read_json(ctx.abs(failures_file(s))))) all.push_back(std::move(f));
  }
  ctx.write_json(rdir / "failures.json", failures_to_json(all));
}

}  // namespace

StageResult run_stage(Stage stage, const PipelineConfig& config) {
  StageContext ctx(stage, config);
  switch (stage) {
    case Stage::Generate:
      stage_generate(ctx);
      break;
    case Stage::Prepare:
      stage_prepare(ctx);
      break;
    case Stage::Tune:
      stage_tune(ctx);
      break;
    case Stage::Train:
      stage_train(ctx);
      break;
    case Stage::Evaluate:
      stage_evaluate(ctx);
      break;
    case Stage::Explain:
      stage_explain(ctx);
      break;
    case Stage::Robustness:
      stage_robustness(ctx);
      break;
    case Stage::Validate:
      stage_validate(ctx);
      break;
    case Stage::Report:
      stage_report(ctx);
      break;
  }
  return ctx.finish();
}

// ---------------------------------------------------------------------------
// Manifest.

json Manifest::to_json() const {
  json a = json::array();
  for (const auto& e : artifacts) a.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  return {{"format_version", 1},
          {"run_hash", run_hash},
          {"artifacts", a},
          {"failures", failures_to_json(failures)}};
}

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  try {
    m.run_hash = j.at("run_hash").get<std::string>();
    for (const auto& e : j.at("artifacts")) {
      m.artifacts.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(),
                             e.at("bytes").get<std::uintmax_t>()});
    }
    m.failures = failures_from_json(j.at("failures"));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("manifest: {}", e.what()));
  }
  return m;
}

Manifest build_manifest(const fs::path& output_dir) {
  if (!fs::is_directory(output_dir)) {
    throw DataError(fmt::format("output directory {} does not exist", output_dir.string()));
  }
  Manifest m;
  for (const auto& e : fs::recursive_directory_iterator(output_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), output_dir).generic_string();
    if (rel == artifact::manifest().generic_string() || rel == artifact::run_log().generic_string() ||
        rel.ends_with(".tmp")) {
      continue;
    }
    m.artifacts.push_back({rel, sha256_file(e.path()), e.file_size()});
  }
  std::sort(m.artifacts.begin(), m.artifacts.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  std::string lines;
  for (const auto& a : m.artifacts) lines += a.path + " " + a.sha256 + "\n";
  m.run_hash = sha256_hex(lines);
  const fs::path failures = output_dir / "report" / "failures.json";
  if (fs::exists(failures)) m.failures = failures_from_json(read_json(failures));
  return m;
}

Manifest run_pipeline(const PipelineConfig& config) {
  config.validate();
  json log = json::array();
  const auto start = std::chrono::steady_clock::now();
  for (Stage s : all_stages()) {
    const bool enabled = (s != Stage::Evaluate || config.emit.metrics) &&
                         (s != Stage::Explain || config.emit.shap) &&
                         (s != Stage::Robustness || config.emit.robustness) &&
                         (s != Stage::Validate || config.emit.validation);
    if (!enabled) {
      fs::remove(config.output_dir / failures_file(s));
      fs::remove_all(config.output_dir / stage_dir(s));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const StageResult r = run_stage(s, config);
    const auto t1 = std::chrono::steady_clock::now();
    log.push_back({{"stage", std::string(stage_name(s))},
                   {"seconds", std::chrono::duration<double>(t1 - t0).count()},
                   {"artifacts", r.written.size()},
                   {"failures", r.failures.size()}});
  }
  const Manifest m = build_manifest(config.output_dir);
  write_file_atomic(config.output_dir / artifact::manifest(), m.to_json().dump(2) + "\n");
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(config.output_dir / artifact::run_log(),
                    json{{"threads", config.threads}, {"seconds", total}, {"stages", log}}.dump(2) + "\n");
  return m;
}

}  // namespace xsell
