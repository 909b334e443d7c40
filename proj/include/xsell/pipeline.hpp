#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xsell/ensemble.hpp"
#include "xsell/schema.hpp"
#include "xsell/search.hpp"
#include "xsell/synthgen.hpp"

namespace xsell {

struct ModelSpec {
  ModelKind kind = ModelKind::BalancedRF;
  EnsembleParams params;
};

struct TuneConfig {
  bool enabled = false;
  int n_iter = 10;
  int k_folds = 3;
  // Case the search runs on; the first configured case when empty.
  std::string case_id;
};

struct ExplainConfig {
  // Non-buyers explained per test fold in addition to every buyer; -1 = all.
  long max_nonbuyers_per_fold = -1;
  std::size_t beeswarm_top_k = 20;
};

struct ValidationConfig {
  std::size_t top_k = 10;
  bool bonferroni = false;
  double variance_ratio_low = 0.5;
  double variance_ratio_high = 2.0;
};

struct EmitConfig {
  bool metrics = true;
  bool shap = true;
  bool robustness = true;
  bool validation = true;
  bool plots = true;
};

struct StageSeeds {
  std::uint64_t data = 1;
  std::uint64_t cv = 1;
  std::uint64_t tune = 1;
  std::uint64_t explain = 1;
};

struct PipelineConfig {
  // Exactly one data source.
  std::optional<GeneratorConfig> synthetic;
  std::filesystem::path customers_csv;

  std::vector<CrossSellCase> cases;
  std::vector<ModelSpec> models;
  TuneConfig tune;
  int k_folds = 10;
  StageSeeds seeds;
  double threshold = 0.5;
  double alpha = 0.05;
  double small_effect_cutoff = 0.06;
  std::size_t cardinality_cap = 32;
  bool exclude_target_holders = true;
  ExplainConfig explain;
  ValidationConfig validation;
  EmitConfig emit;
  std::filesystem::path output_dir = "xsell_out";
  int threads = 1;

  // Throws ConfigError; relative paths resolve against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  // Structural checks plus existence of referenced input files.
  void validate() const;
};

// Reads and validates a config file, then applies XSELL_OUTPUT_DIR and
// XSELL_THREADS from the environment.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void apply_environment(PipelineConfig& config);

enum class Stage { Generate, Prepare, Tune, Train, Evaluate, Explain, Robustness, Validate, Report };

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view s);
// Run order.
std::vector<Stage> all_stages();

struct StageFailure {
  std::string stage;
  std::string case_id;
  std::string model;
  std::string message;
};

struct StageResult {
  std::vector<std::filesystem::path> written;  // relative to output_dir
  std::vector<StageFailure> failures;
};

// Each stage reads the artifacts of earlier stages from output_dir and
// throws DataError naming the missing stage when they are absent. Errors
// confined to one case (or case and model) are recorded as failures and the
// stage moves on.
StageResult run_stage(Stage stage, const PipelineConfig& config);

struct ManifestEntry {
  std::string path;
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct Manifest {
  std::vector<ManifestEntry> artifacts;  // sorted by path
  std::vector<StageFailure> failures;
  // SHA-256 over "path sha256\n" lines of every artifact.
  std::string run_hash;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

// Hashes every file under output_dir except manifest.json and run_log.json.
Manifest build_manifest(const std::filesystem::path& output_dir);

// All stages in order, then manifest.json. Wall times go to run_log.json,
// which the manifest does not cover.
Manifest run_pipeline(const PipelineConfig& config);

// Artifact locations relative to output_dir.
namespace artifact {
std::filesystem::path customers_csv();
std::filesystem::path case_dir(const CrossSellCase& c);
std::filesystem::path cases_index();
std::filesystem::path tune_result(ModelKind kind);
std::filesystem::path model_dir(const CrossSellCase& c, ModelKind kind);
std::filesystem::path eval_dir(const CrossSellCase& c, ModelKind kind);
std::filesystem::path shap_dir(const CrossSellCase& c, ModelKind kind);
std::filesystem::path robustness_dir(const CrossSellCase& c, ModelKind kind);
std::filesystem::path validation_dir(const CrossSellCase& c, ModelKind kind);
std::filesystem::path report_dir();
std::filesystem::path failures();
std::filesystem::path manifest();
std::filesystem::path run_log();
}  // namespace artifact

// Case named in JSON either as {"owner", "target", "train_year"} or as
// "Power->TV:2016".
CrossSellCase parse_case_spec(const nlohmann::json& j);

}  // namespace xsell
