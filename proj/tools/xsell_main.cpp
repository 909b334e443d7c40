// xsell: batch CLI for the cross-sell prediction and explanation pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data or configuration error,
// 3 numerical failure.

#include <fmt/format.h>

#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "xsell/csv.hpp"
#include "xsell/error.hpp"
#include "xsell/pipeline.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::string output_dir;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "Pipeline config file (JSON)")->required();
  cmd->add_option("-o,--output-dir", o.output_dir,
                  "Output directory (default: config output_dir, or $XSELL_OUTPUT_DIR)");
  cmd->add_option("-j,--threads", o.threads,
                  "Worker threads (default: config threads, or $XSELL_THREADS)")
      ->check(CLI::PositiveNumber);
}

xsell::PipelineConfig load(const CommonOptions& o) {
  xsell::PipelineConfig cfg = xsell::load_pipeline_config(o.config);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.threads > 0) cfg.threads = o.threads;
  cfg.validate();
  return cfg;
}

void print_failures(const std::vector<xsell::StageFailure>& failures) {
  for (const auto& f : failures) {
    std::string where = f.case_id;
    if (!f.model.empty()) where += "/" + f.model;
    fmt::print(stderr, "warning: {} failed for {}: {}\n", f.stage, where.empty() ? "input" : where,
               f.message);
  }
}

int run_stage_command(xsell::Stage stage, const CommonOptions& o) {
  const xsell::PipelineConfig cfg = load(o);
  const xsell::StageResult r = xsell::run_stage(stage, cfg);
  print_failures(r.failures);
  fmt::print("{}: {} artifacts written to {}\n", xsell::stage_name(stage), r.written.size(),
             cfg.output_dir.string());
  if (stage == xsell::Stage::Report) {
    const xsell::Manifest m = xsell::build_manifest(cfg.output_dir);
    xsell::write_file_atomic(cfg.output_dir / xsell::artifact::manifest(),
                             m.to_json().dump(2) + "\n");
    fmt::print("manifest: {} artifacts, run hash {}\n", m.artifacts.size(), m.run_hash);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-sell purchase prediction with tree ensembles, SHAP explanations and "
               "robustness/validation statistics"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    xsell::Stage stage;
  };
  const Command commands[] = {
      {"generate", "Create the customer table (synthetic population or normalized CSV copy)",
       xsell::Stage::Generate},
      {"prepare", "Filter, aggregate, label and encode every configured case",
       xsell::Stage::Prepare},
      {"tune", "Randomized hyperparameter search (when tune.enabled)", xsell::Stage::Tune},
      {"train", "Fit the stratified k-fold models for every case and model",
       xsell::Stage::Train},
      {"evaluate", "Score held-out folds: AUC, precision, recall, F2", xsell::Stage::Evaluate},
      {"explain", "TreeSHAP attributions per test fold and feature ranking",
       xsell::Stage::Explain},
      {"robustness", "Kruskal-Wallis fold-robustness of buyer attributions",
       xsell::Stage::Robustness},
      {"validate", "Test SHAP-derived hypotheses on the following year",
       xsell::Stage::Validate},
      {"report", "Write report tables, plot data and manifest.json", xsell::Stage::Report},
  };
  CommonOptions opts;
  std::vector<std::pair<CLI::App*, xsell::Stage>> stage_cmds;
  for (const auto& c : commands) {
    CLI::App* cmd = app.add_subcommand(c.name, c.help);
    add_common(cmd, opts);
    stage_cmds.emplace_back(cmd, c.stage);
  }
  CLI::App* run = app.add_subcommand("run", "Run every enabled stage and write manifest.json");
  add_common(run, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) {
      const xsell::PipelineConfig cfg = load(opts);
      const xsell::Manifest m = xsell::run_pipeline(cfg);
      print_failures(m.failures);
      fmt::print("run: {} artifacts in {}, run hash {}\n", m.artifacts.size(),
                 cfg.output_dir.string(), m.run_hash);
      return 0;
    }
    for (const auto& [cmd, stage] : stage_cmds) {
      if (cmd->parsed()) return run_stage_command(stage, opts);
    }
  } catch (const xsell::NumericError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const xsell::DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  }
  return 1;
}
