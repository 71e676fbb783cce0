// tvol: testis volumetry pipeline driver.
//
//   tvol phantom --out DIR [--subjects N] [--dims X Y Z] [--defect I:KIND ...]
//   tvol scan|split|infer|evaluate|agreement|stats -c CONFIG [--workers N]
//
// Exit status: 0 ok, 1 fatal error (JSON on stderr), 2 usage, 3 infer
// finished but some subjects failed (see errors.jsonl).

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tvol/pipeline.hpp"

namespace {

using namespace tvol;
namespace fs = std::filesystem;

void print(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << std::endl; }

nlohmann::ordered_json agreement_json(const metrics::AgreementReport& rep) {
  nlohmann::ordered_json j;
  j["pairs"] = rep.pairs.size();
  j["skipped"] = rep.skipped.size();
  j["median_dice"] = rep.pairs.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(rep.median);
  j["mean_dice"] = rep.pairs.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(rep.mean);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("tvol"));

  CLI::App app{"Testis volumetry pipeline over DIXON NIfTI catalogs"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")->capture_default_str();

  std::string config_path;
  long workers_flag = 0;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-w,--workers", workers_flag, "worker threads (overrides TVOL_WORKERS and the config)")
        ->check(CLI::PositiveNumber);
  };

  auto* scan = app.add_subcommand("scan", "classify catalog subjects and report exclusions");
  auto* split = app.add_subcommand("split", "write the seeded train/test/rt/fold manifest");
  auto* infer = app.add_subcommand("infer", "segment valid subjects, write masks and volumes.csv");
  auto* evaluate = app.add_subcommand("evaluate", "dice of inferred masks against reference masks");
  auto* agree = app.add_subcommand("agreement", "dice between two annotators' mask directories");
  auto* stats = app.add_subcommand("stats", "population summary and histograms from volumes.csv");
  for (auto* s : {scan, split, infer, evaluate, agree, stats}) with_config(s);

  pipeline::InferOptions infer_opt;
  infer->add_flag("--force", infer_opt.force, "recompute subjects that already have results");
  infer->add_option("--limit", infer_opt.limit, "process at most N pending subjects, then stop");

  auto* phantom_cmd = app.add_subcommand("phantom", "write a synthetic cohort with ground truth");
  std::string phantom_out;
  phantom::CohortDesign design;
  std::vector<std::string> defect_specs;
  phantom_cmd->add_option("-o,--out", phantom_out, "output directory")->required();
  phantom_cmd->add_option("--subjects", design.subjects, "number of subjects")->capture_default_str();
  std::vector<std::int64_t> dims(design.dims.begin(), design.dims.end());
  phantom_cmd->add_option("--dims", dims, "grid dims X Y Z")->expected(3)->check(CLI::PositiveNumber);
  phantom_cmd->add_option("--seed", design.seed, "generator seed")->capture_default_str();
  phantom_cmd->add_option("--margin-every", design.margin_every, "every k-th subject touches a face (0 = none)")
      ->capture_default_str();
  phantom_cmd->add_option("--defect", defect_specs, "INDEX:KIND with KIND in empty_directory, missing_fat, "
                                                    "wrong_dims, corrupt_water");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (phantom_cmd->parsed()) {
      std::vector<std::pair<std::size_t, phantom::Defect>> defects;
      for (const auto& d : defect_specs) {
        const auto colon = d.find(':');
        if (colon == std::string::npos) throw Error(ErrorKind::InvalidConfig, "--defect expects INDEX:KIND, got " + d);
        defects.emplace_back(std::stoul(d.substr(0, colon)), phantom::defect_from_string(d.substr(colon + 1)));
      }
      std::copy(dims.begin(), dims.end(), design.dims.begin());
      const auto layout = pipeline::run_phantom(design, phantom_out, defects);
      print({{"catalog", layout.catalog.string()},
             {"truth", layout.truth.string()},
             {"manifest", layout.manifest.string()},
             {"config", (fs::path(phantom_out) / "pipeline.json").string()}});
      return 0;
    }

    auto cfg = pipeline::load_config(config_path);
    cfg.workers = workers_flag > 0 ? static_cast<std::size_t>(workers_flag) : workers_from_env(cfg.workers);

    if (scan->parsed()) {
      const auto records = pipeline::run_scan(cfg);
      auto j = pipeline::catalog_json(records);
      j.erase("subjects");
      print(j);
    } else if (split->parsed()) {
      const auto m = pipeline::run_split(cfg);
      print({{"manifest", pipeline::OutputLayout{cfg.output_dir}.splits_json().string()},
             {"train", m.train_ids.size()},
             {"test", m.test_ids.size()},
             {"rt", m.rt_ids.size()},
             {"folds", m.folds.size()}});
    } else if (infer->parsed()) {
      const auto s = pipeline::run_infer(cfg, infer_opt);
      print({{"total", s.total},
             {"valid", s.valid},
             {"processed", s.processed},
             {"skipped", s.skipped},
             {"failed", s.failed},
             {"pending", s.pending}});
      return s.failed > 0 ? 3 : 0;
    } else if (evaluate->parsed()) {
      print(agreement_json(pipeline::run_evaluate(cfg)));
    } else if (agree->parsed()) {
      print(agreement_json(pipeline::run_agreement(cfg)));
    } else if (stats->parsed()) {
      print(popstats::to_json(pipeline::run_stats(cfg), cfg.stats.summary));
    }
  } catch (const Error& e) {
    std::cerr << nlohmann::ordered_json{{"error_kind", to_string(e.kind())}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::ordered_json{{"error_kind", "Unexpected"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
