// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// privkd: command-line front end of the experiment pipeline.
//
//   privkd <verb> --config run.json [--out dir]
//
// Exit status: 0 on success, 2 for configuration errors, 3..6 for a failed
// stage (see harness::exit_code), 1 otherwise.

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "privkd/errors.hpp"
#include "privkd/harness.hpp"
#include "privkd/params.hpp"

using namespace privkd;
using namespace privkd::harness;
namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path config;
  fs::path out;
  std::string table = "models";
};

void print_table(const ResultsTable& t) { std::cout << render_report(t, ReportFormat::markdown); }

ResultsTable load_table(const fs::path& file) {
  if (!fs::exists(file))
    throw StageFailed(Stage::report, fmt::format("no results at {}; run evaluate or ablate first", file.string()));
  try {
    return results_from_json(nlohmann::json::parse(read_file(file)));
  } catch (const std::exception& e) {
    throw StageFailed(Stage::report, fmt::format("{}: {}", file.string(), e.what()));
  }
}

int dispatch(const std::string& verb, const Options& opt) {
  RunConfig cfg = load_run_config(opt.config);
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (cfg.output_dir.empty()) throw ConfigError("no output directory: pass --out or set output_dir in the config");
  Pipeline p(cfg, cfg.output_dir);

  const std::map<std::string, std::function<void()>> verbs{
      {"ingest",
       [&] {
         const auto& ds = p.ingest();
         fmt::print("{}: {} train, {} val, {} test, {} classes\n", ds.name, ds.train.size(), ds.val.size(),
                    ds.test.size(), ds.num_classes);
       }},
      {"generate", [&] { fmt::print("{} images\n", p.generate().size()); }},
      {"train-baseline", [&] { p.train_baselines(); }},
      {"train-teacher", [&] { p.train_teachers(); }},
      {"distill", [&] { p.distill_students(); }},
      {"evaluate", [&] { print_table(p.evaluate()); }},
      {"ablate",
       [&] {
         const ResultsTable t = p.ablate();
         p.report(t, "ablation");
         print_table(t);
       }},
      {"report",
       [&] {
         const std::string stem = opt.table == "ablation" ? "ablation" : "results";
         const ResultsTable t = load_table(cfg.output_dir / (stem + ".json"));
         p.report(t, stem);
         print_table(t);
       }},
      {"run", [&] { print_table(p.run()); }},
  };
  verbs.at(verb)();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privileged-information distillation from generated images"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> verbs{
      {"ingest", "load and preprocess the dataset, write the manifest"},
      {"generate", "generate (or reuse) one image per sample"},
      {"train-baseline", "train the text-only and image-only classifiers"},
      {"train-teacher", "train the multimodal teacher"},
      {"distill", "distill the teacher into the text-only student"},
      {"evaluate", "score every trained model on the test split"},
      {"ablate", "train and score the four loss-term variants"},
      {"report", "write csv and markdown reports from stored results"},
      {"run", "the whole pipeline"},
  };
  std::string chosen;
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory (overrides output_dir in the config)");
    if (name == "report")
      sub->add_option("--table", opt.table, "which table to report")->check(CLI::IsMember({"models", "ablation"}));
    sub->callback([&chosen, name = name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return dispatch(chosen, opt);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const StageFailed& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return exit_code(e.stage());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
