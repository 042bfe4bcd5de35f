#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cparr/run.hpp"
#include "cparr/version.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Run configuration JSON (partial overrides)");
  cmd->add_option("--out", opts.out_dir, "Run output directory");
  cmd->add_option("--seed", opts.seed, "Master seed override")
      ->each([&opts](const std::string&) { opts.has_seed = true; });
}

cparr::RunConfig resolve(const CommonOpts& opts) {
  return cparr::load_run_config(opts.config_path, opts.seed, opts.has_seed, opts.out_dir);
}

void print_metrics(const nlohmann::json& report) {
  for (const char* role : {"subject", "object"}) {
    std::cout << "  " << role << ":";
    for (auto it = report.at(role).begin(); it != report.at(role).end(); ++it) {
      std::cout << " " << it.key() << "=" << it.value().dump();
    }
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CPARR shapes-world referring-relationships pipeline"};
  app.set_version_flag("--version", std::string(cparr::kVersion));
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, ablate_opts, viz_opts;
  std::string train_stage, eval_mode = "full", viz_mode = "full";
  int viz_count = 8;

  CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic dataset");
  add_common(gen, gen_opts);

  CLI::App* train = app.add_subcommand("train", "Train one pipeline stage");
  add_common(train, train_opts);
  train->add_option("--stage", train_stage, "proposals | predicate")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate on the test split");
  add_common(eval, eval_opts);
  eval->add_option("--mode", eval_mode, "full | cp | pa");

  CLI::App* ablate = app.add_subcommand("ablate", "Predicate-stage ablation table");
  add_common(ablate, ablate_opts);

  CLI::App* viz = app.add_subcommand("visualize", "Render prediction rasters");
  add_common(viz, viz_opts);
  viz->add_option("--mode", viz_mode, "full | cp | pa");
  viz->add_option("-n", viz_count, "Number of queries to render");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const cparr::RunConfig config = resolve(gen_opts);
      const cparr::DatasetStats stats = cparr::run_gen(config);
      std::cout << "dataset: " << config.dataset_dir().string() << "\n"
                << "  scenes=" << stats.scene_count << " queries=" << stats.query_count
                << " ambiguity_rate=" << stats.ambiguity_rate << "\n";
    } else if (train->parsed()) {
      const cparr::RunConfig config = resolve(train_opts);
      cparr::run_train(config, train_stage);
      std::cout << "trained stage: " << train_stage << "\n";
    } else if (eval->parsed()) {
      const cparr::RunConfig config = resolve(eval_opts);
      const nlohmann::json report =
          cparr::run_eval(config, cparr::inference_mode_from_name(eval_mode));
      std::cout << "mode " << eval_mode << " over " << report.at("query_count")
                << " queries:\n";
      print_metrics(report);
    } else if (ablate->parsed()) {
      const cparr::RunConfig config = resolve(ablate_opts);
      const nlohmann::json table = cparr::run_ablate(config);
      std::cout << "ablation (predicate recall):\n";
      for (const char* tbl : {"table4", "table5"}) {
        for (const auto& row : table.at(tbl)) {
          std::cout << "  " << tbl << " " << row.at("row").get<std::string>()
                    << ": r@1=" << row.at("r@1").dump() << " r@5=" << row.at("r@5").dump()
                    << "\n";
        }
      }
    } else if (viz->parsed()) {
      const cparr::RunConfig config = resolve(viz_opts);
      const int rendered =
          cparr::run_visualize(config, cparr::inference_mode_from_name(viz_mode), viz_count);
      if (rendered < viz_count) {
        std::cerr << "warning: only " << rendered << " predictions available\n";
      }
      std::cout << "rendered " << rendered << " rasters under "
                << (config.out() / "viz").string() << "\n";
    }
  } catch (const cparr::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const cparr::PrerequisiteError& e) {
    std::cerr << "error: missing_prerequisite: " << e.what() << "\n";
    return 1;
  } catch (const cparr::DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 1;
  } catch (const cparr::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
