#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "rspnet/analysis.hpp"
#include "rspnet/data.hpp"
#include "rspnet/error.hpp"
#include "rspnet/kernels.hpp"
#include "rspnet/selftest.hpp"
#include "rspnet/trainer.hpp"

using namespace rspnet;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--set", c.sets, "override one config entry, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "seed for every random stream");
}

SearchConfig resolve(const Common& c) {
  SearchConfig cfg = c.config.empty() ? SearchConfig{} : load_config(c.config);
  for (const auto& s : c.sets) cfg = parse_config(s, cfg);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void print_summary(std::int64_t params, double miou) { std::printf("params=%lld miou=%.6f\n", static_cast<long long>(params), miou); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rspnet: cell and path search for segmentation networks"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth-data", "write a synthetic segmentation dataset");
  std::string synth_out;
  std::int64_t synth_count = 200, synth_size = 64;
  add_common(synth, common);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of samples");
  synth->add_option("--size", synth_size, "image side length");

  auto* scell = app.add_subcommand("search-cell", "stage 1: search the cell genotype");
  std::string data_dir, genotype_path, macro_path, log_path, model_path, val_dir;
  add_common(scell, common);
  scell->add_option("--data", data_dir, "training dataset directory")->required();
  scell->add_option("--out", genotype_path, "genotype output file")->required();
  scell->add_option("--log", log_path, "metrics CSV output");

  auto* spath = app.add_subcommand("search-paths", "stage 2: search the input paths of each layer");
  add_common(spath, common);
  spath->add_option("--data", data_dir, "training dataset directory")->required();
  spath->add_option("--genotype", genotype_path, "genotype file")->required();
  spath->add_option("--out", macro_path, "macro genotype output file")->required();
  spath->add_option("--log", log_path, "metrics CSV output");

  auto* train = app.add_subcommand("train", "train the final network");
  add_common(train, common);
  train->add_option("--data", data_dir, "training dataset directory")->required();
  train->add_option("--val", val_dir, "validation dataset directory")->required();
  train->add_option("--genotype", genotype_path, "genotype file")->required();
  train->add_option("--macro", macro_path, "macro genotype file")->required();
  train->add_option("--model", model_path, "model output file");
  train->add_option("--log", log_path, "metrics CSV output");

  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_common(eval, common);
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();

  auto* flow = app.add_subcommand("grad-flow", "gradient norms through a deep 1x1 conv chain");
  int flow_depth = 20;
  std::string flow_act = "sigmoid", flow_arch = "plain";
  add_common(flow, common);
  flow->add_option("--depth", flow_depth, "number of layers");
  flow->add_option("--activation", flow_act, "sigmoid | relu");
  flow->add_option("--arch", flow_arch, "plain | residual | csp");

  auto* count = app.add_subcommand("count-params", "parameter counts with and without RSP");
  add_common(count, common);
  count->add_option("--genotype", genotype_path, "genotype file")->required();
  count->add_option("--macro", macro_path, "macro genotype file (default: most recent k inputs)");

  auto* self = app.add_subcommand("selftest", "gradient checks and invariant suite");
  add_common(self, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    kernels::configure_threads_from_env();
    const SearchConfig cfg = resolve(common);
    if (*synth) {
      save_dataset(synth_dataset(cfg.seed, synth_count, synth_size, cfg.num_classes), synth_out);
    } else if (*scell) {
      MetricsLog log;
      const auto r = stage1_cell_search(load_dataset(data_dir), cfg, &log);
      save_genotype(r.genotype, genotype_path);
      if (!log_path.empty()) log.write_csv(log_path);
    } else if (*spath) {
      MetricsLog log;
      const auto r = stage2_path_search(load_dataset(data_dir), load_genotype(genotype_path), cfg, &log);
      save_macro(r.macro, macro_path);
      if (!log_path.empty()) log.write_csv(log_path);
    } else if (*train) {
      MetricsLog log;
      const auto r = train_final(load_dataset(data_dir), load_dataset(val_dir), load_genotype(genotype_path),
                                 load_macro(macro_path), cfg, &log);
      if (!model_path.empty()) save_model(*r.model, model_path);
      if (!log_path.empty()) log.write_csv(log_path);
      print_summary(r.params, r.final_miou.mean);
    } else if (*eval) {
      const SegNet<float> net = load_model(model_path);
      const Dataset data = load_dataset(data_dir);
      validate_labels(data, net.config().num_classes);
      print_summary(net.weights().total(), evaluate_miou(net, data, net.config().batch_size).mean);
    } else if (*flow) {
      std::cout << grad_flow_report(flow_depth, parse_flow_activation(flow_act), parse_flow_arch(flow_arch), cfg.seed)
                       .table();
    } else if (*count) {
      const Genotype g = load_genotype(genotype_path);
      const auto rep = macro_path.empty() ? count_params_report(g, cfg)
                                          : count_params_report(g, cfg, load_macro(macro_path));
      std::cout << rep.table();
    } else if (*self) {
      const auto results = run_selftest(cfg.seed);
      bool ok = true;
      for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
      }
      return ok ? 0 : 2;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
