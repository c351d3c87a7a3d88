#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxfuse/config.hpp"
#include "ctxfuse/experiment.hpp"

namespace {

struct SubArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  CLI::App* app = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic translation experiments with a frozen context provider"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate the synthetic parallel corpora"},
      {"pretrain-provider", "masked-piece pretraining of the frozen context encoder"},
      {"train", "train a translation model (train.stage = stage1 | stage2 | joint)"},
      {"decode", "beam-search decode a split and score it"},
      {"score", "score an existing hypothesis file against references"},
      {"ablate", "run the full variant comparison matrix"},
      {"dropnet-sweep", "train at p_net in {0, 0.2, 0.4, 0.6, 0.8, 1.0}"},
      {"bench-inference", "compare decode wall time of baseline and fused models"},
  };

  std::map<std::string, SubArgs> args;
  for (const auto& [name, desc] : commands) {
    SubArgs& sa = args[name];
    sa.app = app.add_subcommand(name, desc);
    sa.app->add_option("--config", sa.config_path, "key=value config file");
    sa.app->add_option("--seed", sa.seed, "master seed (overrides the config's seed key)");
    sa.app->add_option("--out", sa.out_dir, "output directory")->required();
    sa.app->add_option("--set", sa.sets, "extra key=value overrides")->take_all();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  try {
    const SubArgs* sel = nullptr;
    std::string sel_name;
    for (auto& [name, sa] : args)
      if (sa.app->parsed()) {
        sel = &sa;
        sel_name = name;
      }
    if (sel == nullptr) throw ctxfuse::ConfigError("no subcommand given");

    ctxfuse::Config cfg;
    if (!sel->config_path.empty()) cfg = ctxfuse::Config::parse_file(sel->config_path);
    for (const auto& kv : sel->sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw ctxfuse::ConfigError("--set needs key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (sel->app->count("--seed") > 0) cfg.set("seed", std::to_string(sel->seed));

    return ctxfuse::run_subcommand(sel_name, std::move(cfg), sel->out_dir);
  } catch (const ctxfuse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
