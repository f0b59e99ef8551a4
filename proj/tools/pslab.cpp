#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "pslab/cli/commands.hpp"

namespace {

using namespace pslab;

struct Options {
  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<long> workers;
  std::vector<std::string> overrides;
};

cli::Config build_config(const Options& o) {
  cli::Config c;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path, std::ios::binary);
    if (!in) throw IoError("cannot read config file " + o.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    c.load_text(ss.str(), o.config_path);
  }
  for (const auto& kv : o.overrides) c.set_assignment(kv);
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  if (o.workers) c.set("workers", std::to_string(*o.workers));
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pslab: backdoor poisoning laboratory for semi-supervised training"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "key = value config file");
  app.add_option("--out", o.out, "output directory")->capture_default_str();
  app.add_option("--seed", o.seed, "experiment seed (overrides the config)");
  app.add_option("--workers", o.workers, "parallel sweep cells");
  app.add_option("--set", o.overrides, "key=value override, repeatable")->take_all();

  struct Cmd {
    const char* name;
    const char* help;
    std::function<void(const cli::Config&, const cli::Layout&)> run;
  };
  const std::vector<Cmd> cmds = {
      {"gen-data", "generate train/test sets and the labeled split",
       [](auto& c, auto& l) { cli::cmd_gen_data(c, l, std::cout); }},
      {"train-surrogate", "train the supervised surrogate model",
       [](auto& c, auto& l) { cli::cmd_train_surrogate(c, l, std::cout); }},
      {"attack", "poison the unlabeled pool and write the manifest",
       [](auto& c, auto& l) { cli::cmd_attack(c, l, std::cout); }},
      {"run", "train on the (poisoned) data and write trace, metrics and plots",
       [](auto& c, auto& l) { cli::cmd_run(c, l, std::cout); }},
      {"sweep", "run the configured grid and aggregate per cell",
       [](auto& c, auto& l) { cli::cmd_sweep(c, l, std::cout); }},
      {"profile", "predicted-label profile of modified samples",
       [](auto& c, auto& l) { cli::cmd_profile(c, l, std::cout); }},
  };
  std::vector<CLI::App*> subs;
  for (const auto& cmd : cmds) subs.push_back(app.add_subcommand(cmd.name, cmd.help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const auto config = build_config(o);
    const cli::Layout layout{o.out};
    for (std::size_t i = 0; i < cmds.size(); ++i)
      if (subs[i]->parsed()) cmds[i].run(config, layout);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
