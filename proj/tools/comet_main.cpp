#include "comet/errors.hpp"
#include "comet/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>

using namespace comet;

int main(int argc, char** argv) {
  comet::retain_heap();
  CLI::App app{"COMET: selector/predictor training with a frozen detector"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  app.add_option("-c,--config", config_file, "key = value config file");
  app.add_option("--set", sets, "override as key=value (repeatable)");
  for (const auto& key : ExperimentConfig::keys()) app.add_option("--" + key, flags[key], "config key " + key);

  using Command = int (*)(const ExperimentConfig&, std::ostream&);
  const std::vector<std::pair<std::string, Command>> commands{
      {"gen-data", cmd_gen_data}, {"pretrain", cmd_pretrain}, {"train", cmd_train},
      {"eval", cmd_eval},         {"ablate", cmd_ablate},     {"report", cmd_report}};
  Command chosen = nullptr;
  for (const auto& [name, fn] : commands)
    app.add_subcommand(name)->callback([&chosen, f = fn] { chosen = f; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    ExperimentConfig config;
    if (!config_file.empty()) config.read_file(config_file);
    for (const auto& key : ExperimentConfig::keys())
      if (app.count("--" + key)) config.set(key, flags[key]);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      config.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return chosen(config, std::cout);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
