#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "volsup/cli.hpp"

namespace vc = volsup::cli;

int main(int argc, char** argv) {
  CLI::App app{"Pricing and superhedging under volatility uncertainty on scenario trees"};
  std::string mode, config_path, out_path;
  unsigned threads = 0;
  std::uint64_t seed = 0;
  app.add_option("mode", mode, "price | hedge | verify-duality | check-conditions | simulate | pde-crosscheck")
      ->required()
      ->check(CLI::IsMember(vc::modes()));
  app.add_option("--config", config_path, "JSON run configuration")->required();
  auto* out_opt = app.add_option("--out", out_path, "report path (default: outputs.report, else stdout)");
  auto* threads_opt = app.add_option("--threads", threads, "worker cap for simulation")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "simulation / sampling seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return vc::kConfigError;
  }

  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "config error: cannot read " << config_path << "\n";
    return vc::kConfigError;
  }
  std::stringstream text;
  text << in.rdbuf();
  auto parsed = vc::parse_config(text.str());
  if (parsed.ok() && !parsed.config->mode.empty() && parsed.config->mode != mode)
    parsed.errors.push_back("mode: config says \"" + parsed.config->mode + "\" but the command line asks for \"" +
                            mode + "\"");
  if (!parsed.errors.empty()) {
    for (const auto& e : parsed.errors) std::cerr << "config error: " << e << "\n";
    return vc::kConfigError;
  }
  vc::RunConfig cfg = *parsed.config;
  cfg.mode = mode;
  if (*threads_opt) cfg.threads = threads;
  if (*seed_opt) cfg.seed = seed;
  if (*out_opt) cfg.outputs.report = out_path;

  const auto report = vc::run(cfg);
  const std::string body = report.body.dump(2) + "\n";
  if (cfg.outputs.report.empty()) {
    std::cout << body;
  } else {
    std::ofstream os(cfg.outputs.report);
    if (!os) {
      std::cerr << "cannot write report " << cfg.outputs.report << "\n";
      return vc::kConfigError;
    }
    os << body;
  }
  if (report.body.contains("error")) std::cerr << "error: " << report.body["error"].get<std::string>() << "\n";
  for (const auto& inv : report.body["invariants"])
    if (!inv["pass"].get<bool>()) std::cerr << "invariant failed: " << inv["name"].get<std::string>() << "\n";
  return report.exit_code;
}
