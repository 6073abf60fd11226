#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "fadapt/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fadapt: turbulence-robust face embedding experiments"};
  app.set_version_flag("--version", std::string(fadapt::kVersion));
  std::string command, config;
  std::vector<std::string> sets;
  std::string out;
  bool quiet = false;
  app.add_option("command", command, "synth | degrade | restore | pretrain | train | eval | ablate | gradcheck")
      ->required()
      ->check(CLI::IsMember(fadapt::commands()));
  app.add_option("--config", config, "run configuration (JSON)")->required();
  app.add_option("--set", sets, "override, section.key=value (repeatable)");
  app.add_option("--out", out, "output directory (overrides output_dir)");
  app.add_flag("-q,--quiet", quiet, "print only the report path");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : fadapt::exit_code::config;
  }
  try {
    auto cfg = fadapt::resolve_config(config, sets, out.empty() ? std::nullopt : std::optional<std::string>(out),
                                      std::getenv("FADAPT_SEED"));
    auto r = fadapt::run_command(command, cfg, quiet ? nullptr : &std::cerr);
    const auto path = fadapt::Layout{cfg.output_dir}.report(command + ".json");
    if (!quiet) std::cout << fadapt::report_text(r.report);
    std::cout << "report: " << path.string() << "\n";
    if (r.status == fadapt::exit_code::numerical) std::cerr << "error: gradient check above tolerance\n";
    return r.status;
  } catch (const fadapt::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return fadapt::exit_code::dependency;
  } catch (const std::exception& e) {
    const int rc = fadapt::exit_code_for(e);
    const char* kind = rc == fadapt::exit_code::config      ? "config error"
                       : rc == fadapt::exit_code::numerical ? "numerical error"
                                                            : "error";
    std::cerr << kind << ": " << e.what() << "\n";
    return rc;
  }
}
