// sphar: run, validate and export SPHAR experiments from a config file.
//
//   sphar run configs/mse_beta2.cfg --workers 8
//   sphar validate configs/clt.cfg
//   sphar simulate configs/simulate.cfg --out-dir panel/
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 validation failure.

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sphar.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kInvalid = 2;

struct Loaded {
  sphar::RawConfig raw;
  sphar::ValidationResult result;
};

int load(const std::string& path, Loaded& out) {
  try {
    out.raw = sphar::load_config_file(path);
  } catch (const sphar::ConfigIoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  out.result = sphar::validate_config(out.raw);
  if (!out.result.ok()) {
    std::cerr << path << ": " << out.result.diagnostics.size() << " problem(s)\n";
    for (const auto& d : out.result.diagnostics) std::cerr << "  " << sphar::to_string(d) << '\n';
    return kInvalid;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spherical functional autoregression experiments"};
  app.set_version_flag("--version", sphar::kVersion);
  app.require_subcommand(1);

  unsigned workers = 0;
  std::string out_dir;
  bool quiet = false;
  app.add_option("--workers", workers, "Worker threads (0: all logical cores)")->capture_default_str();
  app.add_option("--out-dir", out_dir, "Override output.directory");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string path;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", path, "Config file")->required();
  auto* validate = app.add_subcommand("validate", "Check a config file without running it");
  validate->add_option("config", path, "Config file")->required();
  auto* simulate = app.add_subcommand("simulate", "Export a simulated coefficient panel");
  simulate->add_option("config", path, "Config file")->required();
  for (auto* sub : {run, validate, simulate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  Loaded cfg;
  if (const int code = load(path, cfg); code != kOk) return code;
  if (*validate) {
    if (!quiet) std::cout << path << ": valid\n";
    return kOk;
  }

  sphar::RunOptions options;
  options.workers = workers;
  options.quiet = quiet;
  if (!out_dir.empty()) options.out_dir = out_dir;
  try {
    const auto command = *simulate ? sphar::Command::simulate : sphar::Command::run;
    const sphar::RunManifest m = sphar::execute(*cfg.result.config, cfg.raw, command, options);
    if (!quiet) {
      std::cout << "wrote";
      for (const auto& f : m.outputs) std::cout << ' ' << f;
      std::cout << " manifest.json\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}
