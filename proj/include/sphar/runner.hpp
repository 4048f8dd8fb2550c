#pragma once

// Executes a validated ExperimentConfig: dispatches to the harness, writes
// CSV reports and manifest.json into the output directory.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sphar/analysis.hpp"
#include "sphar/config.hpp"
#include "sphar/estimate.hpp"
#include "sphar/harmonics.hpp"
#include "sphar/simulate.hpp"
#include "sphar/version.hpp"

namespace sphar {

/// Writing an output file failed.
class OutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  unsigned workers = 0;  // 0: all logical cores
  std::optional<std::string> out_dir;
  bool quiet = false;
  std::ostream* log = &std::cout;
};

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::string version = kVersion;
  std::uint64_t seed = 0;
  std::string kind;
  unsigned workers = 1;
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"config_hash", hex64(m.config_hash)},
          {"version", m.version},
          {"seed", m.seed},
          {"kind", m.kind},
          {"workers", m.workers},
          {"started", m.started},
          {"finished", m.finished},
          {"outputs", m.outputs}};
}

namespace detail {

class OutputSink {
 public:
  OutputSink(std::filesystem::path dir, RunManifest& manifest)
      : dir_(std::move(dir)), manifest_(manifest) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw OutputError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  template <class Writer>
  void write(const std::string& name, Writer&& writer) {
    const auto path = dir_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw OutputError("cannot open '" + path.string() + "' for writing");
    writer(out);
    out.flush();
    if (!out) throw OutputError("error writing '" + path.string() + "'");
    manifest_.outputs.push_back(name);
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  RunManifest& manifest_;
};

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void run_mse(const ExperimentConfig& cfg, const HarnessOptions& opt, OutputSink& sink,
                    std::ostream& log, bool quiet) {
  const MSEReport report = run_mse_experiment(*cfg.model, cfg.N, cfg.policy, cfg.B, cfg.seed, opt);
  sink.write("mse.csv", [&](std::ostream& os) { write_mse_csv(os, report); });
  sink.write("mse_raw.csv", [&](std::ostream& os) {
    os << "N,L_N,variance,bias,mse,sup_error,replications,failures\n";
    for (const MSERow& r : report.rows) {
      os << r.N << ',' << r.truncation << ',' << fmt("%.17g", r.variance) << ','
         << fmt("%.17g", r.bias) << ',' << fmt("%.17g", r.mse) << ',' << fmt("%.17g", r.sup_error)
         << ',' << r.replications << ',' << r.failures << '\n';
    }
  });
  if (!quiet) {
    for (const MSERow& r : report.rows) {
      log << "N=" << r.N << " L_N=" << r.truncation << " mse=" << fmt("%.5g", r.mse)
          << " failures=" << r.failures << '\n';
    }
    if (report.rows.size() >= 2) log << "log-log MSE slope: " << fmt("%.3f", mse_slope(report)) << '\n';
  }
}

inline void run_clt(const ExperimentConfig& cfg, const HarnessOptions& opt, OutputSink& sink,
                    std::ostream& log, bool quiet) {
  const CLTReport report =
      run_clt_experiment(*cfg.model, cfg.N, cfg.policy, cfg.locations, cfg.B, cfg.seed, opt);
  sink.write("clt.csv", [&](std::ostream& os) { write_clt_csv(os, report, "%.2f"); });
  sink.write("clt_raw.csv", [&](std::ostream& os) { write_clt_csv(os, report, "%.6f"); });
  sink.write("clt_correlations.csv", [&](std::ostream& os) {
    os << "N,component,z_i,z_j,correlation\n";
    for (const CltBlock& b : report.blocks) {
      const auto& z = b.samples.locations;
      for (std::size_t j = 0; j < b.correlations.size(); ++j)
        for (std::size_t i = 0; i < z.size(); ++i)
          for (std::size_t k = i + 1; k < z.size(); ++k)
            os << b.samples.N << ',' << (j + 1) << ',' << fmt("%g", z[i]) << ',' << fmt("%g", z[k])
               << ',' << fmt("%.6f", b.correlations[j](i, k)) << '\n';
    }
  });
  if (!quiet) {
    for (const CltBlock& b : report.blocks) {
      double worst = 0.0;
      for (double w : b.wasserstein) worst = std::max(worst, w);
      log << "N=" << b.samples.N << " L_N=" << b.samples.truncation
          << " max W1=" << fmt("%.4f", worst) << " failures=" << b.samples.failures << '\n';
    }
  }
}

inline void run_plugin(const ExperimentConfig& cfg, const HarnessOptions& opt, OutputSink& sink,
                       std::ostream& log, bool quiet) {
  const PluginReport report = run_plugin_experiment(*cfg.model, cfg.n, cfg.B, cfg.l_min, cfg.l_max,
                                                    cfg.variant, cfg.seed, opt);
  sink.write("plugin.csv", [&](std::ostream& os) {
    os << "replication,beta_hat,d_star,status\n";
    for (std::size_t b = 0; b < report.runs.size(); ++b) {
      const PluginRun& r = report.runs[b];
      os << b << ',' << fmt("%.17g", r.beta_hat) << ',' << fmt("%.17g", r.d_star) << ','
         << (r.ok ? "ok" : "failed") << '\n';
    }
  });
  if (!quiet) log << "plug-in fits: " << report.successes() << "/" << report.runs.size() << " succeeded\n";
}

inline void run_hilb(const ExperimentConfig& cfg, OutputSink& sink, std::ostream& log, bool quiet) {
  const double z = std::cos(cfg.theta);
  const double limit = 2.0 / (kPi * std::sin(cfg.theta));
  const bool cross = cfg.theta2 > 0.0;
  const double w = cross ? std::cos(cfg.theta2) : 0.0;
  sink.write("hilb.csv", [&](std::ostream& os) {
    os << "L,theta,average,limit,ratio" << (cross ? ",theta2,cross" : "") << '\n';
    for (int L : cfg.L) {
      const double avg = hilb_average(z, z, L);
      os << L << ',' << fmt("%.17g", cfg.theta) << ',' << fmt("%.17g", avg) << ','
         << fmt("%.17g", limit) << ',' << fmt("%.17g", avg / limit);
      if (cross) os << ',' << fmt("%.17g", cfg.theta2) << ',' << fmt("%.17g", hilb_average(z, w, L));
      os << '\n';
      if (!quiet) {
        log << "L=" << L << " ratio to 2/(pi sin theta): " << fmt("%.6f", avg / limit);
        if (cross) log << " cross-term: " << fmt("%.6g", hilb_average(z, w, L));
        log << '\n';
      }
    }
  });
}

inline void export_panel(const ExperimentConfig& cfg, unsigned workers, OutputSink& sink,
                         std::ostream& log, bool quiet) {
  SimulationPlan plan{*cfg.model, cfg.n, cfg.sim_degree_max, cfg.seed, cfg.init, 0, 0};
  const CoefficientPanel panel = simulate_panel(plan, workers);
  sink.write("panel.csv", [&](std::ostream& os) { write_panel_csv(os, panel); });
  if (cfg.has_policy) {
    const KernelEstimate est = estimate_kernel(panel, cfg.policy, cfg.model->order());
    sink.write("estimate.csv", [&](std::ostream& os) { write_estimate_csv(os, est, cfg.seed); });
  }
  if (!quiet) {
    log << "panel: ell <= " << panel.degree_max() << ", n = " << panel.length() << '\n';
  }
}

}  // namespace detail

enum class Command { run, simulate };

/// Runs a validated configuration. `raw` is the parsed document the config
/// came from (used for the manifest hash).
inline RunManifest execute(const ExperimentConfig& cfg, const RawConfig& raw, Command command,
                           const RunOptions& options = {}) {
  RunManifest manifest;
  manifest.config_hash = config_hash(raw);
  manifest.seed = cfg.seed;
  manifest.kind = command == Command::simulate ? "simulate" : to_string(cfg.kind);
  manifest.workers = options.workers == 0 ? default_workers() : options.workers;
  manifest.started = utc_timestamp();

  const std::filesystem::path dir = options.out_dir ? *options.out_dir : cfg.directory;
  detail::OutputSink sink(dir, manifest);
  std::ostream& log = *options.log;
  HarnessOptions hopt;
  hopt.workers = manifest.workers;
  hopt.init = cfg.init;
  hopt.grid_resolution = cfg.grid;

  if (command == Command::simulate) {
    if (!cfg.model || cfg.n <= 0 || cfg.sim_degree_max < 0) {
      throw DomainError("simulate needs a model, simulation.n and simulation.degree_max");
    }
    detail::export_panel(cfg, manifest.workers, sink, log, options.quiet);
  } else {
    switch (cfg.kind) {
      case ExperimentKind::mse: detail::run_mse(cfg, hopt, sink, log, options.quiet); break;
      case ExperimentKind::clt: detail::run_clt(cfg, hopt, sink, log, options.quiet); break;
      case ExperimentKind::plugin: detail::run_plugin(cfg, hopt, sink, log, options.quiet); break;
      case ExperimentKind::simulate:
        detail::export_panel(cfg, manifest.workers, sink, log, options.quiet);
        break;
      case ExperimentKind::hilb_check: detail::run_hilb(cfg, sink, log, options.quiet); break;
    }
  }

  manifest.finished = utc_timestamp();
  const auto path = sink.dir() / "manifest.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_json(manifest).dump(2) << '\n';
  if (!out) throw OutputError("error writing '" + path.string() + "'");
  return manifest;
}

}  // namespace sphar
