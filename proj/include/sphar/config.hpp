#pragma once

// Experiment configuration: a line-oriented document of dotted keys.
//
//   # comment
//   model.family = power_law
//   model.phi.3 = 0.2, -0.1        # explicit tables use one key per ell
//   simulation.N = 100, 300, 700
//
// Blank lines and text after '#' are ignored, keys are case-sensitive and
// may appear once. Lists are comma separated. See README.md for every key.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sphar/analysis.hpp"
#include "sphar/errors.hpp"
#include "sphar/estimate.hpp"
#include "sphar/model.hpp"
#include "sphar/simulate.hpp"

namespace sphar {

struct Diagnostic {
  std::string key;
  std::string message;
};

inline std::string to_string(const Diagnostic& d) {
  return d.key.empty() ? d.message : d.key + ": " + d.message;
}

/// Unreadable config file; distinct from validation failures.
class ConfigIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawConfig {
  std::map<std::string, std::string> entries;
  std::vector<Diagnostic> syntax;  // malformed lines, duplicates

  bool has(const std::string& key) const { return entries.count(key) != 0; }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool valid_key(std::string_view k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  for (char c : k) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.';
    if (!ok) return false;
  }
  return k.find("..") == std::string_view::npos;
}

inline std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = v.find(',', start);
    out.emplace_back(trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

/// List values are normalised to "a, b, c" so serialisation is canonical.
inline std::string normalise_value(std::string_view v) {
  const auto items = split_list(v);
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

}  // namespace detail

inline RawConfig parse_config_text(std::string_view text) {
  RawConfig raw;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      raw.syntax.push_back({where, "expected 'key = value'"});
      continue;
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (!detail::valid_key(key)) {
      raw.syntax.push_back({where, "invalid key '" + key + "'"});
      continue;
    }
    if (value.empty()) {
      raw.syntax.push_back({key, "empty value (" + where + ")"});
      continue;
    }
    if (!raw.entries.emplace(key, detail::normalise_value(value)).second) {
      raw.syntax.push_back({key, "duplicate key (" + where + ")"});
    }
  }
  return raw;
}

inline RawConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigIoError("cannot read config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw ConfigIoError("error reading config file '" + path + "'");
  return parse_config_text(buf.str());
}

/// Canonical text: keys sorted, one `key = value` per line.
inline std::string serialize(const RawConfig& raw) {
  std::string out;
  for (const auto& [k, v] : raw.entries) out += k + " = " + v + "\n";
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const RawConfig& raw) { return fnv1a(serialize(raw)); }

// ---------------------------------------------------------------------------

enum class ExperimentKind { mse, clt, plugin, simulate, hilb_check };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::mse: return "mse";
    case ExperimentKind::clt: return "clt";
    case ExperimentKind::plugin: return "plugin";
    case ExperimentKind::simulate: return "simulate";
    case ExperimentKind::hilb_check: return "hilb-check";
  }
  return "?";
}

struct ExperimentConfig {
  // model
  std::string family;
  std::optional<SpharModel> model;

  // simulation
  int n = 0;
  std::vector<long long> N;
  int sim_degree_max = -1;
  Initialization init{};

  // estimation
  TruncationPolicy policy = TruncationPolicy::fixed(0);
  bool has_policy = false;

  // experiment
  ExperimentKind kind = ExperimentKind::mse;
  int B = 0;
  std::uint64_t seed = 0;
  std::vector<double> locations;
  double theta = 0.0;
  std::vector<int> L;
  double theta2 = -1.0;  // optional second angle for the cross-term check
  int l_min = 0;
  int l_max = 0;
  PluginVariant variant = PluginVariant::demeaned;
  int grid = 2001;

  // output
  std::string directory = "out";
  std::vector<std::string> formats{"csv"};
};

struct ValidationResult {
  std::optional<ExperimentConfig> config;
  std::vector<Diagnostic> diagnostics;
  bool ok() const { return diagnostics.empty(); }
};

namespace detail {

/// Typed access to a RawConfig that records every problem instead of
/// stopping at the first, and remembers which keys were consumed.
class ConfigReader {
 public:
  explicit ConfigReader(const RawConfig& raw) : raw_(raw) {}

  std::vector<Diagnostic>& diagnostics() { return diags_; }
  void error(const std::string& key, const std::string& msg) { diags_.push_back({key, msg}); }

  bool has(const std::string& key) const { return raw_.has(key); }

  const std::string* text(const std::string& key) {
    const auto it = raw_.entries.find(key);
    if (it == raw_.entries.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  std::optional<std::string> string(const std::string& key, bool required) {
    const std::string* v = text(key);
    if (!v) {
      if (required) error(key, "missing required key");
      return std::nullopt;
    }
    return *v;
  }

  template <class T>
  std::optional<T> number(const std::string& key, bool required) {
    const std::string* v = text(key);
    if (!v) {
      if (required) error(key, "missing required key");
      return std::nullopt;
    }
    T out{};
    if (!parse_number(*v, out)) {
      error(key, "expected " + std::string(type_name<T>()) + ", got '" + *v + "'");
      return std::nullopt;
    }
    return out;
  }

  template <class T>
  std::optional<std::vector<T>> list(const std::string& key, bool required) {
    const std::string* v = text(key);
    if (!v) {
      if (required) error(key, "missing required key");
      return std::nullopt;
    }
    std::vector<T> out;
    for (const std::string& item : split_list(*v)) {
      T x{};
      if (!parse_number(item, x)) {
        error(key, "expected a list of " + std::string(type_name<T>()) + ", got '" + *v + "'");
        return std::nullopt;
      }
      out.push_back(x);
    }
    return out;
  }

  /// Keys starting with `prefix` (e.g. "model.phi.").
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (auto it = raw_.entries.lower_bound(prefix);
         it != raw_.entries.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it) {
      out.push_back(it->first);
    }
    return out;
  }

  void report_unused() {
    for (const auto& [k, v] : raw_.entries) {
      if (!used_.count(k)) error(k, "unknown or unused key for this configuration");
    }
  }

 private:
  template <class T>
  static constexpr const char* type_name() {
    if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
    else return "an integer";
  }

  template <class T>
  static bool parse_number(const std::string& s, T& out) {
    if (s.empty()) return false;
    if constexpr (std::is_floating_point_v<T>) {
      // strtod rather than from_chars for portability of the float overload
      char* end = nullptr;
      out = std::strtod(s.c_str(), &end);
      return end == s.c_str() + s.size() && std::isfinite(out);
    } else {
      const char* b = s.data();
      if (std::is_unsigned_v<T> && *b == '+') ++b;
      const auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), out);
      return ec == std::errc() && ptr == s.data() + s.size();
    }
  }

  const RawConfig& raw_;
  std::vector<Diagnostic> diags_;
  std::set<std::string> used_;
};

inline bool parse_ell_suffix(const std::string& key, const std::string& prefix, int& ell) {
  const std::string tail = key.substr(prefix.size());
  const auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), ell);
  return ec == std::errc() && ptr == tail.data() + tail.size() && ell >= 0;
}

inline void read_model(ConfigReader& r, ExperimentConfig& cfg) {
  const auto family = r.string("model.family", true);
  const int order = r.number<int>("model.order", false).value_or(1);
  const double margin = r.number<double>("model.margin", false).value_or(kDefaultMargin);
  if (order < 1) r.error("model.order", "must be >= 1");
  if (!(margin > 0.0)) r.error("model.margin", "must be > 0");
  if (!family) return;
  cfg.family = *family;

  if (*family == "explicit") {
    std::map<int, std::vector<double>> phi;
    std::map<int, double> noise;
    bool ok = order >= 1;
    for (const std::string& key : r.keys_with_prefix("model.phi.")) {
      int ell = -1;
      if (!parse_ell_suffix(key, "model.phi.", ell)) {
        r.text(key);
        r.error(key, "expected model.phi.<ell> with integer ell >= 0");
        ok = false;
        continue;
      }
      const auto v = r.list<double>(key, true);
      if (!v) {
        ok = false;
        continue;
      }
      if (static_cast<int>(v->size()) != order) {
        r.error(key, "expected " + std::to_string(order) + " coefficients, got " +
                         std::to_string(v->size()));
        ok = false;
        continue;
      }
      phi[ell] = *v;
    }
    for (const std::string& key : r.keys_with_prefix("model.noise.")) {
      int ell = -1;
      if (!parse_ell_suffix(key, "model.noise.", ell)) {
        r.text(key);
        r.error(key, "expected model.noise.<ell> with integer ell >= 0");
        ok = false;
        continue;
      }
      const auto v = r.number<double>(key, true);
      if (!v) {
        ok = false;
        continue;
      }
      if (!(*v > 0.0)) {
        r.error(key, "innovation variance must be > 0");
        ok = false;
      }
      noise[ell] = *v;
    }
    if (phi.empty()) {
      r.error("model.phi", "explicit family needs model.phi.<ell> entries");
      return;
    }
    const int top = std::max(phi.rbegin()->first, noise.empty() ? 0 : noise.rbegin()->first);
    if (const auto dm = r.number<int>("model.degree_max", false); dm && *dm != top) {
      r.error("model.degree_max", "does not match the highest tabulated ell (" +
                                      std::to_string(top) + ")");
      ok = false;
    }
    for (int ell = 0; ell <= top; ++ell) {
      if (!phi.count(ell)) {
        r.error("model.phi." + std::to_string(ell), "missing (tables must cover ell = 0.." +
                                                        std::to_string(top) + ")");
        ok = false;
      }
      if (!noise.count(ell)) {
        r.error("model.noise." + std::to_string(ell), "missing (tables must cover ell = 0.." +
                                                          std::to_string(top) + ")");
        ok = false;
      }
    }
    if (!ok) return;
    for (const auto& [ell, coef] : phi) {
      const StationarityReport rep = check_stationarity(coef, margin > 0.0 ? margin : kDefaultMargin);
      if (!rep.stationary) {
        std::ostringstream msg;
        msg << "not stationary at ell=" << ell << ": min root modulus " << rep.min_root_modulus
            << " <= 1 + margin (" << margin << ")";
        r.error("model.phi." + std::to_string(ell), msg.str());
        ok = false;
      }
    }
    if (!ok || !(margin > 0.0)) return;
    std::vector<std::vector<double>> phi_table;
    std::vector<double> noise_table;
    for (int ell = 0; ell <= top; ++ell) {
      phi_table.push_back(phi[ell]);
      noise_table.push_back(noise[ell]);
    }
    try {
      cfg.model.emplace(order, phi_table, noise_table, margin);
    } catch (const std::exception& e) {
      r.error("model", e.what());
    }
  } else if (*family == "cupola" || *family == "power_law") {
    ParametricFamily fam;
    fam.shape = *family == "cupola" ? FamilyShape::cupola : FamilyShape::power_law;
    fam.order = order;
    fam.margin = margin;
    if (const auto w = r.list<double>("model.lag_weights", order > 1)) fam.lag_weights = *w;
    const int degree_max = r.number<int>("model.degree_max", false).value_or(20000);
    if (degree_max < 0) r.error("model.degree_max", "must be >= 0");
    if (fam.shape == FamilyShape::cupola) {
      fam.G = r.number<double>("model.G", true).value_or(fam.G);
      fam.l_star = r.number<int>("model.l_star", false).value_or(0);
      fam.alpha_phi = r.number<double>("model.alpha_phi", true).value_or(fam.alpha_phi);
    } else {
      fam.gamma = r.number<double>("model.gamma", true).value_or(fam.gamma);
      fam.beta = r.number<double>("model.beta", true).value_or(fam.beta);
      fam.cap = r.number<double>("model.cap", false).value_or(fam.cap);
    }
    fam.G_Z = r.number<double>("model.G_Z", false).value_or(1.0);
    fam.alpha_Z = r.number<double>("model.alpha_Z", true).value_or(fam.alpha_Z);
    const auto violations = fam.range_violations();
    for (const std::string& v : violations) {
      r.error("model." + v.substr(0, v.find(' ')), "range violation: " + v);
    }
    if (!violations.empty() || degree_max < 0) return;
    try {
      cfg.model.emplace(build_parametric(fam, degree_max));
    } catch (const std::exception& e) {
      r.error("model", e.what());
    }
  } else {
    r.error("model.family", "unknown family '" + *family + "' (cupola, power_law, explicit)");
    return;
  }

  if (cfg.model && !cfg.model->order_identified()) {
    r.error("model.phi", "order not identified: phi_{ell;p} = 0 at every ell for p = " +
                             std::to_string(order));
  }
}

inline void read_policy(ConfigReader& r, ExperimentConfig& cfg, bool required) {
  const auto policy = r.string("estimation.policy", required);
  const auto order = r.number<int>("estimation.order", false);
  if (order && cfg.model && *order != cfg.model->order()) {
    r.error("estimation.order", "must equal model.order (" + std::to_string(cfg.model->order()) + ")");
  }
  if (!policy) return;
  if (*policy == "fixed") {
    const auto L = r.number<int>("estimation.L", true);
    if (L && *L < 0) r.error("estimation.L", "must be >= 0");
    if (L) cfg.policy = TruncationPolicy::fixed(*L);
  } else if (*policy == "rate") {
    const double c = r.number<double>("estimation.c", false).value_or(1.0);
    const auto d = r.number<double>("estimation.d", true);
    if (!(c > 0.0)) r.error("estimation.c", "must be > 0");
    if (d && !(*d > 0.0 && *d < 1.0)) r.error("estimation.d", "must lie in (0, 1)");
    if (d) cfg.policy = TruncationPolicy::rate(c, *d);
  } else {
    r.error("estimation.policy", "expected 'fixed' or 'rate', got '" + *policy + "'");
    return;
  }
  cfg.has_policy = true;
}

inline void read_init(ConfigReader& r, ExperimentConfig& cfg) {
  const std::string init = r.string("simulation.init", false).value_or("stationary");
  const auto burn = r.number<int>("simulation.burn_in", false);
  if (init == "stationary") {
    if (burn) r.error("simulation.burn_in", "only valid with simulation.init = burn_in");
  } else if (init == "burn_in") {
    if (burn && *burn < 0) r.error("simulation.burn_in", "must be >= 0");
    cfg.init = Initialization::with_burn_in(burn.value_or(0));
  } else {
    r.error("simulation.init", "expected 'stationary' or 'burn_in', got '" + init + "'");
  }
}

}  // namespace detail

/// Full validation: every problem is reported, model invariants included.
inline ValidationResult validate_config(const RawConfig& raw) {
  ValidationResult result;
  result.diagnostics = raw.syntax;
  detail::ConfigReader r(raw);
  ExperimentConfig cfg;

  const auto kind = r.string("experiment.kind", true);
  if (kind) {
    if (*kind == "mse") cfg.kind = ExperimentKind::mse;
    else if (*kind == "clt") cfg.kind = ExperimentKind::clt;
    else if (*kind == "plugin") cfg.kind = ExperimentKind::plugin;
    else if (*kind == "simulate") cfg.kind = ExperimentKind::simulate;
    else if (*kind == "hilb-check") cfg.kind = ExperimentKind::hilb_check;
    else r.error("experiment.kind", "unknown kind '" + *kind + "' (mse, clt, plugin, simulate, hilb-check)");
  }

  if (const auto seed = r.number<std::uint64_t>("experiment.seed", false)) {
    cfg.seed = *seed;
  } else if (!raw.has("experiment.seed")) {
    r.error("experiment.seed", "missing required key (runs never draw entropy implicitly)");
  }

  cfg.directory = r.string("output.directory", false).value_or(cfg.directory);
  if (const auto f = r.string("output.formats", false)) {
    cfg.formats = detail::split_list(*f);
    for (const std::string& x : cfg.formats)
      if (x != "csv") r.error("output.formats", "unsupported format '" + x + "' (csv)");
  }

  if (kind && cfg.kind == ExperimentKind::hilb_check) {
    const auto theta = r.number<double>("experiment.theta", true);
    if (theta && !(*theta > 0.0 && *theta < kPi)) r.error("experiment.theta", "must lie in (0, pi)");
    if (theta) cfg.theta = *theta;
    if (const auto t2 = r.number<double>("experiment.theta2", false)) {
      if (!(*t2 > 0.0 && *t2 < kPi)) r.error("experiment.theta2", "must lie in (0, pi)");
      cfg.theta2 = *t2;
    }
    if (const auto L = r.list<int>("experiment.L", true)) {
      cfg.L = *L;
      for (int x : cfg.L)
        if (x < 0) r.error("experiment.L", "degrees must be >= 0");
    }
    r.report_unused();
    result.diagnostics.insert(result.diagnostics.end(), r.diagnostics().begin(), r.diagnostics().end());
    if (result.ok()) result.config = std::move(cfg);
    return result;
  }

  detail::read_model(r, cfg);
  detail::read_init(r, cfg);
  const int p = cfg.model ? cfg.model->order() : 1;
  const int model_top = cfg.model ? cfg.model->degree_max() : -1;

  auto check_level = [&](int level, const std::string& key) {
    if (cfg.model && level > model_top) {
      r.error(key, "truncation level " + std::to_string(level) + " exceeds model.degree_max (" +
                       std::to_string(model_top) + ")");
    }
  };
  auto read_B = [&](bool required) {
    const auto B = r.number<int>("experiment.B", required);
    if (B && *B < 1) r.error("experiment.B", "must be >= 1");
    if (B) cfg.B = *B;
  };

  if (!kind) {
    // nothing more can be checked sensibly
  } else if (cfg.kind == ExperimentKind::mse || cfg.kind == ExperimentKind::clt) {
    if (const auto Ns = r.list<long long>("simulation.N", true)) {
      cfg.N = *Ns;
      for (long long N : cfg.N)
        if (N <= p || N > 100000000) r.error("simulation.N", "each N must satisfy p < N <= 1e8");
    }
    detail::read_policy(r, cfg, true);
    read_B(true);
    if (cfg.has_policy)
      for (long long N : cfg.N)
        if (N > p) check_level(cfg.policy.level_for(N), "estimation.policy");
    if (cfg.kind == ExperimentKind::mse) {
      cfg.grid = r.number<int>("experiment.grid", false).value_or(2001);
      if (cfg.grid < 2) r.error("experiment.grid", "must be >= 2");
    } else if (const auto loc = r.list<double>("experiment.locations", true)) {
      cfg.locations = *loc;
      try {
        require_open_distinct(cfg.locations, "experiment.locations");
      } catch (const DomainError&) {
        r.error("experiment.locations", "locations must be distinct and lie in (-1, 1)");
      }
    }
  } else if (cfg.kind == ExperimentKind::plugin) {
    const auto n = r.number<int>("simulation.n", true);
    if (n && *n <= p) r.error("simulation.n", "must exceed the order");
    if (n) cfg.n = *n;
    read_B(true);
    const auto lo = r.number<int>("experiment.l_min", true);
    const auto hi = r.number<int>("experiment.l_max", true);
    if (lo && *lo < 2) r.error("experiment.l_min", "must be >= 2");
    if (lo && hi && *hi <= *lo) r.error("experiment.l_max", "must exceed experiment.l_min");
    if (lo) cfg.l_min = *lo;
    if (hi) {
      cfg.l_max = *hi;
      check_level(*hi, "experiment.l_max");
    }
    const std::string variant = r.string("experiment.variant", false).value_or("demeaned");
    if (variant == "demeaned") cfg.variant = PluginVariant::demeaned;
    else if (variant == "paper_raw") cfg.variant = PluginVariant::paper_raw;
    else r.error("experiment.variant", "expected 'demeaned' or 'paper_raw'");
    if (cfg.model && p != 1) r.error("model.order", "plugin experiments need order 1");
  }

  // Panel export is available for every kind; its keys are optional unless
  // the kind is simulate.
  const bool sim = kind && cfg.kind == ExperimentKind::simulate;
  if (!(kind && cfg.kind == ExperimentKind::plugin)) {
    if (const auto n = r.number<int>("simulation.n", sim)) {
      if (*n <= p) r.error("simulation.n", "must exceed the order");
      cfg.n = *n;
    }
  }
  if (const auto dm = r.number<int>("simulation.degree_max", sim)) {
    if (*dm < 0) r.error("simulation.degree_max", "must be >= 0");
    check_level(*dm, "simulation.degree_max");
    cfg.sim_degree_max = *dm;
  }
  if (sim && !r.has("estimation.policy")) {
    // optional estimate alongside the panel
  } else if (sim) {
    detail::read_policy(r, cfg, false);
    if (cfg.has_policy && cfg.n > p && cfg.sim_degree_max >= 0 &&
        cfg.policy.level_for(cfg.n - p) > cfg.sim_degree_max) {
      r.error("estimation.policy", "truncation level exceeds simulation.degree_max");
    }
  }

  r.report_unused();
  result.diagnostics.insert(result.diagnostics.end(), r.diagnostics().begin(), r.diagnostics().end());
  if (result.ok()) result.config = std::move(cfg);
  return result;
}

}  // namespace sphar
