#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "nlsob/blowup.hpp"
#include "nlsob/constants.hpp"
#include "nlsob/errors.hpp"
#include "nlsob/fields.hpp"
#include "nlsob/functionals.hpp"
#include "nlsob/heisenberg.hpp"
#include "nlsob/space.hpp"
#include "nlsob/sweep.hpp"

namespace nlsob {

inline constexpr const char* kVersion = "0.1.0";

// ------------------------------------------------------------- config ---

/// `key = value` lines; `#` starts a comment; lists are comma separated.
/// Every key must be consumed by the experiment that reads it.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig c;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto end = std::min(text.find('\n', pos), text.size());
      std::string line(text.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "empty key");
      if (c.values_.count(key)) throw ConfigError(key, "duplicate key");
      c.values_[key] = value;
    }
    return c;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config", "cannot read '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return parse(s.str());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::optional<std::string> raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string str(const std::string& key, const std::string& fallback) const { return raw(key).value_or(fallback); }

  std::string required(const std::string& key) const {
    auto v = raw(key);
    if (!v || v->empty()) throw ConfigError(key, "required key missing");
    return *v;
  }

  double num(const std::string& key, double fallback) const {
    auto v = raw(key);
    return v ? to_double(key, *v) : fallback;
  }

  std::optional<double> opt_num(const std::string& key) const {
    auto v = raw(key);
    if (!v) return std::nullopt;
    return to_double(key, *v);
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    auto v = raw(key);
    return v ? to_int(key, *v) : fallback;
  }

  std::uint64_t positive(const std::string& key, std::uint64_t fallback) const {
    const auto v = integer(key, static_cast<std::int64_t>(fallback));
    if (v <= 0) throw ConfigError(key, "must be positive");
    return static_cast<std::uint64_t>(v);
  }

  std::vector<double> list(const std::string& key) const {
    auto v = raw(key);
    if (!v) return {};
    return to_list(key, *v);
  }

  std::vector<std::string> with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
  }

  void mark_used(const std::string& key) const { used_.insert(key); }

  /// Throws on the first key nobody consumed.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    const std::string t = trim(s);
    double v = 0.0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw ConfigError(key, "expected a number, got '" + s + "'");
    return v;
  }

  static std::int64_t to_int(const std::string& key, const std::string& s) {
    const std::string t = trim(s);
    std::int64_t v = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw ConfigError(key, "expected an integer, got '" + s + "'");
    return v;
  }

  static std::vector<double> to_list(const std::string& key, const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const auto end = std::min(s.find(',', pos), s.size());
      out.push_back(to_double(key, s.substr(pos, end - pos)));
      pos = end + 1;
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

struct SpaceConfig {
  std::string kind = "euclidean";
  int n = 1;
  std::string weight = "none";
  std::vector<double> weight_params;
  DistanceMode mode = DistanceMode::exact_cc;
};

struct BudgetConfig {
  std::uint64_t samples = 1'000'000;
  int batches = 32;
  double target_error = 0.0;
  Route route = Route::automatic;
};

enum class Experiment { estimate, sweep, constants, cc_distance, blowup, verify, sup_profile };

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::estimate: return "estimate";
    case Experiment::sweep: return "sweep";
    case Experiment::constants: return "constants";
    case Experiment::cc_distance: return "cc-distance";
    case Experiment::blowup: return "blowup";
    case Experiment::verify: return "verify";
    case Experiment::sup_profile: return "sup-profile";
  }
  return "?";
}

inline Experiment experiment_from(const std::string& s) {
  for (auto e : {Experiment::estimate, Experiment::sweep, Experiment::constants, Experiment::cc_distance,
                 Experiment::blowup, Experiment::verify, Experiment::sup_profile})
    if (to_string(e) == s) return e;
  throw ConfigError("experiment", "unknown experiment '" + s + "'");
}

struct ExperimentConfig {
  Experiment experiment = Experiment::estimate;
  std::string name;
  SpaceConfig space;
  FieldSpec field;
  std::optional<FieldSpec> g_field;
  std::string functional = "I";
  double p = 2.0;
  std::vector<double> schedule;
  std::optional<Point> point;
  BudgetConfig budget;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string target = "auto";
  double tolerance = 0.0;
  std::string fractional_limit = "bbm";
  double blowup_radius = 4.0;
  std::uint64_t blowup_samples = 2000;
  int splitting_cases = 20;
  double epsilon = 0.5;
  std::string branch = "euclidean";
  int n = 1;
  std::string constants_method = "sphere_quadrature";
  Point x;
  Point y;
  std::string cache;
  /// Every consumed key with its text, for the sidecar echo.
  std::map<std::string, std::string> echo;
};

namespace detail {

inline DistanceMode mode_from(const std::string& key, const std::string& s) {
  if (s == "cc" || s == "exact_cc") return DistanceMode::exact_cc;
  if (s == "koranyi" || s == "koranyi_gauge") return DistanceMode::koranyi_gauge;
  throw ConfigError(key, "expected 'cc' or 'koranyi', got '" + s + "'");
}

inline FieldSpec read_field(const KeyValueConfig& kv, const std::string& prefix) {
  FieldSpec spec;
  spec.name = kv.required(prefix + ".name");
  for (const auto& k : kv.with_prefix(prefix + ".")) {
    if (k == prefix + ".name") continue;
    spec.params[k.substr(prefix.size() + 1)] = kv.list(k);
  }
  return spec;
}

inline std::vector<double> read_schedule(const KeyValueConfig& kv) {
  std::vector<double> s = kv.list("schedule");
  if (kv.has("schedule.start") || kv.has("schedule.count")) {
    if (!s.empty()) throw ConfigError("schedule", "give either a list or schedule.start/schedule.count");
    const double start = kv.num("schedule.start", 0.0);
    const auto count = kv.integer("schedule.count", 0);
    if (!(start > 0.0)) throw ConfigError("schedule.start", "must be positive");
    if (count < 1) throw ConfigError("schedule.count", "must be >= 1");
    for (std::int64_t k = 0; k < count; ++k) s.push_back(std::ldexp(start, -static_cast<int>(k)));
  }
  // Either direction is accepted; rows are emitted with the sweep variable descending.
  const bool up = s.size() > 1 && s[1] > s[0];
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0)) throw ConfigError("schedule", "values must be positive");
    if (i > 0 && !(up ? s[i] > s[i - 1] : s[i] < s[i - 1]))
      throw ConfigError("schedule", "values must be strictly monotone");
  }
  if (up) std::reverse(s.begin(), s.end());
  return s;
}

inline void require_seed(const KeyValueConfig& kv, ExperimentConfig& c) {
  auto v = kv.raw("seed");
  if (!v) throw ConfigError("seed", "required key missing (no entropy-source default)");
  const auto s = KeyValueConfig::to_int("seed", *v);
  if (s < 0) throw ConfigError("seed", "must be nonnegative");
  c.seed = static_cast<std::uint64_t>(s);
}

}  // namespace detail

/// Validates a parsed config for one experiment.
inline ExperimentConfig parse_experiment(const KeyValueConfig& kv, Experiment which) {
  ExperimentConfig c;
  c.experiment = which;
  if (auto e = kv.raw("experiment"); e && experiment_from(*e) != which)
    throw ConfigError("experiment", "config is for '" + *e + "', not '" + to_string(which) + "'");
  c.name = kv.str("output.name", to_string(which));
  c.jobs = static_cast<int>(kv.integer("jobs", 1));
  if (c.jobs < 0) throw ConfigError("jobs", "must be >= 0");
  c.tolerance = kv.num("tolerance", 0.0);
  if (c.tolerance < 0.0) throw ConfigError("tolerance", "must be >= 0");
  c.target = kv.str("target", "auto");
  if (c.target != "auto" && c.target != "none") KeyValueConfig::to_double("target", c.target);
  c.cache = kv.str("cache", "");

  if (which == Experiment::cc_distance) {
    c.space.mode = detail::mode_from("mode", kv.str("mode", "cc"));
    const auto xs = kv.list("x");
    const auto ys = kv.list("y");
    if (xs.empty()) throw ConfigError("x", "required key missing");
    if (ys.empty()) throw ConfigError("y", "required key missing");
    if (xs.size() != ys.size() || xs.size() < 3 || xs.size() % 2 == 0 || xs.size() > kMaxDim)
      throw ConfigError("y", "x and y must both have 2n+1 coordinates");
    c.x = Point(xs);
    c.y = Point(ys);
  } else if (which == Experiment::constants) {
    c.branch = kv.str("branch", "euclidean");
    if (c.branch != "euclidean" && c.branch != "heisenberg")
      throw ConfigError("branch", "expected 'euclidean' or 'heisenberg'");
    c.n = static_cast<int>(kv.integer("n", 1));
    if (c.n < 1) throw ConfigError("n", "must be >= 1");
    c.p = kv.num("p", 2.0);
    if (!(c.p > 1.0)) throw ConfigError("p", "must exceed 1");
    c.space.mode = detail::mode_from("mode", kv.str("mode", "cc"));
    c.constants_method = kv.str("method", "sphere_quadrature");
    if (c.constants_method != "sphere_quadrature" && c.constants_method != "closed_form")
      throw ConfigError("method", "expected 'sphere_quadrature' or 'closed_form'");
    c.budget.samples = kv.positive("samples", HeisenbergCnpOptions{}.samples);
    c.budget.batches = static_cast<int>(kv.positive("batches", 40));
    if (c.branch == "heisenberg") c.seed = static_cast<std::uint64_t>(kv.integer("seed", HeisenbergCnpOptions{}.seed));
  } else {
    c.space.kind = kv.str("space.kind", "euclidean");
    if (c.space.kind != "euclidean" && c.space.kind != "heisenberg")
      throw ConfigError("space.kind", "expected 'euclidean' or 'heisenberg'");
    c.space.n = static_cast<int>(kv.integer("space.n", 1));
    if (c.space.n < 1) throw ConfigError("space.n", "must be >= 1");
    c.space.weight = kv.str("space.weight", "none");
    c.space.weight_params = kv.list("space.weight_params");
    c.space.mode = detail::mode_from("space.distance", kv.str("space.distance", "cc"));
    c.field = detail::read_field(kv, "field");
    c.p = kv.num("p", 2.0);
    if (!(c.p > 1.0)) throw ConfigError("p", "must exceed 1");
    c.budget.samples = kv.positive("samples", 1'000'000);
    c.budget.batches = static_cast<int>(kv.positive("batches", 32));
    if (c.budget.batches < kMinBatches) throw ConfigError("batches", "at least 30 batches are required");
    c.budget.target_error = kv.num("target_error", 0.0);
    const auto m = kv.str("method", "auto");
    if (m == "auto") c.budget.route = Route::automatic;
    else if (m == "deterministic") c.budget.route = Route::deterministic;
    else if (m == "monte_carlo") c.budget.route = Route::monte_carlo;
    else throw ConfigError("method", "expected 'auto', 'deterministic' or 'monte_carlo'");
    detail::require_seed(kv, c);
    if (auto pt = kv.list("point"); !pt.empty()) c.point = Point(pt);

    switch (which) {
      case Experiment::estimate: {
        c.functional = kv.str("functional", "I");
        const char* key = c.functional == "fractional" ? "s" : c.functional == "tail" ? "R" : "delta";
        if (auto d = kv.opt_num(key)) c.schedule = {*d};
        else throw ConfigError(key, "required key missing");
        if (!(c.schedule[0] > 0.0)) throw ConfigError(key, "must be positive");
        break;
      }
      case Experiment::sweep:
      case Experiment::sup_profile:
        c.functional = which == Experiment::sweep ? kv.str("functional", "I") : "I";
        c.fractional_limit = kv.str("fractional.limit", "bbm");
        if (c.fractional_limit != "bbm" && c.fractional_limit != "ms")
          throw ConfigError("fractional.limit", "expected 'bbm' or 'ms'");
        c.schedule = detail::read_schedule(kv);
        if (c.schedule.empty()) throw ConfigError("schedule", "required key missing");
        if (which == Experiment::sup_profile)
          for (double d : c.schedule)
            if (!(d < 1.0)) throw ConfigError("schedule", "sup-profile grid must lie in (0, 1)");
        break;
      case Experiment::blowup:
        c.functional = "pointwise";
        c.schedule = detail::read_schedule(kv);
        if (c.schedule.empty()) c.schedule = geometric_schedule(kv.num("schedule.delta0", 1.0), 10);
        c.blowup_radius = kv.num("blowup.radius", 4.0);
        c.blowup_samples = kv.positive("blowup.samples", 2000);
        if (!c.point) throw ConfigError("point", "required key missing");
        break;
      case Experiment::verify:
        c.functional = kv.str("functional", "identity");
        if (c.functional == "identity") {
          c.schedule = kv.list("epsilon");
          if (c.schedule.empty()) c.schedule = {0.25, 0.5, 0.75};
          for (double e : c.schedule)
            if (!(e > 0.0 && e < 1.0)) throw ConfigError("epsilon", "values must lie in (0, 1)");
        } else if (c.functional == "splitting") {
          if (kv.has("g.name")) {
            c.g_field = detail::read_field(kv, "g");
            c.schedule = {kv.num("delta", 0.5)};
            c.epsilon = kv.num("epsilon", 0.5);
            c.splitting_cases = 1;
          } else {
            c.splitting_cases = static_cast<int>(kv.positive("splitting.cases", 20));
          }
        } else {
          throw ConfigError("functional", "verify expects 'identity' or 'splitting'");
        }
        break;
      default:
        break;
    }
    static const std::set<std::string> kFunctionals{"I", "J", "pointwise", "fractional", "tail", "identity",
                                                    "splitting"};
    if (!kFunctionals.count(c.functional)) throw ConfigError("functional", "unknown functional '" + c.functional + "'");
    if ((c.functional == "pointwise" || c.functional == "tail") && !c.point)
      throw ConfigError("point", "required key missing");
  }
  for (const auto& [k, v] : kv.entries()) c.echo[k] = v;
  kv.reject_unknown();
  return c;
}

// ------------------------------------------------------------ builders ---

inline SpaceHandle build_space(const SpaceConfig& s, const ConstantsCache* cache = nullptr) {
  if (s.kind == "heisenberg") {
    if (s.weight != "none") throw ConfigError("space.weight", "weights are only supported on R^n");
    try {
      return HeisenbergSpace(s.n, s.mode, unit_ball_mass_cached(s.n, s.mode, cache));
    } catch (const DomainError& e) {
      throw ConfigError("space.n", e.what());
    }
  }
  auto param = [&](std::size_t i) {
    if (i >= s.weight_params.size()) throw ConfigError("space.weight_params", "too few parameters for the weight");
    return s.weight_params[i];
  };
  try {
    if (s.weight == "none") {
      if (!s.weight_params.empty()) throw ConfigError("space.weight_params", "given without a weight");
      return EuclideanSpace(s.n);
    }
    std::size_t want = 0;
    std::optional<Weight> w;
    if (s.weight == "constant") w = Weight::constant(param(0)), want = 1;
    else if (s.weight == "quadratic") w = Weight::quadratic(param(0)), want = 1;
    else if (s.weight == "quadratic-bump") w = Weight::quadratic_bump(param(0), param(1)), want = 2;
    else throw ConfigError("space.weight", "unknown weight '" + s.weight + "'");
    if (s.weight_params.size() != want) throw ConfigError("space.weight_params", "too many parameters for the weight");
    return EuclideanSpace(s.n, *w);
  } catch (const DomainError& e) {
    throw ConfigError("space", e.what());
  }
}

inline ScalarField build_field(const FieldSpec& spec, const SpaceHandle& space, const std::string& prefix = "field") {
  try {
    return make_field(spec, space);
  } catch (const ConfigError& e) {
    if (prefix == "field") throw;
    std::string f = e.field();
    if (f.rfind("field", 0) == 0) f = prefix + f.substr(5);
    const std::string what = e.what();
    throw ConfigError(f, what.substr(what.find(": ") + 2));
  } catch (const DomainError& e) {
    throw ConfigError(prefix, e.what());
  }
}

// --------------------------------------------------------------- report ---

struct CsvRow {
  double delta = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::string method;
  std::optional<double> target;
};

struct RunReport {
  Experiment experiment = Experiment::estimate;
  std::vector<CsvRow> rows;
  bool target_column = false;
  nlohmann::ordered_json results = nlohmann::ordered_json::object();
  std::optional<bool> verdict;
  std::string summary;
};

/// Shortest round-trip decimal form, independent of locale.
inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_number(std::uint64_t v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string to_csv(const RunReport& rep) {
  std::string out = "delta,value,std_error,n_samples,method";
  if (rep.target_column) out += ",target";
  out += '\n';
  for (const auto& r : rep.rows) {
    out += format_number(r.delta) + ',' + format_number(r.value) + ',' + format_number(r.std_error) + ',' +
           format_number(r.n_samples) + ',' + r.method;
    if (rep.target_column) out += ',' + (r.target ? format_number(*r.target) : std::string());
    out += '\n';
  }
  return out;
}

inline CsvRow csv_row(const SweepRow& r) {
  return {r.delta, r.value, r.sigma(), r.n_samples, to_string(r.method), std::nullopt};
}

inline CsvRow csv_row(const FunctionalEstimate& e, double delta) {
  return {delta, e.value, combined_error(e), e.n_samples, to_string(e.method), std::nullopt};
}

inline nlohmann::ordered_json sweep_json(const DeltaSweep& sw) {
  nlohmann::ordered_json j;
  if (sw.fit) {
    j["fit"] = {{"intercept", sw.fit->intercept},
                {"slope", sw.fit->slope},
                {"residual", sw.fit->residual},
                {"intercept_error", sw.fit->intercept_error}};
  }
  if (sw.target) {
    j["target"] = *sw.target;
    j["target_error"] = sw.target_error;
    j["deviation"] = sw.deviation();
    j["combined_sigma"] = sw.combined_sigma();
  }
  j["max_value"] = sw.max_value();
  bool flagged = false;
  for (const auto& r : sw.rows) flagged = flagged || r.flagged;
  j["flagged"] = flagged;
  return j;
}

// ----------------------------------------------------------------- run ---

namespace detail {

inline EstimatorOptions estimator_options(const ExperimentConfig& c) {
  EstimatorOptions o;
  o.samples = c.budget.samples;
  o.batches = c.budget.batches;
  o.jobs = c.jobs;
  o.seed = c.seed;
  o.route = c.budget.route;
  o.target_error = c.budget.target_error;
  return o;
}

inline HeisenbergCnpOptions cnp_options(const ExperimentConfig& c, DistanceMode mode) {
  HeisenbergCnpOptions h;
  h.jobs = c.jobs;
  h.mode = mode;
  return h;
}

inline std::optional<double> explicit_target(const ExperimentConfig& c) {
  if (c.target == "auto" || c.target == "none") return std::nullopt;
  return KeyValueConfig::to_double("target", c.target);
}

inline bool judge(double value, double sigma, double target, double target_sigma, double tolerance) {
  const double dev = std::abs(value - target);
  if (tolerance > 0.0) return dev <= tolerance * std::abs(target);
  return dev <= 3.0 * std::hypot(sigma, target_sigma) + 1e-12 * std::abs(target);
}

// ||f||_p^p on R^1 by quadrature over the support.
inline double lp_norm_1d(const ScalarField& f, double p) {
  const auto S = f.support_radius();
  if (!S) throw ConfigError("target", "no support radius for the L^p norm");
  const double a = f.anchor()[0];
  std::vector<double> pts{a - *S, a + *S};
  for (double k : f.kinks())
    if (k > a - *S && k < a + *S) pts.push_back(k);
  std::sort(pts.begin(), pts.end());
  return integrate([&](double s) { return std::pow(std::abs(f(Point{s})), p); }, std::span<const double>(pts)).value;
}

struct Target {
  double value = 0.0;
  double sigma = 0.0;
};

// Analytic limit of a sweep: (C / (p omega)) Ch_p for I, (C / omega) Ch_p for J,
// (C_{n,p} / p) Ch_p for the s -> 1 limit and (2 n omega_n / p) ||f||_p^p for s -> 0.
inline std::optional<Target> sweep_target(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space,
                                          const ConstantsCache* cache) {
  if (auto t = explicit_target(c)) return Target{*t, 0.0};
  if (c.target == "none") return std::nullopt;
  const bool heis = space.heisenberg() != nullptr;
  const DistanceMode mode = heis ? space.heisenberg()->mode() : DistanceMode::exact_cc;
  const int n = heis ? space.heisenberg()->n() : space.euclidean()->n();
  if (c.functional == "pointwise") {
    auto [v, s] = space.visit([&](const auto& sp) { return pointwise_target(f, sp, *c.point, c.p, cnp_options(c, mode), cache); });
    return Target{v, s};
  }
  CheegerOptions co;
  co.samples = c.budget.samples;
  co.batches = c.budget.batches;
  co.jobs = c.jobs;
  co.seed = mix64(c.seed ^ 0x636865ULL);
  if (c.functional == "I" || c.functional == "J") {
    const auto ch = cheeger_energy(f, space, c.p, co);
    const auto lc = limit_coefficient(n, c.p, heis ? Branch::heisenberg : Branch::euclidean, cnp_options(c, mode), cache);
    const double k = c.functional == "I" ? lc.i_coeff : lc.j_coeff;
    const double ks = c.functional == "I" ? lc.i_std_error : lc.j_std_error;
    return Target{k * ch.value, std::hypot(k * combined_error(ch), ks * ch.value)};
  }
  if (c.functional == "fractional" && !heis) {
    if (c.fractional_limit == "bbm") {
      const auto ch = cheeger_energy(f, space, c.p, co);
      const double k = euclidean_cnp(n, c.p).value / c.p;
      return Target{k * ch.value, k * combined_error(ch)};
    }
    if (n == 1 && !space.euclidean()->weighted())
      return Target{2.0 * n * omega_n(n) / c.p * lp_norm_1d(f, c.p), 0.0};
  }
  return std::nullopt;
}

inline void attach_verdict(RunReport& rep, bool pass, const std::string& what) {
  rep.verdict = pass;
  rep.summary = std::string(pass ? "PASS" : "FAIL") + ": " + what;
}

inline std::string describe(double v, double s) {
  std::ostringstream o;
  o.precision(8);
  o << v << " +- " << s;
  return o.str();
}

inline RunReport run_cc_distance(const ExperimentConfig& c) {
  RunReport rep;
  const double d = homogeneous_norm(group_op(inverse(c.x), c.y), c.space.mode);
  rep.rows.push_back({0.0, d, 0.0, 1, "deterministic", std::nullopt});
  rep.results["distance"] = d;
  rep.results["mode"] = to_string(c.space.mode);
  rep.summary = "distance = " + format_number(d);
  if (auto t = explicit_target(c)) {
    const double tol = c.tolerance > 0.0 ? c.tolerance : 1e-9;
    attach_verdict(rep, std::abs(d - *t) <= tol * std::max(1.0, std::abs(*t)), rep.summary + " vs " + format_number(*t));
  }
  return rep;
}

inline RunReport run_constants(const ExperimentConfig& c, const ConstantsCache* cache) {
  RunReport rep;
  if (c.branch == "euclidean") {
    const auto closed = euclidean_cnp(c.n, c.p, ConstMethod::closed_form);
    const auto quad = euclidean_cnp(c.n, c.p, ConstMethod::sphere_quadrature);
    const auto& shown = c.constants_method == "closed_form" ? closed : quad;
    rep.rows.push_back({c.p, shown.value, shown.std_error, shown.n_samples, to_string(shown.method), std::nullopt});
    rep.results["closed_form"] = closed.value;
    rep.results["sphere_quadrature"] = quad.value;
    rep.results["quadrature_error"] = quad.quadrature_error;
    const double tol = c.tolerance > 0.0 ? c.tolerance : 1e-8;
    double target = closed.value;
    if (auto t = explicit_target(c)) target = *t;
    const double dev = std::abs(quad.value - target);
    rep.results["deviation"] = dev;
    attach_verdict(rep, dev <= tol && std::abs(closed.value - target) <= tol,
                   "C_{" + std::to_string(c.n) + "," + format_number(c.p) + "} = " + format_number(quad.value) +
                       " (closed form " + format_number(closed.value) + ")");
    return rep;
  }
  HeisenbergCnpOptions h = cnp_options(c, c.space.mode);
  h.samples = c.budget.samples;
  h.batches = c.budget.batches;
  h.seed = c.seed;
  const auto r = heisenberg_cnp_cached(c.n, c.p, h, cache);
  const auto lc = limit_coefficient(c.n, c.p, Branch::heisenberg, h, cache);
  rep.rows.push_back({c.p, r.value, r.std_error, r.n_samples, to_string(r.method), std::nullopt});
  rep.results["constant"] = r.value;
  rep.results["std_error"] = r.std_error;
  rep.results["unit_ball_mass"] = lc.omega.value;
  rep.results["unit_ball_mass_std_error"] = lc.omega.std_error;
  rep.results["i_coefficient"] = lc.i_coeff;
  rep.results["i_coefficient_std_error"] = lc.i_std_error;
  rep.summary = "C^H_{" + std::to_string(c.n) + "," + format_number(c.p) + "} = " + describe(r.value, r.std_error);
  if (auto t = explicit_target(c))
    attach_verdict(rep, judge(r.value, r.std_error, *t, 0.0, c.tolerance), rep.summary);
  return rep;
}

inline FunctionalEstimate single_estimate(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space,
                                          double param, const EstimatorOptions& o) {
  if (c.functional == "I") return i_delta(f, space, c.p, param, o);
  if (c.functional == "J") return j_delta(f, space, c.p, param, o);
  if (c.functional == "pointwise") return pointwise_inner(f, space, *c.point, c.p, param, o);
  if (c.functional == "tail") {
    const auto m = c.budget.route == Route::monte_carlo ? TailMethod::monte_carlo : TailMethod::automatic;
    return tail_integral(space, *c.point, param, c.p, o, m);
  }
  if (c.functional == "fractional") {
    auto e = fractional_seminorm(f, space, c.p, param, o);
    if (c.experiment == Experiment::sweep) {
      const double k = c.fractional_limit == "bbm" ? 1.0 - param : param;
      e.value *= k;
      e.std_error *= k;
      e.quadrature_error *= k;
    }
    return e;
  }
  throw ConfigError("functional", "'" + c.functional + "' is not available for this experiment");
}

inline RunReport run_estimate(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space) {
  RunReport rep;
  const auto o = estimator_options(c);
  const auto e = single_estimate(c, f, space, c.schedule[0], o);
  rep.rows.push_back(csv_row(e, c.schedule[0]));
  rep.results["value"] = e.value;
  rep.results["std_error"] = e.std_error;
  rep.results["quadrature_error"] = e.quadrature_error;
  rep.results["truncation_bound"] = e.truncation_bound;
  rep.results["flagged"] = e.flagged;
  if (!e.note.empty()) rep.results["note"] = e.note;
  rep.summary = c.functional + " = " + describe(e.value, combined_error(e));
  std::optional<double> target = explicit_target(c);
  if (!target && c.target == "auto" && c.functional == "tail" && space.homogeneous())
    target = space.homogeneous_dimension() / (c.p * std::pow(c.schedule[0], c.p));
  if (target) {
    rep.results["target"] = *target;
    attach_verdict(rep, judge(e.value, combined_error(e), *target, 0.0, c.tolerance), rep.summary);
  }
  return rep;
}

inline RunReport run_tail_sweep(const ExperimentConfig& c, const SpaceHandle& space) {
  RunReport rep;
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t k = 0; k < c.schedule.size(); ++k) {
    auto o = estimator_options(c);
    o.seed = entry_seed(c.seed, k);
    const auto e = single_estimate(c, ScalarField{}, space, c.schedule[k], o);
    rep.rows.push_back(csv_row(e, c.schedule[k]));
    lx.push_back(std::log(c.schedule[k]));
    ly.push_back(std::log(e.value));
  }
  if (lx.size() < 2) throw ConfigError("schedule", "a tail sweep needs at least two radii");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / lx.size();
    my += ly[i] / ly.size();
  }
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  const double slope = sxy / sxx;
  rep.results["log_log_slope"] = slope;
  rep.results["target_slope"] = -c.p;
  const double tol = c.tolerance > 0.0 ? c.tolerance : 0.05;
  attach_verdict(rep, std::abs(slope + c.p) <= tol,
                 "tail log-log slope " + format_number(slope) + " vs " + format_number(-c.p));
  return rep;
}

inline RunReport run_sweep_experiment(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space,
                                      const ConstantsCache* cache) {
  if (c.functional == "tail") return run_tail_sweep(c, space);
  RunReport rep;
  const auto o = estimator_options(c);
  DeltaSweep sw;
  if (c.functional == "fractional") {
    // The fit variable is the distance to the limit: 1 - s for s -> 1, s for s -> 0.
    std::vector<double> d;
    for (double s : c.schedule) d.push_back(c.fractional_limit == "bbm" ? 1.0 - s : s);
    std::vector<double> order = d;
    std::sort(order.begin(), order.end(), std::greater<>());
    sw = run_sweep(order, c.seed, [&](double dd, std::uint64_t seed) {
      auto oo = o;
      oo.seed = seed;
      const double s = c.fractional_limit == "bbm" ? 1.0 - dd : dd;
      return single_estimate(c, f, space, s, oo);
    });
  } else {
    sw = run_sweep(c.schedule, c.seed, [&](double d, std::uint64_t seed) {
      auto oo = o;
      oo.seed = seed;
      return single_estimate(c, f, space, d, oo);
    });
  }
  if (auto t = sweep_target(c, f, space, cache)) {
    sw.target = t->value;
    sw.target_error = t->sigma;
  }
  for (const auto& r : sw.rows) rep.rows.push_back(csv_row(r));
  rep.results = sweep_json(sw);
  if (sw.fit) {
    rep.summary = "extrapolated " + c.functional + " limit " + describe(sw.fit->intercept, sw.fit->intercept_error);
    if (sw.target) {
      rep.summary += " vs target " + describe(*sw.target, sw.target_error);
      attach_verdict(rep, sw.passes(c.tolerance), rep.summary);
    }
  } else {
    rep.summary = "sweep with fewer than three rows: no fit";
  }
  return rep;
}

inline RunReport run_sup_profile(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space) {
  RunReport rep;
  const auto sw = space.visit([&](const auto& sp) { return sup_profile(f, sp, c.p, c.schedule, estimator_options(c)); });
  for (const auto& r : sw.rows) rep.rows.push_back(csv_row(r));
  rep.results = sweep_json(sw);
  rep.summary = "sup profile max " + format_number(sw.max_value());
  if (auto t = explicit_target(c)) {
    // The target is an upper bound for the profile.
    rep.results["bound"] = *t;
    attach_verdict(rep, sw.max_value() <= *t, rep.summary + " <= " + format_number(*t));
  }
  return rep;
}

inline RunReport run_blowup(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space,
                            const ConstantsCache* cache) {
  RunReport rep;
  rep.target_column = true;
  const auto o = estimator_options(c);
  const Point x = *c.point;
  const auto sw = space.visit([&](const auto& sp) {
    HeisenbergCnpOptions h;
    h.jobs = c.jobs;
    if constexpr (std::is_same_v<std::decay_t<decltype(sp)>, HeisenbergSpace>) h.mode = sp.mode();
    return pointwise_limit_experiment(f, sp, x, c.p, c.schedule, o, h, cache);
  });
  nlohmann::ordered_json disc = nlohmann::ordered_json::array();
  for (const auto& r : sw.rows) {
    auto row = csv_row(r);
    row.target = sw.target;
    rep.rows.push_back(row);
    disc.push_back(blowup_discrepancy(f, space, x, r.delta, c.blowup_radius, c.blowup_samples, c.seed));
  }
  rep.results = sweep_json(sw);
  rep.results["discrepancy"] = disc;
  rep.results["radius"] = c.blowup_radius;
  double target = *sw.target;
  double target_error = sw.target_error;
  if (auto t = explicit_target(c)) target = *t, target_error = 0.0;
  const bool pass = sw.fit && judge(sw.fit->intercept, sw.fit->intercept_error, target, target_error, c.tolerance);
  attach_verdict(rep, pass,
                 "pointwise limit " + describe(sw.fit->intercept, sw.fit->intercept_error) + " vs target " +
                     describe(target, target_error));
  return rep;
}

/// Seeded (f, g, delta, eps) cases drawn from the field catalog.
struct SplittingCase {
  ScalarField f;
  ScalarField g;
  double delta = 0.5;
  double eps = 0.5;
  std::string label;
};

inline std::vector<SplittingCase> catalog_splitting_cases(const SpaceHandle& space, int count, std::uint64_t seed) {
  CounterRng rng(seed, 0x73706c74ULL);
  std::vector<SplittingCase> out;
  const std::size_t dim = space.dim();
  auto random_field = [&](std::string& label) {
    FieldSpec spec;
    const double h = rng.uniform(0.3, 1.5);
    const double r = rng.uniform(0.5, 1.5);
    if (space.heisenberg()) {
      const int n = space.heisenberg()->n();
      std::vector<double> dir(2 * static_cast<std::size_t>(n));
      double nn = 0.0;
      for (auto& d : dir) d = rng.normal(), nn += d * d;
      for (auto& d : dir) d /= std::sqrt(nn);
      spec = {"horizontal-linear-cutoff", {{"direction", dir}, {"r1", {r}}, {"r2", {r + rng.uniform(0.5, 1.5)}}}};
      label = spec.name;
      return make_field(spec, space).scaled(h);
    }
    std::vector<double> center(dim);
    for (auto& v : center) v = rng.uniform(-0.5, 0.5);
    const int kind = static_cast<int>(rng.uniform() * 4.0);
    if (kind == 0) spec = {"tent", {{"center", center}, {"radius", {r}}, {"height", {h}}}};
    else if (kind == 1) spec = {"bump", {{"center", center}, {"radius", {r}}, {"height", {h}}}};
    else if (kind == 2) spec = {"product-bump", {{"center", center}, {"radius", {r}}, {"height", {h}}}};
    else spec = {"mollified-step", {{"center", center}, {"half_length", {r}}, {"width", {0.2}}, {"height", {h}}}};
    label = spec.name;
    return make_field(spec, space);
  };
  for (int i = 0; i < count; ++i) {
    SplittingCase sc;
    std::string lf;
    std::string lg;
    sc.f = random_field(lf);
    // Half the cases perturb f slightly, which makes the right side tight.
    if (i % 2 == 0) {
      sc.g = random_field(lg);
      sc.label = lf + " | " + lg;
    } else {
      const ScalarField h = random_field(lg);
      sc.g = combine(sc.f, rng.uniform(0.9, 1.1), h, rng.uniform(-0.1, 0.1));
      sc.label = lf + " | perturbed by " + lg;
    }
    sc.delta = rng.uniform(0.05, 0.9);
    sc.eps = rng.uniform(0.1, 0.9);
    out.push_back(std::move(sc));
  }
  return out;
}

inline RunReport run_verify(const ExperimentConfig& c, const ScalarField& f, const SpaceHandle& space) {
  RunReport rep;
  const auto o = estimator_options(c);
  if (c.functional == "identity") {
    const double tol = c.tolerance > 0.0 ? c.tolerance : 1e-2;
    bool all = true;
    nlohmann::ordered_json cases = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < c.schedule.size(); ++k) {
      auto oo = o;
      oo.seed = entry_seed(c.seed, k);
      const auto r = verify_identity(f, space, c.p, c.schedule[k], oo, tol);
      const double sigma = std::hypot(r.lhs_error, r.rhs_error);
      rep.rows.push_back({c.schedule[k], r.lhs - r.rhs, sigma, r.i_one.n_samples + r.j_eps.n_samples,
                          to_string(r.j_eps.method), std::nullopt});
      cases.push_back({{"epsilon", r.epsilon},
                       {"lhs", r.lhs},
                       {"lhs_error", r.lhs_error},
                       {"rhs", r.rhs},
                       {"rhs_error", r.rhs_error},
                       {"relative_discrepancy", r.relative_discrepancy},
                       {"within_tolerance", r.within_tolerance},
                       {"within_3sigma", r.within_3sigma}});
      all = all && r.within_tolerance;
    }
    rep.results["cases"] = cases;
    attach_verdict(rep, all, "identity on " + std::to_string(c.schedule.size()) + " epsilon values, tolerance " +
                                 format_number(tol));
    return rep;
  }
  std::vector<SplittingCase> cases;
  if (c.g_field) {
    cases.push_back({f, build_field(*c.g_field, space, "g"), c.schedule[0], c.epsilon, "configured"});
  } else {
    cases = catalog_splitting_cases(space, c.splitting_cases, c.seed);
  }
  int violations = 0;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < cases.size(); ++k) {
    auto oo = o;
    oo.seed = entry_seed(c.seed, k);
    const auto r = verify_splitting(cases[k].f, cases[k].g, space, c.p, cases[k].delta, cases[k].eps, oo);
    rep.rows.push_back({cases[k].delta, r.margin, r.combined_sigma, r.lhs.n_samples, to_string(r.lhs.method),
                        std::nullopt});
    arr.push_back({{"case", cases[k].label},
                   {"delta", r.delta},
                   {"epsilon", r.epsilon},
                   {"lhs", r.lhs.value},
                   {"rhs", r.rhs},
                   {"combined_sigma", r.combined_sigma},
                   {"holds", r.holds}});
    if (!r.holds) ++violations;
  }
  rep.results["cases"] = arr;
  rep.results["violations"] = violations;
  attach_verdict(rep, violations == 0,
                 "splitting inequality, " + std::to_string(violations) + " violations in " +
                     std::to_string(cases.size()) + " cases");
  return rep;
}

}  // namespace detail

inline RunReport run(const ExperimentConfig& c, const ConstantsCache* cache = nullptr) {
  RunReport rep;
  switch (c.experiment) {
    case Experiment::cc_distance: rep = detail::run_cc_distance(c); break;
    case Experiment::constants: rep = detail::run_constants(c, cache); break;
    default: {
      const SpaceHandle space = build_space(c.space, cache);
      const ScalarField f = build_field(c.field, space);
      if (c.point && c.point->size() != space.dim()) throw ConfigError("point", "dimension does not match the space");
      switch (c.experiment) {
        case Experiment::estimate: rep = detail::run_estimate(c, f, space); break;
        case Experiment::sweep: rep = detail::run_sweep_experiment(c, f, space, cache); break;
        case Experiment::sup_profile: rep = detail::run_sup_profile(c, f, space); break;
        case Experiment::blowup: rep = detail::run_blowup(c, f, space, cache); break;
        case Experiment::verify: rep = detail::run_verify(c, f, space); break;
        default: break;
      }
      rep.results["space"] = space.name();
      rep.results["field"] = c.field.name;
    }
  }
  rep.experiment = c.experiment;
  return rep;
}

/// CSV rows and a JSON sidecar (config echo, versions, wall time, seed).
inline std::filesystem::path write_report(const RunReport& rep, const ExperimentConfig& c,
                                          const std::filesystem::path& out_dir, double wall_seconds) {
  std::filesystem::create_directories(out_dir);
  const auto csv_path = out_dir / (c.name + ".csv");
  {
    std::ofstream out(csv_path, std::ios::binary);
    out << to_csv(rep);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
  }
  nlohmann::ordered_json meta;
  meta["experiment"] = to_string(c.experiment);
  meta["config"] = c.echo;
  meta["seed"] = c.seed;
  meta["jobs"] = c.jobs;
  meta["versions"] = {{"nlsob", kVersion}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}};
  meta["wall_time_seconds"] = wall_seconds;
  meta["results"] = rep.results;
  if (rep.verdict) meta["verdict"] = *rep.verdict ? "PASS" : "FAIL";
  meta["summary"] = rep.summary;
  std::ofstream side(out_dir / (c.name + ".json"), std::ios::binary);
  side << meta.dump(2) << '\n';
  return csv_path;
}

}  // namespace nlsob
