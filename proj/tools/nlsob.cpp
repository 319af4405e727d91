// Command-line runner for nonlocal Sobolev experiments.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nlsob/experiment.hpp"

namespace {

enum ExitCode { kPass = 0, kFail = 1, kConfigError = 2, kNumericalFailure = 3 };

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<double> tolerance;
  std::optional<int> jobs;
};

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + nlsob::format_number(v[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlocal Sobolev functionals on Euclidean and Heisenberg spaces"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config, "Key-value experiment file");
  app.add_option("--seed", g.seed, "Random seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory for CSV and JSON sidecar");
  app.add_option("--tolerance", g.tolerance, "Relative tolerance against the target (0 means 3 sigma)");
  app.add_option("--jobs", g.jobs, "Worker threads (0 means all cores)");

  std::map<std::string, CLI::App*> subs;
  for (const char* name : {"estimate", "sweep", "constants", "cc-distance", "blowup", "verify", "sup-profile"})
    subs[name] = app.add_subcommand(name);
  subs["estimate"]->description("One functional value");
  subs["sweep"]->description("delta (or s) sweep with extrapolated limit");
  subs["blowup"]->description("Pointwise limit along a blow-up schedule");
  subs["verify"]->description("Identity or splitting verification");
  subs["sup-profile"]->description("I_delta profile over a grid in (0, 1)");

  std::optional<std::string> branch;
  std::optional<int> n;
  std::optional<double> p;
  auto* cst = subs["constants"];
  cst->description("C_{n,p} on R^n or H^n");
  cst->add_option("--branch", branch, "euclidean or heisenberg");
  cst->add_option("--n", n, "Dimension n");
  cst->add_option("--p", p, "Exponent p > 1");

  std::vector<double> x;
  std::vector<double> y;
  std::optional<std::string> mode;
  auto* cc = subs["cc-distance"];
  cc->description("Carnot-Caratheodory distance on H^n");
  cc->add_option("--x", x, "First point (2n+1 coordinates)")->delimiter(',');
  cc->add_option("--y", y, "Second point (2n+1 coordinates)")->delimiter(',');
  cc->add_option("--mode", mode, "cc or koranyi");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kConfigError;
  }

  std::string sub;
  for (const auto& [name, s] : subs)
    if (s->parsed()) sub = name;

  try {
    const auto t0 = std::chrono::steady_clock::now();
    nlsob::KeyValueConfig kv = g.config.empty() ? nlsob::KeyValueConfig{} : nlsob::KeyValueConfig::load(g.config);
    if (!g.config.empty() && !kv.has("output.name"))
      kv.set("output.name", std::filesystem::path(g.config).stem().string());
    if (g.seed) kv.set("seed", std::to_string(*g.seed));
    if (g.tolerance) kv.set("tolerance", nlsob::format_number(*g.tolerance));
    if (g.jobs) kv.set("jobs", std::to_string(*g.jobs));
    if (branch) kv.set("branch", *branch);
    if (n) kv.set("n", std::to_string(*n));
    if (p) kv.set("p", nlsob::format_number(*p));
    if (!x.empty()) kv.set("x", join(x));
    if (!y.empty()) kv.set("y", join(y));
    if (mode) kv.set("mode", *mode);

    const auto cfg = nlsob::parse_experiment(kv, nlsob::experiment_from(sub));
    std::filesystem::path cache_path = cfg.cache.empty() ? std::filesystem::path(g.out) / "constants_cache.json"
                                                         : std::filesystem::path(cfg.cache);
    std::filesystem::create_directories(cache_path.parent_path().empty() ? "." : cache_path.parent_path());
    const nlsob::ConstantsCache cache(cache_path);
    const auto report = nlsob::run(cfg, &cache);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto csv = nlsob::write_report(report, cfg, g.out, wall);
    std::cout << report.summary << '\n' << "wrote " << csv.string() << '\n';
    if (report.verdict && !*report.verdict) return kFail;
    return kPass;
  } catch (const nlsob::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlsob::DomainError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlsob::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalFailure;
  }
}
