#pragma once

// The dpcalib command-line driver: fit, diagnose, dual, frontier, bounds and validate.
// Exit codes: 0 clean, 2 usable but degraded, 1 bad input or hard numerical failure.

#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpcalib/bounds.hpp"
#include "dpcalib/error.hpp"
#include "dpcalib/mc_oracle.hpp"
#include "dpcalib/refine.hpp"
#include "dpcalib/report.hpp"
#include "dpcalib/tsmm.hpp"
#include "dpcalib/weights.hpp"

namespace dpcalib::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitDegraded = 2;

struct GlobalOptions {
  std::string format = "json";
  std::string out;
  int order = kDefaultQuadratureOrder;
  bool quiet = false;
};

struct ElicitationFlags {
  int J = 0;
  double mu_k = 0.0;
  std::optional<double> var_k;
  std::optional<std::string> confidence;
  std::optional<double> cv;
  std::optional<std::string> interval;
};

inline void add_elicitation(CLI::App* cmd, ElicitationFlags& f) {
  cmd->add_option("--J", f.J, "Design size (number of units)")->required();
  cmd->add_option("--mu-k", f.mu_k, "Target E[K_J]")->required();
  auto* var = cmd->add_option("--var-k", f.var_k, "Target Var(K_J)");
  auto* conf = cmd->add_option("--confidence", f.confidence, "Confidence level: high, medium or low")
                   ->check(CLI::IsMember({"high", "medium", "low"}));
  auto* cv = cmd->add_option("--cv", f.cv, "Coefficient of variation of K_J");
  auto* interval = cmd->add_option("--interval", f.interval, "Elicited interval lo,hi,coverage");
  var->excludes(conf)->excludes(cv)->excludes(interval);
  conf->excludes(cv)->excludes(interval);
  cv->excludes(interval);
}

inline IntervalSource parse_interval(const std::string& text) {
  std::vector<double> v;
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw InputError("--interval expects lo,hi,coverage; could not parse '" + text + "'");
    }
  }
  if (v.size() != 3) throw InputError("--interval expects lo,hi,coverage; got '" + text + "'");
  return {v[0], v[1], v[2]};
}

inline ElicitationTarget build_target(const ElicitationFlags& f) {
  const int given = f.var_k.has_value() + f.confidence.has_value() + f.cv.has_value() +
                    f.interval.has_value();
  if (given != 1) {
    throw InputError("exactly one of --var-k, --confidence, --cv, --interval is required");
  }
  UncertaintySource src;
  if (f.var_k) src = DirectVariance{*f.var_k};
  else if (f.confidence) src = VifSource{*parse_confidence(*f.confidence)};
  else if (f.cv) src = CvSource{*f.cv};
  else src = parse_interval(*f.interval);
  auto target = resolve_target(f.J, f.mu_k, src);
  feasibility_check(target);
  return target;
}

/// "start:stop:step", inclusive of stop up to rounding.
inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> parts;
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ':')) {
    try {
      parts.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw InputError("--grid expects start:stop:step, got '" + text + "'");
    }
  }
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    throw InputError("--grid expects start:stop:step with step > 0 and stop >= start, got '" + text + "'");
  }
  std::vector<double> grid;
  const int n = static_cast<int>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
  for (int i = 0; i <= n; ++i) grid.push_back(parts[0] + i * parts[2]);
  return grid;
}

inline void emit(const std::string& text, const GlobalOptions& g, std::ostream& out) {
  if (g.out.empty()) {
    out << text;
    return;
  }
  std::ofstream file(g.out);
  if (!file) throw InputError("cannot open output file '" + g.out + "'");
  file << text;
}

// Text written to stdout already lists the warnings.
inline void print_warnings(const std::vector<std::string>& warnings, const GlobalOptions& g,
                           std::ostream& err) {
  if (g.quiet || (g.format == "text" && g.out.empty())) return;
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

inline int emit_fit(const FitReport& report, const GlobalOptions& g, std::ostream& out,
                    std::ostream& err) {
  emit(g.format == "json" ? to_json(report).dump(2) + "\n" : render_text(report), g, out);
  std::vector<std::string> all = report.warnings;
  for (const auto& w : report.diagnostics.warnings) all.push_back(w);
  print_warnings(all, g, err);
  return exit_code_for(report);
}

inline TsmmOptions tsmm_options(const GlobalOptions& g) {
  TsmmOptions o;
  o.order = g.order;
  return o;
}

inline int cmd_fit(const ElicitationFlags& f, const std::string& method, const std::string& kl_target,
                   const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const auto target = build_target(f);
  const auto opts = tsmm_options(g);
  CalibrationResult fit;
  std::string source_override;
  if (method == "a1") {
    fit = stage1_fit(target, opts);
  } else if (method == "a2-mn") {
    fit = tsmm_fit(target, opts);
  } else {
    const auto mn = tsmm_fit(target, opts);
    const GammaHyperprior init = is_converged(mn.status) ? mn.hyper : mn.stage1_init;
    const TargetPmf pmf = kl_target == "chisq-doro" ? chisq_doro_target(target.J, target.mu_K)
                                                    : doro_uniform_target(target.J, target.mu_K);
    KlOptions ko;
    ko.order = g.order;
    fit = kl_fit(target.J, pmf, init, ko);
    fit.stage1_init = mn.stage1_init;
    source_override = std::string("kl-target:") + to_string(pmf.label);
  }
  auto report = make_fit_report(fit, diagnostics(target.J, fit.hyper, g.order));
  if (!source_override.empty()) report.uncertainty_source = source_override;
  return emit_fit(report, g, out, err);
}

inline int cmd_dual(const ElicitationFlags& f, const DualAnchorConfig& cfg_in, const GlobalOptions& g,
                    std::ostream& out, std::ostream& err) {
  const auto target = build_target(f);
  DualAnchorConfig cfg = cfg_in;
  cfg.order = g.order;
  cfg.validate();
  const auto base = tsmm_fit(target, tsmm_options(g));
  const auto res = dual_anchor(base, cfg);
  auto report = make_fit_report(res.fit, diagnostics(target.J, res.fit.hyper, g.order), res.tradeoff);
  if (!is_converged(base.status)) {
    report.warnings.insert(report.warnings.begin(),
                           std::string("moment-matching stage ended with status ") +
                               to_string(base.status));
  }
  return emit_fit(report, g, out, err);
}

inline int cmd_frontier(const ElicitationFlags& f, const DualAnchorConfig& cfg_in,
                        const std::string& grid_spec, const GlobalOptions& g, std::ostream& out,
                        std::ostream& err) {
  const auto target = build_target(f);
  DualAnchorConfig cfg = cfg_in;
  cfg.order = g.order;
  cfg.validate();
  const auto grid = grid_spec.empty() ? default_lambda_grid() : parse_grid(grid_spec);
  const auto points = pareto_frontier(target, cfg, grid, tsmm_options(g));
  emit(frontier_csv(points), g, out);
  int failed = 0;
  for (const auto& p : points) {
    if (p.error) {
      ++failed;
      if (!g.quiet) err << "warning: lambda = " << p.lambda << " failed: " << *p.error << "\n";
    }
  }
  if (failed == static_cast<int>(points.size())) return kExitInput;
  return failed > 0 ? kExitDegraded : kExitOk;
}

inline int cmd_diagnose(int J, const GammaHyperprior& hyper, const GlobalOptions& g,
                        std::ostream& out, std::ostream& err) {
  const auto d = diagnostics(J, hyper, g.order);
  if (g.format == "json") emit(diagnose_json(d).dump(2) + "\n", g, out);
  else emit(render_diagnostics_text(d), g, out);
  print_warnings(d.warnings, g, err);
  return kExitOk;
}

inline int cmd_bounds(int J, const GammaHyperprior& hyper, const GlobalOptions& g, std::ostream& out) {
  const auto m = marginal_bounds(J, hyper, g.order);
  emit(g.format == "json" ? to_json(m).dump(2) + "\n" : render_bounds_text(m), g, out);
  return kExitOk;
}

inline int cmd_validate(const ElicitationFlags& f, const McConfig& mc, const GlobalOptions& g,
                        std::ostream& out, std::ostream& err) {
  const auto target = build_target(f);
  const auto fit = tsmm_fit(target, tsmm_options(g));
  const auto checks = validate_against_mc(target.J, fit.hyper, mc, g.order);
  bool all = true;
  for (const auto& c : checks) all = all && c.pass;
  if (g.format == "json") {
    Json j{{"schema_version", kSchemaVersion},
           {"design", Json{{"J", target.J}}},
           {"hyperprior", Json{{"a", fit.hyper.a}, {"b", fit.hyper.b}, {"parameterization", "shape-rate"}}},
           {"draws", mc.draws},
           {"seed", mc.seed},
           {"validation", to_json(checks)}};
    emit(j.dump(2) + "\n", g, out);
  } else {
    std::ostringstream os;
    os << "Monte Carlo validation at J = " << target.J << ", Gamma(" << detail::num(fit.hyper.a)
       << ", " << detail::num(fit.hyper.b) << "), " << mc.draws << " draws, seed " << mc.seed << "\n"
       << render_validation_text(checks);
    emit(os.str(), g, out);
  }
  if (!all && !g.quiet) err << "warning: at least one Monte Carlo check exceeded 4 standard errors\n";
  return all ? kExitOk : kExitDegraded;
}

}  // namespace dpcalib::cli

namespace dpcalib {

/// Parses args (without the program name) and runs one verb.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace dpcalib::cli;
  CLI::App app{"Gamma hyperprior calibration for the Dirichlet-process concentration parameter",
               "dpcalib"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "text"}));
  app.add_option("--out", g.out, "Write output to this file instead of stdout");
  app.add_option("--order", g.order, "Gauss-Laguerre quadrature order")
      ->check(CLI::Range(kMinQuadratureOrder, kMaxQuadratureOrder));
  app.add_flag("--quiet", g.quiet, "Suppress warnings on stderr");

  ElicitationFlags ef;
  std::string method = "a2-mn";
  std::string kl_target = "doro-uniform";
  DualAnchorConfig dual_cfg;
  std::string grid;
  McConfig mc;
  int J = 0;
  GammaHyperprior hyper;

  auto* fit = app.add_subcommand("fit", "Calibrate (a, b) to target moments of K_J");
  add_elicitation(fit, ef);
  fit->add_option("--method", method, "a1, a2-mn or a2-kl")
      ->check(CLI::IsMember({"a1", "a2-mn", "a2-kl"}));
  fit->add_option("--kl-target", kl_target, "Target pmf for a2-kl: doro-uniform or chisq-doro")
      ->check(CLI::IsMember({"doro-uniform", "chisq-doro"}));

  auto* dual = app.add_subcommand("dual", "Moment-matched fit followed by Dual-Anchor refinement");
  add_elicitation(dual, ef);
  auto add_dual = [&](CLI::App* cmd, bool with_lambda) {
    cmd->add_option("--t", dual_cfg.t, "Dominance threshold t in Pr(w1 > t)");
    cmd->add_option("--delta", dual_cfg.delta, "Dominance tolerance");
    if (with_lambda) cmd->add_option("--lambda", dual_cfg.lambda, "Weight on moment fidelity");
  };
  add_dual(dual, true);

  auto* frontier = app.add_subcommand("frontier", "Sweep lambda and emit the trade-off frontier as CSV");
  add_elicitation(frontier, ef);
  add_dual(frontier, false);
  frontier->add_option("--grid", grid, "Lambda grid start:stop:step (default 0.1:1.0:0.1)");

  auto* diagnose = app.add_subcommand("diagnose", "Diagnostics for a given Gamma(a, b)");
  auto* bounds = app.add_subcommand("bounds", "Stage-1 approximation error bounds");
  for (auto* cmd : {diagnose, bounds}) {
    cmd->add_option("--J", J, "Design size")->required();
    cmd->add_option("--a", hyper.a, "Gamma shape")->required();
    cmd->add_option("--b", hyper.b, "Gamma rate")->required();
  }

  auto* validate = app.add_subcommand("validate", "Cross-check a fit against Monte Carlo");
  add_elicitation(validate, ef);
  validate->add_option("--draws", mc.draws, "Monte Carlo draws")->check(CLI::PositiveNumber);
  validate->add_option("--seed", mc.seed, "Random seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run 'dpcalib --help' or 'dpcalib <verb> --help' for usage\n";
    return kExitInput;
  }

  try {
    if (fit->parsed()) return cmd_fit(ef, method, kl_target, g, out, err);
    if (dual->parsed()) return cmd_dual(ef, dual_cfg, g, out, err);
    if (frontier->parsed()) return cmd_frontier(ef, dual_cfg, grid, g, out, err);
    if (diagnose->parsed()) return cmd_diagnose(J, hyper, g, out, err);
    if (bounds->parsed()) return cmd_bounds(J, hyper, g, out);
    if (validate->parsed()) return cmd_validate(ef, mc, g, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace dpcalib
