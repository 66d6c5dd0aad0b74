#pragma once

// Machine-readable fit reports (JSON, schema version "1"), their text rendering, the
// methods-section checklist paragraph, and the frontier CSV format.

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpcalib/bounds.hpp"
#include "dpcalib/error.hpp"
#include "dpcalib/mc_oracle.hpp"
#include "dpcalib/refine.hpp"
#include "dpcalib/tsmm.hpp"
#include "dpcalib/types.hpp"
#include "dpcalib/weights.hpp"

namespace dpcalib {

inline constexpr const char* kSchemaVersion = "1";
inline constexpr const char* kSoftwareName = "dpcalib";
inline constexpr const char* kSoftwareVersion = "0.1.0";
inline constexpr const char* kDefaultDesignNote =
    "J is fixed by the study design; the prior is calibrated for this design size only";

using Json = nlohmann::ordered_json;

struct FitReport {
  std::string schema_version = kSchemaVersion;
  int J = 0;
  std::string fixed_design_note = kDefaultDesignNote;
  double mu_K = 0.0;
  double var_K = 0.0;
  std::string uncertainty_source;
  GammaHyperprior hyper;
  GammaHyperprior stage1_init;
  double achieved_mean_K = 0.0;
  double achieved_var_K = 0.0;
  double residual = 0.0;
  Method method = Method::A2_MN;
  int iterations = 0;
  Status status = Status::Converged;
  bool projection_applied = false;
  std::optional<double> objective;
  DiagnosticsReport diagnostics;
  std::optional<TradeoffReport> dual_anchor;
  std::vector<std::string> warnings;
  std::string software_name = kSoftwareName;
  std::string software_version = kSoftwareVersion;
};

inline FitReport make_fit_report(const CalibrationResult& fit, const DiagnosticsReport& diag,
                                 std::optional<TradeoffReport> tradeoff = std::nullopt) {
  FitReport r;
  r.J = fit.target.J;
  r.mu_K = fit.target.mu_K;
  r.var_K = fit.target.var_K;
  r.uncertainty_source = source_label(fit.target.source);
  r.hyper = fit.hyper;
  r.stage1_init = fit.stage1_init;
  r.achieved_mean_K = fit.achieved.mean;
  r.achieved_var_K = fit.achieved.variance;
  r.residual = fit.residual_inf_norm;
  r.method = fit.method;
  r.iterations = fit.iterations;
  r.status = fit.status;
  r.projection_applied = fit.projection_applied;
  r.objective = fit.objective;
  r.diagnostics = diag;
  if (fit.projection_applied) {
    r.warnings.push_back("target variance exceeded the Stage-1 feasibility bound; the initializer "
                         "was projected");
  }
  if (!is_converged(fit.status) && fit.status != Status::Stage1Only) {
    r.warnings.push_back(std::string("calibration did not converge: status ") +
                         to_string(fit.status));
  }
  if (tradeoff) {
    for (const auto& w : tradeoff->warnings) r.warnings.push_back(w);
  }
  r.dual_anchor = std::move(tradeoff);
  return r;
}

/// 0 for a clean fit, 2 when the fit is usable but degraded or compromised.
inline int exit_code_for(const FitReport& r) {
  if (r.status != Status::Converged && r.status != Status::Stage1Only) return 2;
  if (r.dual_anchor && r.dual_anchor->constraint_status == ConstraintStatus::ParetoCompromise) return 2;
  return 0;
}

namespace detail {

template <class Enum, std::size_t N>
Enum parse_enum(const std::string& s, const Enum (&values)[N], const char* what) {
  for (Enum v : values)
    if (s == to_string(v)) return v;
  throw InputError(std::string("unknown ") + what + " '" + s + "'");
}

inline constexpr Method kMethods[] = {Method::A1, Method::A2_MN, Method::A2_KL, Method::DualAnchor};
inline constexpr Status kStatuses[] = {Status::Converged, Status::ProjectedThenConverged,
                                       Status::MaxIter, Status::LineSearchStall, Status::Stage1Only};
inline constexpr RiskLevel kRiskLevels[] = {RiskLevel::Low, RiskLevel::Moderate,
                                            RiskLevel::Substantial, RiskLevel::High};
inline constexpr ConstraintStatus kConstraintStatuses[] = {
    ConstraintStatus::SatisfiedAtInput, ConstraintStatus::SatisfiedAfterRefinement,
    ConstraintStatus::ParetoCompromise};

inline Json hyper_json(const GammaHyperprior& h) { return Json{{"a", h.a}, {"b", h.b}}; }

inline GammaHyperprior hyper_from(const Json& j) {
  return {j.at("a").get<double>(), j.at("b").get<double>()};
}

inline Json tail_json(const W1TailSummary& t) {
  return Json{{"threshold", t.threshold},
              {"probability", t.probability},
              {"grad_a", t.grad_a},
              {"grad_b", t.grad_b}};
}

inline W1TailSummary tail_from(const Json& j) {
  return {j.at("threshold").get<double>(), j.at("probability").get<double>(),
          j.at("grad_a").get<double>(), j.at("grad_b").get<double>()};
}

}  // namespace detail

inline Json to_json(const KSummary& k) {
  return Json{{"mean", k.mean},     {"variance", k.variance}, {"mode", k.mode},
              {"median", k.median}, {"q05", k.q05},           {"q10", k.q10},
              {"q90", k.q90},       {"q95", k.q95}};
}

inline KSummary k_summary_from_json(const Json& j) {
  KSummary k;
  k.mean = j.at("mean").get<double>();
  k.variance = j.at("variance").get<double>();
  k.mode = j.at("mode").get<int>();
  k.median = j.at("median").get<int>();
  k.q05 = j.at("q05").get<int>();
  k.q10 = j.at("q10").get<int>();
  k.q90 = j.at("q90").get<int>();
  k.q95 = j.at("q95").get<int>();
  return k;
}

/// The diagnostics block; design size and hyperprior live at the top level of a report.
inline Json to_json(const DiagnosticsReport& d) {
  return Json{{"k_summary", to_json(d.k_summary)},
              {"w1", Json{{"mean", d.w1_mean},
                          {"tails", Json::array({detail::tail_json(d.w1_tail_50),
                                                 detail::tail_json(d.w1_tail_90)})}}},
              {"rho", Json{{"mean", d.rho_mean}, {"variance", d.rho_var}}},
              {"risk_level", to_string(d.risk_level)},
              {"warnings", d.warnings}};
}

inline DiagnosticsReport diagnostics_from_json(const Json& j, int J, const GammaHyperprior& hyper) {
  DiagnosticsReport d;
  d.J = J;
  d.hyper = hyper;
  d.k_summary = k_summary_from_json(j.at("k_summary"));
  const auto& w1 = j.at("w1");
  d.w1_mean = w1.at("mean").get<double>();
  const auto& tails = w1.at("tails");
  if (tails.size() != 2) throw InputError("diagnostics.w1.tails must have two entries");
  d.w1_tail_50 = detail::tail_from(tails.at(0));
  d.w1_tail_90 = detail::tail_from(tails.at(1));
  d.rho_mean = j.at("rho").at("mean").get<double>();
  d.rho_var = j.at("rho").at("variance").get<double>();
  d.risk_level = detail::parse_enum(j.at("risk_level").get<std::string>(), detail::kRiskLevels,
                                    "risk level");
  d.warnings = j.at("warnings").get<std::vector<std::string>>();
  return d;
}

inline Json to_json(const TradeoffReport& t) {
  return Json{{"t", t.t},
              {"delta", t.delta},
              {"lambda", t.lambda},
              {"before", detail::hyper_json(t.before)},
              {"after", detail::hyper_json(t.after)},
              {"mean_K_before", t.mean_K_before},
              {"mean_K_after", t.mean_K_after},
              {"var_K_before", t.var_K_before},
              {"var_K_after", t.var_K_after},
              {"delta_mu_K", t.delta_mu_K},
              {"delta_var_K", t.delta_var_K},
              {"dominance_before", t.dominance_before},
              {"dominance_after", t.dominance_after},
              {"constraint_status", to_string(t.constraint_status)},
              {"warnings", t.warnings}};
}

inline TradeoffReport tradeoff_from_json(const Json& j) {
  TradeoffReport t;
  t.t = j.at("t").get<double>();
  t.delta = j.at("delta").get<double>();
  t.lambda = j.at("lambda").get<double>();
  t.before = detail::hyper_from(j.at("before"));
  t.after = detail::hyper_from(j.at("after"));
  t.mean_K_before = j.at("mean_K_before").get<double>();
  t.mean_K_after = j.at("mean_K_after").get<double>();
  t.var_K_before = j.at("var_K_before").get<double>();
  t.var_K_after = j.at("var_K_after").get<double>();
  t.delta_mu_K = j.at("delta_mu_K").get<double>();
  t.delta_var_K = j.at("delta_var_K").get<double>();
  t.dominance_before = j.at("dominance_before").get<double>();
  t.dominance_after = j.at("dominance_after").get<double>();
  t.constraint_status = detail::parse_enum(j.at("constraint_status").get<std::string>(),
                                           detail::kConstraintStatuses, "constraint status");
  t.warnings = j.at("warnings").get<std::vector<std::string>>();
  return t;
}

inline Json to_json(const FitReport& r) {
  Json j;
  j["schema_version"] = r.schema_version;
  j["design"] = Json{{"J", r.J}, {"fixed_design_note", r.fixed_design_note}};
  j["target"] = Json{{"mu_K", r.mu_K}, {"var_K", r.var_K}, {"uncertainty_source", r.uncertainty_source}};
  j["hyperprior"] = Json{{"a", r.hyper.a}, {"b", r.hyper.b}, {"parameterization", "shape-rate"}};
  j["stage1_init"] = detail::hyper_json(r.stage1_init);
  j["achieved"] = Json{{"mean_K", r.achieved_mean_K}, {"var_K", r.achieved_var_K}, {"residual", r.residual}};
  j["method"] = to_string(r.method);
  j["iterations"] = r.iterations;
  j["status"] = to_string(r.status);
  j["projection_applied"] = r.projection_applied;
  j["objective"] = r.objective ? Json(*r.objective) : Json(nullptr);
  j["diagnostics"] = to_json(r.diagnostics);
  if (r.dual_anchor) j["dual_anchor"] = to_json(*r.dual_anchor);
  j["warnings"] = r.warnings;
  j["software"] = Json{{"name", r.software_name}, {"version", r.software_version}};
  return j;
}

inline FitReport fit_report_from_json(const Json& j) {
  FitReport r;
  r.schema_version = j.at("schema_version").get<std::string>();
  if (r.schema_version != kSchemaVersion) {
    throw InputError("unsupported report schema_version '" + r.schema_version + "'");
  }
  r.J = j.at("design").at("J").get<int>();
  r.fixed_design_note = j.at("design").at("fixed_design_note").get<std::string>();
  r.mu_K = j.at("target").at("mu_K").get<double>();
  r.var_K = j.at("target").at("var_K").get<double>();
  r.uncertainty_source = j.at("target").at("uncertainty_source").get<std::string>();
  r.hyper = detail::hyper_from(j.at("hyperprior"));
  r.stage1_init = detail::hyper_from(j.at("stage1_init"));
  r.achieved_mean_K = j.at("achieved").at("mean_K").get<double>();
  r.achieved_var_K = j.at("achieved").at("var_K").get<double>();
  r.residual = j.at("achieved").at("residual").get<double>();
  r.method = detail::parse_enum(j.at("method").get<std::string>(), detail::kMethods, "method");
  r.iterations = j.at("iterations").get<int>();
  r.status = detail::parse_enum(j.at("status").get<std::string>(), detail::kStatuses, "status");
  r.projection_applied = j.at("projection_applied").get<bool>();
  if (!j.at("objective").is_null()) r.objective = j.at("objective").get<double>();
  r.diagnostics = diagnostics_from_json(j.at("diagnostics"), r.J, r.hyper);
  if (j.contains("dual_anchor")) r.dual_anchor = tradeoff_from_json(j.at("dual_anchor"));
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.software_name = j.at("software").at("name").get<std::string>();
  r.software_version = j.at("software").at("version").get<std::string>();
  return r;
}

inline Json diagnose_json(const DiagnosticsReport& d) {
  return Json{{"schema_version", kSchemaVersion},
              {"design", Json{{"J", d.J}}},
              {"hyperprior", Json{{"a", d.hyper.a}, {"b", d.hyper.b}, {"parameterization", "shape-rate"}}},
              {"diagnostics", to_json(d)},
              {"software", Json{{"name", kSoftwareName}, {"version", kSoftwareVersion}}}};
}

inline Json to_json(const MarginalBoundReport& m) {
  return Json{{"J", m.J},
              {"hyperprior", detail::hyper_json(m.hyper)},
              {"mixed_e1", m.mixed_e1},
              {"mixed_e2", m.mixed_e2},
              {"total_tv_bound", m.total_tv_bound},
              {"e_sqrt_alpha", m.e_sqrt_alpha},
              {"mean_coupling_bound", m.mean_coupling_bound},
              {"variance_coupling_bound", m.variance_coupling_bound},
              {"guidance", m.guidance}};
}

inline Json to_json(const std::vector<ValidationCheck>& checks) {
  Json arr = Json::array();
  bool all = true;
  for (const auto& c : checks) {
    all = all && c.pass;
    arr.push_back(Json{{"name", c.name},
                       {"closed_form", c.closed_form},
                       {"mc_estimate", c.mc_estimate},
                       {"std_error", c.std_error},
                       {"z", c.z},
                       {"pass", c.pass}});
  }
  return Json{{"criterion", "|z| <= 4"}, {"all_pass", all}, {"checks", arr}};
}

namespace detail {

// Six significant digits, the text-format convention for every numeric field.
inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

inline std::string render_diagnostics_text(const DiagnosticsReport& d) {
  using detail::num;
  std::ostringstream os;
  const auto& k = d.k_summary;
  os << "Induced K_J:  mean " << num(k.mean) << ", variance " << num(k.variance) << ", mode "
     << k.mode << ", median " << k.median << ", 90% interval [" << k.q05 << ", " << k.q95 << "]\n";
  os << "Weights:      E[w1] " << num(d.w1_mean) << ", Pr(w1 > 0.5) " << num(d.w1_tail_50.probability)
     << ", Pr(w1 > 0.9) " << num(d.w1_tail_90.probability) << "\n";
  os << "Co-clustering: E[rho] " << num(d.rho_mean) << ", Var(rho) " << num(d.rho_var) << "\n";
  os << "Dominance risk: " << to_string(d.risk_level) << "\n";
  for (const auto& w : d.warnings) os << "warning: " << w << "\n";
  return os.str();
}

/// Methods-section paragraph covering design, targets, calibration, hyperprior, K and weight
/// summaries, the Dual-Anchor step when present, and the software version.
inline std::string render_checklist(const FitReport& r) {
  using detail::fixed;
  using detail::num;
  const auto& k = r.diagnostics.k_summary;
  std::ostringstream os;
  os << "Design: the Gamma hyperprior for the concentration parameter alpha was calibrated for J = "
     << r.J << " units (" << r.fixed_design_note << "). ";
  os << "Elicitation targets: E(K_" << r.J << ") = " << num(r.mu_K) << " and Var(K_" << r.J
     << ") = " << num(r.var_K) << " (variance source: " << r.uncertainty_source << "). ";
  os << "Calibration: method " << to_string(r.method) << ", status " << to_string(r.status)
     << " after " << r.iterations << " iterations, moment residual " << num(r.residual) << ". ";
  os << "Hyperprior: alpha ~ Gamma(" << fixed(r.hyper.a, 2) << ", " << fixed(r.hyper.b, 2)
     << ") in the shape-rate parameterization (a = " << num(r.hyper.a) << ", b = " << num(r.hyper.b)
     << "). ";
  os << "Prior-predictive K: E(K) = " << num(r.achieved_mean_K) << ", Var(K) = "
     << num(r.achieved_var_K) << ", central 90% interval [" << k.q05 << ", " << k.q95 << "]. ";
  os << "Weight diagnostics: Pr(w1 > 0.5) = " << fixed(r.diagnostics.w1_tail_50.probability, 2)
     << " and Pr(w1 > 0.9) = " << fixed(r.diagnostics.w1_tail_90.probability, 2) << ", E(rho) = "
     << fixed(r.diagnostics.rho_mean, 2) << ", dominance risk " << to_string(r.diagnostics.risk_level)
     << ". ";
  if (r.dual_anchor) {
    const auto& t = *r.dual_anchor;
    os << "Dual-Anchor: applied with threshold t = " << fixed(t.t, 2) << ", tolerance delta = "
       << fixed(t.delta, 2) << " and lambda = " << fixed(t.lambda, 2) << "; Pr(w1 > " << fixed(t.t, 2)
       << ") moved from " << fixed(t.dominance_before, 2) << " to " << fixed(t.dominance_after, 2)
       << ", E(K) from " << fixed(t.mean_K_before, 2) << " to " << fixed(t.mean_K_after, 2)
       << " and Var(K) from " << fixed(t.var_K_before, 2) << " to " << fixed(t.var_K_after, 2)
       << " (" << to_string(t.constraint_status) << "). ";
  }
  os << "Software: " << r.software_name << " " << r.software_version << ".";
  return os.str();
}

inline std::string render_text(const FitReport& r) {
  using detail::num;
  std::ostringstream os;
  os << "dpcalib fit report (schema " << r.schema_version << ")\n";
  os << "Design:       J = " << r.J << "\n";
  os << "Target:       E[K] = " << num(r.mu_K) << ", Var[K] = " << num(r.var_K) << " ("
     << r.uncertainty_source << ")\n";
  os << "Hyperprior:   Gamma(a = " << num(r.hyper.a) << ", b = " << num(r.hyper.b)
     << "), shape-rate\n";
  os << "Stage 1:      Gamma(a = " << num(r.stage1_init.a) << ", b = " << num(r.stage1_init.b)
     << ")\n";
  os << "Achieved:     E[K] = " << num(r.achieved_mean_K) << ", Var[K] = " << num(r.achieved_var_K)
     << ", residual " << num(r.residual) << "\n";
  os << "Method:       " << to_string(r.method) << ", " << r.iterations << " iterations, status "
     << to_string(r.status) << "\n";
  if (r.objective) os << "Objective:    " << num(*r.objective) << "\n";
  os << render_diagnostics_text(r.diagnostics);
  if (r.dual_anchor) {
    const auto& t = *r.dual_anchor;
    os << "Dual-Anchor:  t " << num(t.t) << ", delta " << num(t.delta) << ", lambda "
       << num(t.lambda) << ", " << to_string(t.constraint_status) << "\n";
    os << "  before      Gamma(" << num(t.before.a) << ", " << num(t.before.b) << "), E[K] "
       << num(t.mean_K_before) << ", Var[K] " << num(t.var_K_before) << ", dominance "
       << num(t.dominance_before) << "\n";
    os << "  after       Gamma(" << num(t.after.a) << ", " << num(t.after.b) << "), E[K] "
       << num(t.mean_K_after) << ", Var[K] " << num(t.var_K_after) << ", dominance "
       << num(t.dominance_after) << "\n";
  }
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  os << "\n" << render_checklist(r) << "\n";
  return os.str();
}

inline std::string render_bounds_text(const MarginalBoundReport& m) {
  using detail::num;
  std::ostringstream os;
  os << "Stage-1 proxy error bounds at J = " << m.J << ", Gamma(" << num(m.hyper.a) << ", "
     << num(m.hyper.b) << ")\n";
  os << "E[E1] (Poissonization):   " << num(m.mixed_e1) << "\n";
  os << "E[E2] (linearization):    " << num(m.mixed_e2) << "\n";
  os << "TV bound:                 " << num(m.total_tv_bound) << "\n";
  os << "E[sqrt(alpha)]:           " << num(m.e_sqrt_alpha) << "\n";
  os << "Mean coupling bound:      " << num(m.mean_coupling_bound) << " (worst case)\n";
  os << "Variance coupling bound:  " << num(m.variance_coupling_bound) << " (worst case)\n";
  os << "Guidance:                 " << m.guidance << "\n";
  return os.str();
}

inline std::string render_validation_text(const std::vector<ValidationCheck>& checks) {
  using detail::num;
  std::ostringstream os;
  os << std::left << std::setw(14) << "quantity" << std::setw(14) << "closed_form" << std::setw(14)
     << "monte_carlo" << std::setw(12) << "std_error" << std::setw(9) << "z"
     << "result\n";
  for (const auto& c : checks) {
    os << std::setw(14) << c.name << std::setw(14) << num(c.closed_form) << std::setw(14)
       << num(c.mc_estimate) << std::setw(12) << num(c.std_error) << std::setw(9)
       << detail::fixed(c.z, 2) << (c.pass ? "pass" : "FAIL") << "\n";
  }
  return os.str();
}

inline constexpr const char* kFrontierHeader = "lambda,a,b,mean_K,var_K,d1,dominance";

inline std::string frontier_csv(const std::vector<ParetoPoint>& points) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << kFrontierHeader << "\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : points) {
    const bool ok = !p.error.has_value();
    os << p.lambda << ',' << (ok ? p.hyper.a : nan) << ',' << (ok ? p.hyper.b : nan) << ','
       << (ok ? p.achieved_mean_K : nan) << ',' << (ok ? p.achieved_var_K : nan) << ','
       << (ok ? p.d1 : nan) << ',' << (ok ? p.dominance : nan) << "\n";
  }
  return os.str();
}

inline std::vector<ParetoPoint> parse_frontier_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kFrontierHeader) {
    throw InputError("frontier CSV header must be '" + std::string(kFrontierHeader) + "'");
  }
  std::vector<ParetoPoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) v.push_back(std::strtod(cell.c_str(), nullptr));
    if (v.size() != 7) throw InputError("frontier CSV row must have 7 fields: " + line);
    ParetoPoint p;
    p.lambda = v[0];
    p.hyper = {v[1], v[2]};
    p.achieved_mean_K = v[3];
    p.achieved_var_K = v[4];
    p.d1 = v[5];
    p.dominance = v[6];
    if (std::isnan(v[1])) p.error = "failed";
    out.push_back(p);
  }
  return out;
}

}  // namespace dpcalib
