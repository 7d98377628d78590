#include "plan.hpp"

#include "tactica/errors.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace tactica::cli {

namespace {

using Vector = Eigen::VectorXd;

constexpr std::pair<Command, const char*> kCommands[] = {
    {Command::Simulate, "simulate"}, {Command::Verbalize, "verbalize"}, {Command::Tactics, "tactics"},
    {Command::Predict, "predict"},   {Command::RepDyn, "repdyn"},       {Command::Invert, "invert"},
};

void dump_to(std::string& out, const Json& j, int indent, int depth) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(k).dump();
        out += indent < 0 ? ":" : ": ";
        dump_to(out, v, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        if (flat && !first && indent >= 0) out += ' ';
        first = false;
        if (!flat) newline(depth + 1);
        dump_to(out, v, indent, depth + 1);
      }
      if (!flat) newline(depth);
      out += ']';
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? format_number(v) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

std::string dump_line(const Json& j) {
  std::string out;
  dump_to(out, j, -1, 0);
  return out;
}

Json vec_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

/// CSV with a header row; every number printed by format_number.
class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
    text_ += '\n';
  }
  Csv& num(double v) {
    sep();
    text_ += format_number(v);
    return *this;
  }
  Csv& nums(const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) num(v[i]);
    return *this;
  }
  Csv& str(const std::string& s) {
    sep();
    text_ += s;
    return *this;
  }
  void end() {
    text_ += '\n';
    cell_ = 0;
  }
  const std::string& text() const { return text_; }

 private:
  void sep() {
    if (cell_++) text_ += ',';
  }
  std::size_t cell_ = 0;
  std::string text_;
};

void add_columns(std::vector<std::string>& h, const std::string& name, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) h.push_back(name + "[" + std::to_string(i) + "]");
}

std::size_t width(const std::vector<Vector>& v) { return v.empty() ? 0 : static_cast<std::size_t>(v.front().size()); }

/// Artifacts are assembled in memory, then written and hashed in name order.
struct Output {
  std::map<std::string, std::string> files;
  Json summary = Json::object();
};

std::string trajectory_csv(const game::StateTrajectory& tr) {
  std::vector<std::string> h{"t"};
  add_columns(h, "phi", width(tr.phi));
  add_columns(h, "dphi", width(tr.dphi));
  if (tr.has_controls) {
    add_columns(h, "u0", width(tr.u0));
    add_columns(h, "u", width(tr.u));
    add_columns(h, "eps", width(tr.eps));
  }
  Csv csv(h);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    csv.num(tr.t[k]).nums(tr.phi[k]).nums(tr.dphi[k]);
    if (tr.has_controls) csv.nums(tr.u0[k]).nums(tr.u[k]).nums(tr.eps[k]);
    csv.end();
  }
  return csv.text();
}

std::string windows_csv(const std::vector<verbal::WindowRecord>& windows) {
  std::vector<std::string> h{"n", "t_start", "t_end"};
  const std::size_t no = windows.empty() ? 0 : static_cast<std::size_t>(windows.front().omega.size());
  const std::size_t nv = windows.empty() ? 0 : static_cast<std::size_t>(windows.front().v.size());
  add_columns(h, "omega", no);
  add_columns(h, "v", nv);
  h.push_back("cell");
  Csv csv(h);
  for (const auto& w : windows) {
    csv.num(w.index).num(w.t_start).num(w.t_end).nums(w.omega).nums(w.v).str(w.cell_label);
    csv.end();
  }
  return csv.text();
}

std::string comments_jsonl(const std::vector<tactics::CommentState>& stream) {
  std::string out;
  for (const auto& c : stream) {
    Json j;
    j["n"] = c.index;
    j["theta"] = vec_json(c.theta);
    if (!c.class_label.empty()) j["class"] = c.class_label;
    if (c.eta.size()) j["eta"] = vec_json(c.eta);
    if (!c.delta_label.empty()) j["transition"] = c.delta_label;
    out += dump_line(j) + '\n';
  }
  return out;
}

game::StateTrajectory simulate_system(const Plan& plan) {
  return game::simulate(plan.system->system, nullptr, plan.run.t0, plan.run.t1, plan.run.dt);
}

void run_simulate(const Plan& plan, Output& out) {
  const auto tr = simulate_system(plan);
  out.files["trajectory.csv"] = trajectory_csv(tr);
  auto& s = out.summary;
  s["samples"] = tr.size();
  s["final_t"] = tr.t.back();
  s["final_phi"] = vec_json(tr.phi.back());

  auto assoc = game::associated_ordinary_game(plan.system->system);
  game::replay_epsilon(assoc, tr);
  const auto replay = game::simulate(assoc, nullptr, plan.run.t0, plan.run.t1, plan.run.dt);
  s["replay_deviation"] = game::max_state_deviation(tr, replay);

  if (!plan.system->system.invariants.empty()) {
    Json inv = Json::object();
    for (const auto& d : game::check_indeterminate_invariants(tr, plan.system->system.invariants)) {
      inv[d.name] = {{"max_drift", d.max_drift}, {"violated", d.violated}};
    }
    s["invariants"] = inv;
  }
}

void run_verbalize(const Plan& plan, Output& out) {
  const auto& vp = *plan.verbal;
  const auto tr = simulate_system(plan);
  Json partition = Json::object();
  std::vector<double> grid = vp.grid;
  if (vp.complex) {
    const auto transitions = verbal::detect_partition({tr.t, tr.eps}, *vp.complex);
    partition["transitions"] = transitions;
    const auto snapped = verbal::partition_grid(tr.t, transitions);
    partition["partition_grid"] = snapped;
    if (grid.empty()) grid = snapped;
    out.summary["transitions"] = transitions.size();
  }
  partition["grid"] = grid;
  out.files["partition.json"] = dump(partition);

  const auto windows = verbal::build_windows(tr, grid, vp.omega, vp.v, vp.complex ? &*vp.complex : nullptr);
  out.files["windows.csv"] = windows_csv(windows);
  out.summary["windows"] = windows.size();

  using R = VerbalPlan::Recurrence;
  if (vp.recurrence == R::Fit) {
    if (vp.train < 2 || vp.train >= windows.size()) {
      throw ConfigError("recurrence.train must leave at least one held-out window (have " +
                        std::to_string(windows.size()) + " windows)");
    }
    const std::vector<verbal::WindowRecord> train(windows.begin(), windows.begin() + static_cast<long>(vp.train));
    const std::vector<verbal::WindowRecord> held(windows.begin() + static_cast<long>(vp.train) - 1, windows.end());
    const auto map = verbal::fit_recurrence(train);
    const auto rep = verbal::verify_recurrence(held, map, vp.tolerance);
    Json coeff = Json::array();
    for (Eigen::Index i = 0; i < map.coefficients.rows(); ++i) coeff.push_back(vec_json(map.coefficients.row(i).transpose()));
    out.summary["recurrence"] = {{"mode", "fit"},
                                 {"coefficients", coeff},
                                 {"rank", map.rank},
                                 {"rank_deficient", map.rank_deficient},
                                 {"fit_residual", map.residual_norm},
                                 {"held_out", held.size() - 1},
                                 {"max_residual", rep.max_residual},
                                 {"pass", rep.pass}};
    out.summary["recurrence_max_residual"] = rep.max_residual;
  } else if (vp.recurrence == R::Declared) {
    const auto rep = verbal::verify_recurrence(windows, vp.declared, vp.tolerance);
    out.summary["recurrence"] = {{"mode", "declared"}, {"max_residual", rep.max_residual}, {"pass", rep.pass}};
    out.summary["recurrence_max_residual"] = rep.max_residual;
  }
}

void run_tactics(const Plan& plan, Output& out) {
  const auto& tp = *plan.tactics;
  const auto r = tactics::run_commented_game(tp.game, tp.dialect ? &*tp.dialect : nullptr);
  out.files["comments.jsonl"] = comments_jsonl(r.comments);
  out.files["windows.csv"] = windows_csv(r.windows);
  out.files["trajectory.csv"] = trajectory_csv(r.trajectory);
  out.summary["windows"] = r.windows.size();
  out.summary["final_theta"] = vec_json(r.comments.back().theta);
  if (!r.comments.back().class_label.empty()) out.summary["final_class"] = r.comments.back().class_label;
}

void run_predict(const Plan& plan, const Overrides& overrides, Output& out) {
  const auto& pp = *plan.predict;
  const auto& sys = plan.system->system;
  const auto& run = plan.run;
  if (overrides.pipeline) {
    if (!pp.pipeline_horizon) throw ConfigError("--pipeline needs a prediction.pipeline section");
    const auto rep = predict::strategic_pipeline(sys, pp.pipeline_epsilon, run.t0, run.t1, run.dt, *pp.pipeline_horizon);
    const std::size_t n = rep.rows.empty() ? 0 : static_cast<std::size_t>(rep.rows.front().truth.size());
    std::vector<std::string> h{"t"};
    add_columns(h, "long_term", n);
    add_columns(h, "short_term", n);
    add_columns(h, "blended", n);
    add_columns(h, "truth", n);
    Csv csv(h);
    for (const auto& row : rep.rows) {
      csv.num(row.t).nums(row.long_term);
      if (row.short_term) csv.nums(*row.short_term);
      else
        for (std::size_t i = 0; i < n; ++i) csv.str("");
      csv.nums(row.blended).nums(row.truth);
      csv.end();
    }
    out.files["prognosis.csv"] = csv.text();
    out.summary["corrected_error"] = rep.corrected_error;
    out.summary["uncorrected_error"] = rep.uncorrected_error;
    out.summary["improvement"] = rep.improvement;
    return;
  }

  const auto tr = simulate_system(plan);
  out.files["trajectory.csv"] = trajectory_csv(tr);
  if (pp.model) {
    const auto preds = predict::rolling_predictions(*pp.model, tr, pp.horizon);
    const auto rows = predict::interactivize_by_prediction(tr, preds, pp.horizon);
    const std::size_t nu = rows.empty() ? 0 : static_cast<std::size_t>(rows.front().u.size());
    std::vector<std::string> h{"t"};
    add_columns(h, "u", nu);
    add_columns(h, "u0_predicted", nu);
    add_columns(h, "deviation", nu);
    Csv csv(h);
    double max_dev = 0.0;
    for (const auto& r : rows) {
      csv.num(r.t).nums(r.u).nums(r.u0).nums(r.deviation()).end();
      max_dev = std::max(max_dev, r.deviation().lpNorm<Eigen::Infinity>());
    }
    out.files["feedback.csv"] = csv.text();
    out.summary["feedback_rows"] = rows.size();
    out.summary["max_deviation"] = max_dev;
    if (pp.family) {
      const auto est = predict::fit_feedback(rows, *pp.family);
      out.summary["feedback_fit"] = {{"coefficients", vec_json(est.coefficients)},
                                     {"residual_norm", est.residual_norm},
                                     {"iterations", est.iterations}};
    }
  }
  if (pp.filter) {
    const auto r = predict::unravel_by_filtering(tr, pp.component, *pp.filter, pp.family ? &*pp.family : nullptr);
    Csv csv({"t", "u", "u0_filtered", "u0_true", "residual"});
    const auto c = static_cast<Eigen::Index>(pp.component);
    // Interior: away from both ends by a fifth of the run.
    const double margin = 0.2 * (run.t1 - run.t0);
    double interior = 0.0;
    for (std::size_t k = 0; k < r.t.size(); ++k) {
      csv.num(r.t[k]).num(tr.u[k][c]).num(r.u0[k]).num(tr.u0[k][c]).num(r.residual[k]).end();
      if (r.t[k] > run.t0 + margin && r.t[k] < run.t1 - margin) {
        interior = std::max(interior, std::abs(r.u0[k] - tr.u0[k][c]));
      }
    }
    out.files["unravel.csv"] = csv.text();
    out.summary["u0_interior_deviation"] = interior;
    if (r.estimate) {
      out.summary["unravel_fit"] = {{"coefficients", vec_json(r.estimate->coefficients)},
                                    {"residual_norm", r.estimate->residual_norm},
                                    {"iterations", r.estimate->iterations}};
      out.summary["coefficient_0"] = r.estimate->coefficients[0];
    }
  }
}

Json matrix_json(const algebra::Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(Json::array({m(i, k).real(), m(i, k).imag()}));
    rows.push_back(row);
  }
  return rows;
}

void run_repdyn(const Plan& plan, Output& out) {
  const auto& rp = *plan.repdyn;
  const auto r = algebra::run_tactical_repdyn(rp.spec, *rp.dialect);

  Csv res({"t", "residual", "class"});
  double max_res = 0.0, after = 0.0;
  const double last_switch = r.transitions.empty() ? -INFINITY : r.transitions.back().time;
  for (std::size_t k = 0; k < r.t.size(); ++k) {
    res.num(r.t[k]).num(r.residual[k]).str(r.labels[k]).end();
    max_res = std::max(max_res, r.residual[k]);
    if (r.t[k] >= last_switch) after = std::max(after, r.residual[k]);
  }
  out.files["residual.csv"] = res.text();

  Json tuples = Json::array();
  for (std::size_t k = 0; k < r.t.size(); ++k) {
    const bool keep = rp.tuple_stride ? k % rp.tuple_stride == 0 : k == 0;
    if (!keep && k + 1 != r.t.size()) continue;
    Json x = Json::array();
    for (const auto& m : r.X[k].X) x.push_back(matrix_json(m));
    tuples.push_back({{"t", r.t[k]}, {"class", r.labels[k]}, {"X", x}});
  }
  out.files["tuples.json"] = dump(tuples);
  out.files["comments.jsonl"] = comments_jsonl(r.stream);

  Json partition = {{"equivalence", "algebra class label equality"}, {"intervals", Json::array()}};
  for (const auto& iv : algebra::equivalence_partition(r.t, r.labels)) {
    partition["intervals"].push_back(
        {{"start", iv.start}, {"end", iv.end}, {"closed_end", iv.closed_end}, {"class", iv.label}});
  }
  out.files["partition.json"] = dump(partition);

  Json transitions = Json::array();
  for (const auto& tr : r.transitions) {
    transitions.push_back({{"window", tr.window},
                           {"time", tr.time},
                           {"from", tr.from},
                           {"to", tr.to},
                           {"insolvable", tr.insolvable},
                           {"residual", tr.residual}});
  }
  auto& s = out.summary;
  s["samples"] = r.t.size();
  s["max_residual"] = max_res;
  s["max_residual_after_last_transition"] = after;
  s["transition_count"] = r.transitions.size();
  s["transitions"] = transitions;
  s["final_class"] = r.labels.back();
}

void run_invert(const Plan& plan, Output& out) {
  const auto sol = algebra::solve_inverse_problem(*plan.inverse);
  const auto slot = plan.inverse->slot;
  std::vector<std::string> h{"t"};
  const std::size_t d = plan.inverse->phi.size();
  for (std::size_t i = 0; i < d; ++i) {
    h.push_back("x" + std::to_string(i + 1) + "_slot");
    h.push_back("x" + std::to_string(i + 1) + "_scalar");
  }
  Csv csv(h);
  for (std::size_t k = 0; k < sol.trace.t.size(); ++k) {
    csv.num(sol.trace.t[k]);
    for (std::size_t i = 0; i < d; ++i) {
      csv.num(sol.trace.X[k].X[i](slot, slot).real()).num(sol.scalar_reference[k][static_cast<Eigen::Index>(i)]);
    }
    csv.end();
  }
  out.files["slot.csv"] = csv.text();
  double max_res = 0.0;
  for (double r : sol.trace.residual) max_res = std::max(max_res, r);
  auto& s = out.summary;
  s["symbols"] = sol.symbols;
  s["symbolic_match"] = sol.report.symbolic_match;
  s["pointwise_deviation"] = sol.report.pointwise_deviation;
  s["slot_deviation"] = sol.report.slot_deviation;
  s["self_convergence"] = sol.report.self_convergence;
  s["max_residual"] = max_res;
}

Json check_expectations(const std::vector<Expectation>& expect, const Json& summary, bool& all) {
  Json checks = Json::array();
  all = true;
  for (const auto& e : expect) {
    Json c = {{"metric", e.metric}};
    const bool present = summary.contains(e.metric) && summary[e.metric].is_number();
    bool pass = present;
    if (present) {
      const double v = summary[e.metric].get<double>();
      c["value"] = v;
      if (e.min) pass = pass && v >= *e.min, c["min"] = *e.min;
      if (e.max) pass = pass && v <= *e.max, c["max"] = *e.max;
      if (e.value) pass = pass && std::abs(v - *e.value) <= e.tol, c["expected"] = *e.value, c["tol"] = e.tol;
    } else {
      c["value"] = nullptr;
    }
    c["pass"] = pass;
    all = all && pass;
    checks.push_back(c);
  }
  return checks;
}

Json overrides_json(const Overrides& o) {
  Json j = Json::object();
  if (o.dt) j["dt"] = *o.dt;
  if (o.seed) j["seed"] = *o.seed;
  if (o.tolerance) j["tolerance"] = *o.tolerance;
  if (o.pipeline) j["pipeline"] = true;
  return j;
}

std::string supported_list(const std::vector<Command>& cs) {
  std::string s;
  for (auto c : cs) s += (s.empty() ? "" : ", ") + command_name(c);
  return s.empty() ? "nothing" : s;
}

}  // namespace

std::optional<Command> parse_command(std::string_view name) {
  for (const auto& [c, n] : kCommands) {
    if (name == n) return c;
  }
  return std::nullopt;
}

std::string command_name(Command c) {
  for (const auto& [k, n] : kCommands) {
    if (k == c) return n;
  }
  return "?";
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string dump(const Json& j) {
  std::string out;
  dump_to(out, j, 2, 0);
  out += '\n';
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr)) {
    throw std::runtime_error("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

RunResult run(const Scenario& scenario, Command command, const std::filesystem::path& out_dir,
              const Overrides& overrides) {
  RunResult result;
  Json& report = result.report;
  report["schema"] = kSchema;
  report["scenario"] = scenario.name;
  report["command"] = command_name(command);
  report["digest"] = sha256_hex(scenario.text + "\n" + dump_line(overrides_json(overrides)));
  report["overrides"] = overrides_json(overrides);

  Output out;
  try {
    Issues issues;
    const Plan plan = build_plan(scenario.doc, overrides, issues);
    if (!issues.errors.empty()) throw ValidationError(issues.errors);
    const auto supports = supported_commands(plan);
    if (std::find(supports.begin(), supports.end(), command) == supports.end()) {
      result.exit_code = kValidation;
      result.message = "scenario '" + scenario.name + "' does not support '" + command_name(command) +
                       "'; it supports: " + supported_list(supports);
    } else {
      switch (command) {
        case Command::Simulate: run_simulate(plan, out); break;
        case Command::Verbalize: run_verbalize(plan, out); break;
        case Command::Tactics: run_tactics(plan, out); break;
        case Command::Predict: run_predict(plan, overrides, out); break;
        case Command::RepDyn: run_repdyn(plan, out); break;
        case Command::Invert: run_invert(plan, out); break;
      }
      bool all = true;
      report["checks"] = check_expectations(plan.expect, out.summary, all);
      report["checks_passed"] = all;
    }
  } catch (const StrandedClassError& e) {
    result.exit_code = kInsolvable;
    result.message = std::string("stranded in class '") + e.class_label() + "' at window " +
                     std::to_string(e.window()) + ": " + e.what();
  } catch (const InsolvableError& e) {
    result.exit_code = kInsolvable;
    result.message = std::string("insolvable at t = ") + format_number(e.time()) + ": " + e.what();
  } catch (const ValidationError& e) {
    result.exit_code = kValidation;
    result.message = e.what();
  } catch (const ConfigError& e) {
    result.exit_code = kValidation;
    result.message = std::string("configuration error: ") + e.what();
  } catch (const ParseError& e) {
    result.exit_code = kValidation;
    result.message = std::string("expression error near '") + e.token() + "': " + e.what();
  } catch (const DivergenceError& e) {
    result.exit_code = kRuntime;
    result.message = std::string("diverged after t = ") + format_number(e.last_valid_time()) + ": " + e.what();
  } catch (const DomainError& e) {
    result.exit_code = kRuntime;
    result.message = std::string("domain error at t = ") + format_number(e.time()) + ": " + e.what();
  } catch (const std::exception& e) {
    result.exit_code = kRuntime;
    result.message = e.what();
  }

  report["status"] = result.exit_code == kOk ? "ok" : "error";
  report["exit_code"] = result.exit_code;
  if (result.exit_code != kOk) {
    report["message"] = result.message;
    out.files.clear();
  }
  report["summary"] = out.summary;
  Json hashes = Json::object();
  for (const auto& [name, text] : out.files) hashes[name] = sha256_hex(text);
  report["artifacts"] = hashes;

  std::filesystem::create_directories(out_dir);
  out.files["report.json"] = dump(report);
  for (const auto& [name, text] : out.files) {
    std::ofstream f(out_dir / name, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + (out_dir / name).string());
    result.artifacts.push_back(name);
  }
  if (result.exit_code == kOk) result.message = "ok";
  return result;
}

namespace {

int run_one(const std::string& path, Command command, const std::filesystem::path& out_dir,
            const Overrides& overrides, std::ostream& out, std::ostream& err) {
  std::ostringstream o, e;
  int code = kOk;
  try {
    const auto start = std::chrono::steady_clock::now();
    const auto scenario = load_scenario(path, overrides);
    for (const auto& w : scenario.warnings) e << path << ": warning: " << w << '\n';
    const auto r = run(scenario, command, out_dir, overrides);
    const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;
    code = r.exit_code;
    if (code == kOk) {
      o << path << ": " << command_name(command) << " ok, " << r.artifacts.size() << " files in " << out_dir.string()
        << " (wall " << std::fixed << std::setprecision(3) << wall.count() << " s)\n";
    } else {
      e << path << ": " << r.message << '\n';
    }
  } catch (const ValidationError& ex) {
    code = kValidation;
    e << path << ": " << ex.what() << '\n';
  } catch (const std::exception& ex) {
    code = kRuntime;
    e << path << ": " << ex.what() << '\n';
  }
  out << o.str();
  err << e.str();
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tactica: interactive games, verbalization, tactics and representative dynamics"};
  std::string command_text, scenario_path, out_dir, batch;
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  bool pipeline = false;
  app.add_option("command", command_text, "simulate | verbalize | tactics | predict | repdyn | invert")->required();
  app.add_option("--scenario", scenario_path, "scenario JSON file");
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--dt", dt, "integration step override");
  app.add_option("--seed", seed, "seed recorded in the report");
  app.add_option("--batch", batch, "comma-separated scenario files, run concurrently");
  app.add_flag("--pipeline", pipeline, "predict: run the prognosis pipeline");

  std::vector<std::string> argv_store{"tactica"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kValidation;
  }

  const auto command = parse_command(command_text);
  if (!command) {
    err << "usage error: unknown command '" << command_text << "'\n";
    return kValidation;
  }
  if (scenario_path.empty() == batch.empty()) {
    err << "usage error: give exactly one of --scenario or --batch\n";
    return kValidation;
  }
  Overrides overrides;
  overrides.dt = dt;
  overrides.seed = seed;
  overrides.pipeline = pipeline;
  if (const char* env = std::getenv(kToleranceEnv)) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end == env || *end != '\0' || !(v > 0.0)) {
      err << "usage error: " << kToleranceEnv << "='" << env << "' is not a positive number\n";
      return kValidation;
    }
    overrides.tolerance = v;
  }

  if (!scenario_path.empty()) return run_one(scenario_path, *command, out_dir, overrides, out, err);

  std::vector<std::string> paths;
  std::stringstream ss(batch);
  for (std::string p; std::getline(ss, p, ',');) {
    if (!p.empty()) paths.push_back(p);
  }
  std::vector<std::string> stems;
  for (const auto& p : paths) {
    const auto stem = std::filesystem::path(p).stem().string();
    if (std::find(stems.begin(), stems.end(), stem) != stems.end()) {
      err << "usage error: two batch scenarios share the output name '" << stem << "'\n";
      return kValidation;
    }
    stems.push_back(stem);
  }
  // Each run owns its directory and its output buffers.
  std::vector<std::ostringstream> outs(paths.size()), errs(paths.size());
  std::vector<std::future<int>> runs;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    runs.push_back(std::async(std::launch::async, [&, i] {
      return run_one(paths[i], *command, std::filesystem::path(out_dir) / stems[i], overrides, outs[i], errs[i]);
    }));
  }
  int code = kOk;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    code = std::max(code, runs[i].get());
    out << outs[i].str();
    err << errs[i].str();
  }
  return code;
}

}  // namespace tactica::cli
