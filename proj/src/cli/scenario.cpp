#include "plan.hpp"

#include "tactica/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tactica::cli {

namespace {

using Vector = Eigen::VectorXd;

/// Typed access to one JSON object. Problems are recorded, never thrown;
/// `ok()` tells whether every read so far succeeded. Keys never read are
/// reported as warnings by `finish`.
class Reader {
 public:
  Reader(const Json* j, std::string path, Issues& issues) : j_(j), path_(std::move(path)), issues_(issues) {
    if (j_ && !j_->is_object()) {
      fail("", "expected an object");
      j_ = nullptr;
    }
  }
  ~Reader() { finish(); }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_ + "/" + key; }
  bool ok() const { return ok_; }
  bool present() const { return j_ != nullptr; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_ && j_->contains(key);
  }
  const Json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    return &(*j_)[key];
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) {
    const Json* v = raw(key);
    if (!v) return missing(key, fallback.value_or(0.0), fallback.has_value());
    if (!v->is_number()) return fail(key, "expected a number"), 0.0;
    return v->get<double>();
  }

  std::size_t count(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) {
    const Json* v = raw(key);
    if (!v) return static_cast<std::size_t>(missing(key, static_cast<double>(fallback.value_or(0)), fallback.has_value()));
    if (!v->is_number_integer() || v->get<long long>() < 0) return fail(key, "expected a non-negative integer"), 0;
    return v->get<std::size_t>();
  }

  bool flag(const std::string& key, bool fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_boolean()) return fail(key, "expected true or false"), fallback;
    return v->get<bool>();
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    const Json* v = raw(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, "missing");
      return "";
    }
    if (!v->is_string()) return fail(key, "expected a string"), "";
    return v->get<std::string>();
  }

  /// A string or a list of strings.
  std::vector<std::string> texts(const std::string& key, std::optional<std::vector<std::string>> fallback = std::nullopt) {
    const Json* v = raw(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, "missing");
      return {};
    }
    if (v->is_string()) return {v->get<std::string>()};
    if (!v->is_array()) return fail(key, "expected a string or a list of strings"), std::vector<std::string>{};
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) return fail(key, "expected a list of strings"), std::vector<std::string>{};
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
    const Json* v = raw(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(key, "missing");
      return {};
    }
    if (v->is_number()) return {v->get<double>()};
    if (!v->is_array()) return fail(key, "expected a list of numbers"), std::vector<double>{};
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) return fail(key, "expected a list of numbers"), std::vector<double>{};
      out.push_back(e.get<double>());
    }
    return out;
  }

  Vector vec(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
    const auto v = numbers(key, std::move(fallback));
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  /// Elements of an array (empty when absent and optional).
  std::vector<const Json*> list(const std::string& key, bool required) {
    const Json* v = raw(key);
    if (!v) {
      if (required) fail(key, "missing");
      return {};
    }
    if (!v->is_array()) return fail(key, "expected a list"), std::vector<const Json*>{};
    std::vector<const Json*> out;
    for (const auto& e : *v) out.push_back(&e);
    return out;
  }

  void fail(const std::string& key, const std::string& message) {
    ok_ = false;
    issues_.error(key.empty() ? path_ : at(key), message);
  }
  void mark_failed() { ok_ = false; }

 private:
  double missing(const std::string& key, double fallback, bool has_fallback) {
    if (has_fallback) return fallback;
    fail(key, "missing");
    return 0.0;
  }

  void finish() {
    if (!j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (!seen_.count(k)) issues_.warning(at(k), "unknown key ignored");
    }
  }

  const Json* j_;
  std::string path_;
  Issues& issues_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

std::vector<double> make_grid(Reader& r, const std::string& key, const RunParams& run, bool required,
                              Issues& issues) {
  const Json* g = r.raw(key);
  if (!g) {
    if (required) r.fail(key, "missing");
    return {};
  }
  std::vector<double> grid;
  if (g->is_object()) {
    Reader gr(g, r.at(key), issues);
    const double step = gr.number("step");
    if (!gr.ok()) return {};
    if (!(step > 0.0)) {
      gr.fail("step", "must be positive");
      return {};
    }
    const double n = (run.t1 - run.t0) / step;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n) || std::round(n) < 1) {
      gr.fail("step", "does not divide [t0, t1]");
      return {};
    }
    for (long k = 0; k <= std::lround(n); ++k) grid.push_back(run.t0 + static_cast<double>(k) * step);
    grid.back() = run.t1;
    return grid;
  }
  grid = r.numbers(key);
  if (!r.ok()) return {};
  if (grid.size() < 2) r.fail(key, "needs at least two points");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) {
      r.fail(key, "must be strictly increasing");
      break;
    }
  }
  return grid;
}


verbal::FunctionalKind functional_kind(Reader& r, const std::string& key) {
  const auto k = r.text(key, std::string("mean"));
  if (k == "mean") return verbal::FunctionalKind::Mean;
  if (k == "integral") return verbal::FunctionalKind::Integral;
  if (k == "endpoint") return verbal::FunctionalKind::Endpoint;
  if (k == "quadratic_moment") return verbal::FunctionalKind::QuadraticMoment;
  r.fail(key, "unknown functional kind '" + k + "' (mean, integral, endpoint, quadratic_moment)");
  return verbal::FunctionalKind::Mean;
}

std::optional<verbal::WindowFunctional> functional(Reader& parent, const std::string& key, const game::Dims& dims,
                                                   std::size_t* size, Issues& issues) {
  const Json* j = parent.raw(key);
  if (!j) {
    parent.fail(key, "missing");
    return std::nullopt;
  }
  Reader r(j, parent.at(key), issues);
  const auto kind = functional_kind(r, "kind");
  const auto of = r.texts("of");
  if (!r.ok()) return std::nullopt;
  std::optional<verbal::WindowFunctional> out;
  issues.guard(r.at("of"), [&] { out = verbal::make_functional(kind, of, dims); });
  if (size) *size = of.size();
  return out;
}

std::optional<tactics::DialecticalObject> dialectic(Reader& r, const std::string& label,
                                                    const std::vector<std::string>& classes, Issues& issues,
                                                    const std::string& initial_class, std::size_t eta_dim) {
  std::optional<tactics::DialecticalObject> d;
  if (classes.empty()) {
    r.fail("classes", "needs at least one class");
    return d;
  }
  if (!initial_class.empty() && std::find(classes.begin(), classes.end(), initial_class) == classes.end()) {
    r.fail("initial_class", "unknown class '" + initial_class + "'");
  }
  d.emplace(label, classes);
  const auto rows = r.list("transitions", false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Reader t(rows[i], r.at("transitions") + "/" + std::to_string(i), issues);
    const auto from = t.text("from");
    const auto to = t.text("to");
    const auto when = t.texts("when", std::vector<std::string>{});
    const auto eta = t.texts("eta", std::vector<std::string>{});
    if (!t.ok()) continue;
    bool known = true;
    for (const auto& [key, name] : {std::pair{"from", from}, std::pair{"to", to}}) {
      if (std::find(classes.begin(), classes.end(), name) == classes.end()) {
        t.fail(key, "unknown class '" + name + "'");
        known = false;
      }
    }
    if (!eta.empty() && eta.size() != eta_dim) {
      t.fail("eta", "has " + std::to_string(eta.size()) + " components, eta has " + std::to_string(eta_dim));
      known = false;
    }
    if (!known) continue;
    issues.guard(t.path(), [&] { d->add(from, when, to, eta); });
  }
  return d;
}

std::optional<SystemPlan> build_system(Reader& r, Issues& issues) {
  SystemPlan plan;
  auto& s = plan.system;
  s.state_dim = r.count("state_dim", 1);
  if (s.state_dim == 0) r.fail("state_dim", "must be at least 1");
  s.initial_state = r.vec("initial", std::vector<double>(s.state_dim, 0.0));
  if (r.ok() && static_cast<std::size_t>(s.initial_state.size()) != s.state_dim) {
    r.fail("initial", "needs " + std::to_string(s.state_dim) + " values");
  }
  const auto dynamics = r.texts("dynamics");
  if (r.ok() && dynamics.size() != s.state_dim) r.fail("dynamics", "needs " + std::to_string(s.state_dim) + " components");
  s.lambda = r.vec("lambda", std::vector<double>{});
  const auto players = r.list("players", true);
  if (r.present() && players.empty()) r.fail("players", "needs at least one player");

  struct Decl {
    std::size_t control_dim = 1;
    std::size_t eps_dim = 1;
  };
  std::vector<Decl> decl;
  for (std::size_t i = 0; i < players.size(); ++i) {
    Decl d;
    if (players[i]->is_object()) {
      if (players[i]->contains("control_dim") && (*players[i])["control_dim"].is_number_unsigned()) {
        d.control_dim = (*players[i])["control_dim"].get<std::size_t>();
      }
      if (players[i]->contains("epsilon_dim") && (*players[i])["epsilon_dim"].is_number_unsigned()) {
        d.eps_dim = (*players[i])["epsilon_dim"].get<std::size_t>();
      }
    }
    decl.push_back(d);
  }
  auto& tot = plan.totals;
  tot.phi = s.state_dim;
  tot.lambda = static_cast<std::size_t>(s.lambda.size());
  tot.u = tot.u0 = tot.eps = 0;
  for (const auto& d : decl) {
    tot.u += d.control_dim;
    tot.u0 += d.control_dim;
    tot.eps += d.eps_dim;
  }
  if (tot.u == 0) tot.u = tot.u0 = 1;
  if (tot.eps == 0) tot.eps = 1;
  bool ok = r.ok();
  if (r.ok()) {
    ok = issues.guard(r.at("dynamics"), [&] { s.dynamics = game::make_dynamics(dynamics, tot); }) && ok;
  }

  for (std::size_t i = 0; i < players.size(); ++i) {
    Reader p(players[i], r.at("players") + "/" + std::to_string(i), issues);
    game::Player player;
    player.control_dim = p.count("control_dim", 1);
    player.epsilon.dim = p.count("epsilon_dim", 1);
    if (player.control_dim == 0) p.fail("control_dim", "must be at least 1");
    if (player.epsilon.dim == 0) p.fail("epsilon_dim", "must be at least 1");
    player.policy.player = static_cast<int>(i + 1);
    player.policy.description = p.text("name", "player" + std::to_string(i + 1));
    plan.player_names.push_back(player.policy.description);
    const auto signal = p.texts("signal", std::vector<std::string>(player.control_dim, "0"));
    std::vector<std::string> identity;
    for (std::size_t k = 0; k < player.control_dim; ++k) identity.push_back("u0[" + std::to_string(k) + "]");
    const auto coupling = p.texts("coupling", identity);
    const auto epsilon = p.texts("epsilon", std::vector<std::string>(player.epsilon.dim, "0"));
    const auto direction = p.text("direction", std::string("forward"));
    const auto solved = p.texts("solved", std::vector<std::string>{});
    if (direction != "forward" && direction != "inverse") p.fail("direction", "expected forward or inverse");
    if (direction == "inverse" && solved.empty()) p.fail("solved", "inverse couplings need the closed-form solution");
    for (const auto& [key, n, want] : {std::tuple{"signal", signal.size(), player.control_dim},
                                       std::tuple{"coupling", coupling.size(), player.control_dim},
                                       std::tuple{"epsilon", epsilon.size(), player.epsilon.dim}}) {
      if (p.ok() && n != want) p.fail(key, "needs " + std::to_string(want) + " components");
    }
    if (!p.ok()) {
      ok = false;
      continue;
    }
    game::Dims dims = tot;
    dims.u0 = player.control_dim;
    dims.eps = player.epsilon.dim;
    bool dphi_c = false, dphi_e = false, dphi_s = false;
    ok = issues.guard(p.at("signal"), [&] { player.policy.signal = game::make_signal(signal); }) && ok;
    ok = issues.guard(p.at("epsilon"), [&] { player.epsilon.form = game::make_epsilon(epsilon, dims, &dphi_e); }) && ok;
    if (direction == "inverse") {
      player.coupling.direction = game::Direction::Inverse;
      ok = issues.guard(p.at("coupling"),
                        [&] { player.coupling.known_form = game::make_inverse_coupling(coupling, dims, &dphi_c); }) &&
           ok;
      ok = issues.guard(p.at("solved"),
                        [&] { player.coupling.solved_form = game::make_coupling(solved, dims, &dphi_s); }) &&
           ok;
    } else {
      ok = issues.guard(p.at("coupling"),
                        [&] { player.coupling.known_form = game::make_coupling(coupling, dims, &dphi_c); }) &&
           ok;
    }
    player.coupling.derivative_order = (dphi_c || dphi_e || dphi_s) ? 1 : 0;
    s.players.push_back(std::move(player));
  }

  for (const auto* j : r.list("invariants", false)) {
    const auto idx = s.invariants.size();
    Reader iv(j, r.at("invariants") + "/" + std::to_string(idx), issues);
    const auto name = iv.text("name", "invariant" + std::to_string(idx + 1));
    const auto text = iv.text("expr");
    const double tol = iv.number("tolerance", 1e-6);
    if (!iv.ok()) {
      ok = false;
      continue;
    }
    ok = issues.guard(iv.at("expr"), [&] { s.invariants.push_back(game::make_invariant(name, text, tot, tol)); }) && ok;
  }
  if (!ok || !r.ok()) return std::nullopt;
  return plan;
}

std::optional<verbal::CellComplex> build_complex(Reader& parent, const std::string& key, std::size_t eps_dim,
                                                 Issues& issues) {
  const Json* j = parent.raw(key);
  if (!j) return std::nullopt;
  Reader r(j, parent.at(key), issues);
  const auto lower = r.vec("lower");
  const auto upper = r.vec("upper");
  std::vector<verbal::CellComplex::CellDecl> cells;
  const auto list = r.list("cells", true);
  for (std::size_t i = 0; i < list.size(); ++i) {
    Reader c(list[i], r.at("cells") + "/" + std::to_string(i), issues);
    verbal::CellComplex::CellDecl d;
    d.label = c.text("label");
    d.clauses = c.texts("when");
    if (c.ok()) cells.push_back(d);
    else r.mark_failed();
  }
  if (!r.ok()) return std::nullopt;
  if (static_cast<std::size_t>(lower.size()) != eps_dim || static_cast<std::size_t>(upper.size()) != eps_dim) {
    r.fail("", "box bounds need " + std::to_string(eps_dim) + " values (the epsilon dimension)");
    return std::nullopt;
  }
  std::optional<verbal::CellComplex> out;
  issues.guard(r.path(), [&] { out.emplace(eps_dim, lower, upper, cells); });
  return out;
}

std::optional<VerbalPlan> build_verbal(Reader& r, const RunParams& run, const game::Dims& tot, Issues& issues) {
  VerbalPlan plan;
  plan.complex = build_complex(r, "complex", tot.eps, issues);
  plan.grid = make_grid(r, "grid", run, false, issues);
  if (plan.grid.empty() && !r.has("complex")) r.fail("grid", "needs either a grid or a cell complex to partition by");
  auto omega = functional(r, "omega", tot, &plan.omega_dim, issues);
  auto v = functional(r, "v", tot, &plan.v_dim, issues);
  if (const Json* rec = r.raw("recurrence")) {
    Reader rr(rec, r.at("recurrence"), issues);
    const auto mode = rr.text("mode");
    plan.tolerance = rr.number("tolerance", 1e-6);
    if (mode == "fit") {
      plan.recurrence = VerbalPlan::Recurrence::Fit;
      plan.train = rr.count("train");
    } else if (mode == "declared") {
      plan.recurrence = VerbalPlan::Recurrence::Declared;
      const auto map = rr.texts("map");
      if (rr.ok() && map.size() != plan.omega_dim) {
        rr.fail("map", "needs " + std::to_string(plan.omega_dim) + " components");
      }
      if (rr.ok()) {
        issues.guard(rr.at("map"), [&] {
          expr::SymbolTable s;
          const auto op = s.add_vector("omega_prev", plan.omega_dim);
          const auto vv = s.add_vector("v", plan.v_dim);
          const auto e = expr::VectorExpression::compile(map, s);
          const auto slots = s.size();
          plan.declared.family = verbal::RecurrenceMap::Family::Declared;
          plan.declared.form = [=](const Vector& w, const Vector& vn, const verbal::WindowRecord&) {
            expr::Env env(slots);
            env.bind(op, w).bind(vv, vn);
            return e.eval(env);
          };
        });
      }
    } else if (rr.ok()) {
      rr.fail("mode", "expected fit or declared");
    }
    if (!rr.ok()) r.mark_failed();
  }
  if (!r.ok() || !omega || !v) return std::nullopt;
  plan.omega = *omega;
  plan.v = *v;
  return plan;
}

std::optional<TacticsPlan> build_tactics(Reader& r, const RunParams& run, const SystemPlan& sys, Issues& issues) {
  TacticsPlan plan;
  auto& g = plan.game;
  g.system = sys.system;
  g.dt = run.dt;
  g.grid = make_grid(r, "grid", run, true, issues);
  tactics::CommentDims dims;
  auto omega = functional(r, "omega", sys.totals, &dims.omega, issues);
  auto v = functional(r, "v", sys.totals, &dims.v, issues);
  g.initial.theta = r.vec("theta0");
  dims.theta = static_cast<std::size_t>(g.initial.theta.size());
  const auto update = r.texts("update");
  if (r.ok() && sys.totals.lambda != dims.theta) {
    r.fail("theta0", "comment has " + std::to_string(dims.theta) + " components, system lambda has " +
                         std::to_string(sys.totals.lambda));
  }
  if (r.ok() && omega && v) {
    issues.guard(r.at("update"), [&] { g.rule.update = tactics::make_comment_update(update, dims); });
  }
  if (const Json* dj = r.raw("dialectic")) {
    Reader d(dj, r.at("dialectic"), issues);
    const auto classes = d.texts("classes");
    g.initial.class_label = d.text("initial_class");
    g.initial.eta = d.vec("eta0", std::vector<double>{});
    if (d.ok()) {
      plan.dialect = dialectic(d, d.text("label", std::string("delta")), classes, issues, g.initial.class_label,
                               static_cast<std::size_t>(g.initial.eta.size()));
    }
    if (!d.ok()) r.mark_failed();
  }
  if (!r.ok() || !omega || !v || !g.rule.update) return std::nullopt;
  g.omega = *omega;
  g.v = *v;
  return plan;
}

std::optional<PredictPlan> build_predict(Reader& r, const SystemPlan& sys, Issues& issues) {
  PredictPlan plan;
  bool any = false;
  if (r.has("assumed_epsilon")) {
    any = true;
    plan.horizon = r.number("horizon");
    const auto assumed = r.list("assumed_epsilon", true);
    if (assumed.size() != sys.system.players.size()) {
      r.fail("assumed_epsilon", "needs one entry per player (" + std::to_string(sys.system.players.size()) + ")");
    } else {
      game::InteractiveSystem model = sys.system;
      for (std::size_t i = 0; i < assumed.size(); ++i) {
        const auto path = r.at("assumed_epsilon") + "/" + std::to_string(i);
        std::vector<std::string> texts;
        if (assumed[i]->is_string()) {
          texts = {assumed[i]->get<std::string>()};
        } else if (assumed[i]->is_array() &&
                   std::all_of(assumed[i]->begin(), assumed[i]->end(), [](const Json& e) { return e.is_string(); })) {
          for (const auto& e : *assumed[i]) texts.push_back(e.get<std::string>());
        } else {
          issues.error(path, "expected a string or a list of strings");
          r.mark_failed();
          continue;
        }
        auto& p = model.players[i];
        game::Dims dims = sys.totals;
        dims.u0 = p.control_dim;
        dims.eps = p.epsilon.dim;
        if (texts.size() != p.epsilon.dim) {
          issues.error(path, "needs " + std::to_string(p.epsilon.dim) + " components");
          r.mark_failed();
          continue;
        }
        if (!issues.guard(path, [&] { p.epsilon.form = game::make_epsilon(texts, dims); })) r.mark_failed();
      }
      plan.model = std::move(model);
    }
  }
  if (const Json* fj = r.raw("family")) {
    Reader f(fj, r.at("family"), issues);
    predict::FeedbackFamily fam;
    fam.residual = f.texts("residual");
    fam.coefficients = f.count("coefficients", 1);
    fam.initial = f.vec("initial", std::vector<double>(fam.coefficients, 0.0));
    if (f.ok() && static_cast<std::size_t>(fam.initial.size()) != fam.coefficients) {
      f.fail("initial", "needs one value per coefficient");
    }
    if (f.ok()) {
      // Compile once against the fitting vocabulary to surface expression errors now.
      expr::SymbolTable s;
      for (const char* name : {"u", "u0", "phi", "phi0", "dphi"}) s.add_vector(name);
      s.add_vector("c", fam.coefficients);
      s.add_scalar("t");
      if (!issues.guard(f.at("residual"), [&] { expr::VectorExpression::compile(fam.residual, s); })) f.mark_failed();
    }
    if (f.ok()) plan.family = fam;
    else r.mark_failed();
  }
  if (const Json* fj = r.raw("filter")) {
    any = true;
    Reader f(fj, r.at("filter"), issues);
    predict::FilterSpec spec;
    const auto kind = f.text("kind", std::string("lowpass"));
    if (kind == "lowpass") {
      spec.kind = predict::FilterSpec::Kind::LowPass;
      spec.cutoff = f.number("cutoff");
    } else if (kind == "band") {
      spec.kind = predict::FilterSpec::Kind::Band;
      spec.frequencies = f.numbers("frequencies");
    } else {
      f.fail("kind", "expected lowpass or band");
    }
    plan.component = f.count("component", 0);
    if (f.ok() && plan.component >= sys.totals.u) f.fail("component", "outside the control vector");
    if (f.ok()) plan.filter = spec;
    else r.mark_failed();
  }
  if (const Json* pj = r.raw("pipeline")) {
    any = true;
    Reader p(pj, r.at("pipeline"), issues);
    plan.pipeline_horizon = p.number("horizon");
    const auto eps = p.list("assumed_epsilon", true);
    if (p.ok() && eps.size() != sys.system.players.size()) {
      p.fail("assumed_epsilon", "needs one signal per player");
    }
    for (std::size_t i = 0; p.ok() && i < eps.size(); ++i) {
      const auto path = p.at("assumed_epsilon") + "/" + std::to_string(i);
      std::vector<std::string> texts;
      if (eps[i]->is_string()) texts = {eps[i]->get<std::string>()};
      else if (eps[i]->is_array())
        for (const auto& e : *eps[i]) texts.push_back(e.is_string() ? e.get<std::string>() : std::string("?"));
      if (!issues.guard(path, [&] { plan.pipeline_epsilon.push_back(game::make_signal(texts)); })) p.mark_failed();
    }
    if (!p.ok()) r.mark_failed();
  }
  if (!any) r.fail("", "needs assumed_epsilon, filter or pipeline");
  if (!r.ok()) return std::nullopt;
  return plan;
}

std::optional<algebra::Matrix> read_matrix(const Json& j, const std::string& path, Eigen::Index n, Issues& issues) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(n)) {
    issues.error(path, "expected " + std::to_string(n) + " rows");
    return std::nullopt;
  }
  algebra::Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || row.size() != static_cast<std::size_t>(n)) {
      issues.error(path + "/" + std::to_string(i), "expected " + std::to_string(n) + " entries");
      return std::nullopt;
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& e = row[static_cast<std::size_t>(k)];
      if (e.is_number()) {
        m(i, k) = e.get<double>();
      } else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
        m(i, k) = algebra::Complex(e[0].get<double>(), e[1].get<double>());
      } else {
        issues.error(path + "/" + std::to_string(i) + "/" + std::to_string(k), "expected a number or [re, im]");
        return std::nullopt;
      }
    }
  }
  return m;
}

std::optional<RepDynPlan> build_repdyn(Reader& r, const RunParams& run, Issues& issues) {
  RepDynPlan plan;
  auto& spec = plan.spec;
  const auto n = static_cast<Eigen::Index>(r.count("dimension"));
  if (r.ok() && (n < 1 || n > algebra::kMaxDimension)) r.fail("dimension", "must be in 1..6");
  std::vector<std::string> class_labels;
  const auto classes = r.list("classes", true);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    Reader c(classes[i], r.at("classes") + "/" + std::to_string(i), issues);
    algebra::AlgebraClassRegistry::AlgebraClass cls;
    cls.label = c.text("label");
    const auto family = c.list("family", true);
    for (std::size_t k = 0; k < family.size(); ++k) {
      Reader p(family[k], c.at("family") + "/" + std::to_string(k), issues);
      const auto label = p.text("label", cls.label);
      const auto m = p.count("generators");
      const auto relations = p.texts("relations", std::vector<std::string>{});
      const bool commutative = p.flag("commutative", false);
      if (!p.ok()) {
        c.mark_failed();
        continue;
      }
      if (!issues.guard(p.path(), [&] {
            auto pres = algebra::AlgebraPresentation::make(label, m, relations);
            if (commutative) {
              auto comm = algebra::AlgebraPresentation::commutative(label, m);
              pres.relations.insert(pres.relations.begin(), comm.relations.begin(), comm.relations.end());
            }
            cls.family.push_back(std::move(pres));
          })) {
        c.mark_failed();
      }
    }
    if (!c.ok()) {
      r.mark_failed();
      continue;
    }
    class_labels.push_back(cls.label);
    if (!issues.guard(c.path(), [&] { spec.registry.add(cls); })) r.mark_failed();
  }
  auto known = [&](const std::string& label) {
    return std::find(class_labels.begin(), class_labels.end(), label) != class_labels.end();
  };
  spec.initial_class = r.text("initial_class");
  if (r.ok() && !known(spec.initial_class)) r.fail("initial_class", "unknown class '" + spec.initial_class + "'");
  spec.initial_eta = r.vec("eta0", std::vector<double>{});
  spec.dt = run.dt;
  spec.grid = make_grid(r, "grid", run, false, issues);
  if (spec.grid.empty()) spec.grid = {run.t0, run.t1};

  // Control coefficients a1.. as expressions over t.
  const auto controls = r.texts("controls", std::vector<std::string>{});
  {
    expr::SymbolTable s;
    const auto t = s.add_scalar("t");
    std::vector<expr::Expression> a;
    bool ok = true;
    for (std::size_t k = 0; k < controls.size(); ++k) {
      ok = issues.guard(r.at("controls") + "/" + std::to_string(k),
                        [&] { a.push_back(expr::Expression::compile(controls[k], s)); }) &&
           ok;
    }
    if (!ok) r.mark_failed();
    const auto slots = s.size();
    spec.a = [a, t, slots](double time) {
      expr::Env env(slots);
      env.bind(t, std::span<const double>(&time, 1));
      Vector out(static_cast<Eigen::Index>(a.size()));
      for (std::size_t k = 0; k < a.size(); ++k) out[static_cast<Eigen::Index>(k)] = a[k].eval(env);
      return out;
    };
  }

  std::map<std::string, std::size_t> generators;
  const auto dyn = r.list("dynamics", true);
  for (std::size_t i = 0; i < dyn.size(); ++i) {
    Reader d(dyn[i], r.at("dynamics") + "/" + std::to_string(i), issues);
    algebra::ClassDynamics cd;
    cd.class_label = d.text("class");
    const auto F = d.texts("F");
    const auto constants = d.list("constants", false);
    if (d.ok() && !known(cd.class_label)) d.fail("class", "unknown class '" + cd.class_label + "'");
    if (!d.ok() || n < 1) {
      r.mark_failed();
      continue;
    }
    for (std::size_t k = 0; k < F.size(); ++k) {
      if (!issues.guard(d.at("F") + "/" + std::to_string(k),
                        [&] { cd.F.push_back(algebra::NcPolynomial::parse(F[k], F.size())); })) {
        d.mark_failed();
      }
    }
    for (std::size_t k = 0; k < constants.size(); ++k) {
      auto m = read_matrix(*constants[k], d.at("constants") + "/" + std::to_string(k), n, issues);
      if (m) cd.constants.push_back(*m);
      else d.mark_failed();
    }
    for (const auto& f : cd.F) {
      if (f.max_constant() > cd.constants.size()) d.fail("F", "uses c" + std::to_string(f.max_constant()) + " but only " + std::to_string(cd.constants.size()) + " constants are lifted");
      if (f.max_control() > controls.size()) d.fail("F", "uses a" + std::to_string(f.max_control()) + " but only " + std::to_string(controls.size()) + " controls are declared");
    }
    if (d.ok()) {
      generators[cd.class_label] = cd.F.size();
      if (!issues.guard(d.path(), [&] { spec.registry.member(cd.class_label, cd.F.size()); })) r.mark_failed();
      spec.dynamics.push_back(std::move(cd));
    } else {
      r.mark_failed();
    }
  }
  if (r.ok() && !generators.count(spec.initial_class)) {
    r.fail("dynamics", "no dynamics for the initial class '" + spec.initial_class + "'");
  }

  const auto initial = r.list("initial", true);
  for (std::size_t k = 0; k < initial.size() && n >= 1; ++k) {
    auto m = read_matrix(*initial[k], r.at("initial") + "/" + std::to_string(k), n, issues);
    if (m) spec.initial.X.push_back(*m);
    else r.mark_failed();
  }
  spec.initial.t = run.t0;

  for (const auto* j : r.list("embeddings", false)) {
    const auto idx = spec.embeddings.size();
    Reader e(j, r.at("embeddings") + "/" + std::to_string(idx), issues);
    algebra::Embedding emb;
    emb.from = e.text("from");
    emb.to = e.text("to");
    const auto images = e.texts("images");
    const bool named = e.ok();
    for (const auto& [key, label] : {std::pair{"from", emb.from}, std::pair{"to", emb.to}}) {
      if (named && !known(label)) e.fail(key, "unknown class '" + label + "'");
    }
    if (e.ok() && generators.count(emb.from)) {
      for (std::size_t k = 0; k < images.size(); ++k) {
        if (!issues.guard(e.at("images") + "/" + std::to_string(k),
                          [&] { emb.images.push_back(algebra::NcPolynomial::parse(images[k], generators[emb.from])); })) {
          e.mark_failed();
        }
      }
    }
    if (e.ok()) spec.embeddings.push_back(std::move(emb));
    else r.mark_failed();
  }

  if (const Json* pj = r.raw("projection")) {
    Reader p(pj, r.at("projection"), issues);
    spec.projection.tolerance = p.number("tolerance", run.tolerance);
    spec.projection.max_iterations = static_cast<int>(p.count("max_iterations", 50));
    spec.projection.step_clip = p.number("step_clip", std::numeric_limits<double>::infinity());
    if (!(spec.projection.step_clip > 0.0)) p.fail("step_clip", "must be positive");
    if (!p.ok()) r.mark_failed();
  } else {
    spec.projection.tolerance = run.tolerance;
  }
  plan.tuple_stride = r.count("tuple_stride", 0);

  if (!class_labels.empty()) {
    // The initial class was checked above.
    Reader d(r.raw("dialectic"), r.at("dialectic"), issues);
    plan.dialect = dialectic(d, d.text("label", std::string("delta")), class_labels, issues, "",
                             static_cast<std::size_t>(spec.initial_eta.size()));
    if (!d.ok()) r.mark_failed();
  }
  if (!r.ok()) return std::nullopt;
  return plan;
}

std::optional<algebra::InverseProblem> build_inverse(Reader& r, const RunParams& run, Issues& issues) {
  algebra::InverseProblem p;
  p.phi = r.texts("phi");
  p.controls = r.texts("controls", std::vector<std::string>{});
  p.x0 = r.vec("x0");
  p.dimension = static_cast<Eigen::Index>(r.count("dimension", 2));
  p.slot = static_cast<Eigen::Index>(r.count("slot", 0));
  p.lift_constants = r.flag("lift_constants", false);
  p.t0 = run.t0;
  p.t1 = run.t1;
  p.dt = run.dt;
  if (!r.ok()) return std::nullopt;
  if (static_cast<std::size_t>(p.x0.size()) != p.phi.size()) r.fail("x0", "needs one value per component of phi");
  if (p.slot >= p.dimension) r.fail("slot", "outside the diagonal");
  if (!r.ok()) return std::nullopt;
  // Symbolic construction only; integration happens when the command runs.
  auto probe = p;
  probe.t1 = probe.t0 + probe.dt;
  if (!issues.guard(r.at("phi"), [&] { algebra::solve_inverse_problem(probe); })) return std::nullopt;
  return p;
}

}  // namespace

Plan build_plan(const Json& doc, const Overrides& overrides, Issues& issues) {
  Plan plan;
  Reader top(&doc, "", issues);
  const auto schema = top.text("schema");
  if (top.ok() && schema != kSchema) top.fail("schema", "unrecognized schema '" + schema + "' (expected " + kSchema + ")");
  plan.name = top.text("name", std::string("scenario"));

  {
    Reader run(top.raw("run"), "/run", issues);
    plan.run.t0 = run.number("t0", 0.0);
    plan.run.t1 = run.number("t1", 1.0);
    plan.run.dt = run.number("dt", 1e-2);
    plan.run.tolerance = run.number("tolerance", overrides.tolerance.value_or(1e-9));
    if (overrides.dt) plan.run.dt = *overrides.dt;
    if (!(plan.run.dt > 0.0)) run.fail("dt", "must be positive");
    if (!(plan.run.t1 > plan.run.t0)) run.fail("t1", "must exceed t0");
    if (!(plan.run.tolerance > 0.0)) run.fail("tolerance", "must be positive");
  }

  if (const Json* j = top.raw("system")) {
    Reader r(j, "/system", issues);
    plan.system = build_system(r, issues);
  }
  if (const Json* j = top.raw("verbalization")) {
    Reader r(j, "/verbalization", issues);
    if (!top.has("system")) r.fail("", "needs a system section");
    else if (plan.system) plan.verbal = build_verbal(r, plan.run, plan.system->totals, issues);
  }
  if (const Json* j = top.raw("tactics")) {
    Reader r(j, "/tactics", issues);
    if (!top.has("system")) r.fail("", "needs a system section");
    else if (plan.system) plan.tactics = build_tactics(r, plan.run, *plan.system, issues);
  }
  if (const Json* j = top.raw("prediction")) {
    Reader r(j, "/prediction", issues);
    if (!top.has("system")) r.fail("", "needs a system section");
    else if (plan.system) plan.predict = build_predict(r, *plan.system, issues);
  }
  if (const Json* j = top.raw("repdyn")) {
    Reader r(j, "/repdyn", issues);
    plan.repdyn = build_repdyn(r, plan.run, issues);
  }
  if (const Json* j = top.raw("inverse")) {
    Reader r(j, "/inverse", issues);
    plan.inverse = build_inverse(r, plan.run, issues);
  }
  if (const Json* j = top.raw("expect")) {
    if (!j->is_object()) {
      issues.error("/expect", "expected an object of metric bounds");
    } else {
      for (const auto& [metric, bound] : j->items()) {
        Reader b(&bound, "/expect/" + metric, issues);
        Expectation e;
        e.metric = metric;
        if (b.has("min")) e.min = b.number("min");
        if (b.has("max")) e.max = b.number("max");
        if (b.has("value")) e.value = b.number("value");
        e.tol = b.number("tol", 0.0);
        if (!e.min && !e.max && !e.value) b.fail("", "needs min, max or value");
        plan.expect.push_back(e);
      }
    }
  }
  return plan;
}

std::vector<Command> supported_commands(const Plan& plan) {
  std::vector<Command> out;
  if (plan.system) out.push_back(Command::Simulate);
  if (plan.verbal) out.push_back(Command::Verbalize);
  if (plan.tactics) out.push_back(Command::Tactics);
  if (plan.predict) out.push_back(Command::Predict);
  if (plan.repdyn) out.push_back(Command::RepDyn);
  if (plan.inverse) out.push_back(Command::Invert);
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin, const Overrides& overrides) {
  Scenario s;
  s.origin = origin;
  s.text = text;
  try {
    s.doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    // byte is 1-based and points just past the offending character.
    const auto [line, col] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    std::string what = e.what();
    const auto colon = what.find(": ");
    if (colon != std::string::npos) what = what.substr(colon + 2);
    throw ValidationError({origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what});
  }
  Issues issues;
  const auto plan = build_plan(s.doc, overrides, issues);
  if (!issues.errors.empty()) throw ValidationError(issues.errors);
  s.name = plan.name;
  s.warnings = issues.warnings;
  s.supports = supported_commands(plan);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError({path.string() + ": cannot read scenario file"});
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.string(), overrides);
}

}  // namespace tactica::cli
