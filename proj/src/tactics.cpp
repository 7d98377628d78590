#include "tactica/tactics.hpp"

#include "tactica/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

namespace tactica::tactics {
namespace {

enum DialecticSlot : std::size_t { kEta, kOmega, kV, kInsolvable, kResidual };

std::string join(const std::vector<std::string>& clauses) {
  std::string out;
  for (const auto& c : clauses) {
    if (!out.empty()) out += " && ";
    out += c;
  }
  return out;
}

/// Integrates one commented game window by window.
class WindowStepper {
 public:
  explicit WindowStepper(const CommentedGame& g) : game_(g), system_(g.system), state_(g.system.initial_state) {
    if (g.grid.size() < 2) throw ConfigError("comment grid needs at least two points");
    for (std::size_t i = 1; i < g.grid.size(); ++i) {
      if (!(g.grid[i] > g.grid[i - 1])) throw ConfigError("comment grid must be strictly increasing");
    }
    if (!(g.dt > 0.0)) throw ConfigError("dt must be positive");
    check_theta(g.initial.theta);
  }

  void check_theta(const Vector& theta) const {
    if (game_.system.lambda.size() > 0 && theta.size() != game_.system.lambda.size()) {
      throw ConfigError("comment of dimension " + std::to_string(theta.size()) +
                        " does not fit the parameter slot of dimension " +
                        std::to_string(game_.system.lambda.size()));
    }
    if (theta.size() != game_.initial.theta.size()) {
      throw ConfigError("comment dimension changed from " + std::to_string(game_.initial.theta.size()) + " to " +
                        std::to_string(theta.size()));
    }
  }

  std::size_t windows() const { return game_.grid.size() - 1; }

  const verbal::WindowRecord& advance(std::size_t n, const Vector& theta) {
    system_.lambda = theta;
    const double a = game_.grid[n - 1];
    const double b = game_.grid[n];
    const auto part = game::simulate(system_, nullptr, a, b, game_.dt, state_);
    const std::size_t first = run.trajectory.size() == 0 ? 0 : run.trajectory.size() - 1;
    game::append_samples(run.trajectory, part, n > 1);
    const std::size_t last = run.trajectory.size() - 1;
    state_ = part.phi.back();

    verbal::WindowRecord w;
    w.index = static_cast<int>(n);
    w.t_start = a;
    w.t_end = b;
    w.omega = verbal::evaluate_functional(game_.omega, run.trajectory, first, last);
    w.v = verbal::evaluate_functional(game_.v, run.trajectory, first, last);
    if (!w.omega.allFinite() || !w.v.allFinite()) {
      throw DataError("window " + std::to_string(n) + " has non-finite functionals");
    }
    run.windows.push_back(std::move(w));
    return run.windows.back();
  }

  CommentedRun run;

 private:
  const CommentedGame& game_;
  game::InteractiveSystem system_;
  Vector state_;
};

}  // namespace

DialecticalObject::DialecticalObject(std::string label, std::vector<std::string> registry)
    : label_(std::move(label)), registry_(std::move(registry)) {
  if (registry_.empty()) throw ConfigError("dialectical object '" + label_ + "' has an empty class registry");
}

const expr::SymbolTable& DialecticalObject::symbols() {
  static const expr::SymbolTable table = [] {
    expr::SymbolTable s;
    s.add_vector("eta");
    s.add_vector("omega");
    s.add_vector("v");
    s.add_scalar("insolvable");
    s.add_scalar("residual");
    return s;
  }();
  return table;
}

void DialecticalObject::add(const std::string& from_class, const std::vector<std::string>& trigger,
                            const std::string& to_class, const std::vector<std::string>& eta_update) {
  for (const auto* name : {&from_class, &to_class}) {
    if (std::find(registry_.begin(), registry_.end(), *name) == registry_.end()) {
      throw ConfigError("transition of '" + label_ + "' references unknown class '" + *name + "'");
    }
  }
  const std::string key = join(trigger);
  for (const auto& row : table_) {
    if (row.from_class == from_class && row.trigger_text == key) {
      throw ConfigError("duplicate transition key (" + from_class + ", " + key + ") in '" + label_ + "'");
    }
  }
  Transition row;
  row.from_class = from_class;
  row.trigger = expr::Predicate::compile(trigger, symbols());
  row.trigger_text = key;
  row.to_class = to_class;
  if (!eta_update.empty()) row.eta_update = expr::VectorExpression::compile(eta_update, symbols());
  table_.push_back(std::move(row));
}

const DialecticalObject::Transition* DialecticalObject::find(const std::string& current_class, const Vector& eta,
                                                             const Vector& omega, const Vector& v,
                                                             const Diagnostics& diag) const {
  const double insolvable = diag.insolvable ? 1.0 : 0.0;
  expr::Env env(symbols().size());
  env.bind(kEta, eta).bind(kOmega, omega).bind(kV, v);
  env.bind(kInsolvable, std::span<const double>(&insolvable, 1));
  env.bind(kResidual, std::span<const double>(&diag.residual, 1));
  for (const auto& row : table_) {
    if (row.from_class == current_class && row.trigger.holds(env)) return &row;
  }
  return nullptr;
}

bool DialecticalObject::apply(std::string& current_class, Vector& eta, const Vector& omega, const Vector& v,
                              const Diagnostics& diag) const {
  const Transition* row = find(current_class, eta, omega, v, diag);
  if (!row) return false;
  if (row->eta_update.size() > 0) {
    const double insolvable = diag.insolvable ? 1.0 : 0.0;
    expr::Env env(symbols().size());
    env.bind(kEta, eta).bind(kOmega, omega).bind(kV, v);
    env.bind(kInsolvable, std::span<const double>(&insolvable, 1));
    env.bind(kResidual, std::span<const double>(&diag.residual, 1));
    eta = row->eta_update.eval(env);
  }
  current_class = row->to_class;
  return true;
}

CommentUpdate make_comment_update(const std::vector<std::string>& components, const CommentDims& dims) {
  if (components.size() != dims.theta) {
    throw ConfigError("comment update has " + std::to_string(components.size()) + " components, comment space has " +
                      std::to_string(dims.theta));
  }
  expr::SymbolTable s;
  const auto theta = s.add_vector("theta", dims.theta);
  const auto omega = s.add_vector("omega", dims.omega);
  const auto v = s.add_vector("v", dims.v);
  const auto e = expr::VectorExpression::compile(components, s);
  const auto slots = s.size();
  return [e, theta, omega, v, slots](const Vector& th, const Vector& om, const Vector& vv) {
    expr::Env env(slots);
    env.bind(theta, th).bind(omega, om).bind(v, vv);
    return e.eval(env);
  };
}

CommentedRun run_commented_game(const CommentedGame& g, const DialecticalObject* dialect) {
  if (!g.rule.update && !(dialect && g.rule.dialectical)) throw ConfigError("comment rule has no update");
  WindowStepper stepper(g);
  CommentState current = g.initial;
  current.index = 0;
  current.delta_label.clear();
  if (dialect) {
    const auto& reg = dialect->registry();
    if (std::find(reg.begin(), reg.end(), current.class_label) == reg.end()) {
      throw ConfigError("initial comment class '" + current.class_label + "' is not in the registry of '" +
                        dialect->label() + "'");
    }
  }
  stepper.run.comments.push_back(current);
  for (std::size_t n = 1; n <= stepper.windows(); ++n) {
    const auto& w = stepper.advance(n, current.theta);
    CommentState next;
    if (dialect && g.rule.dialectical) {
      next = g.rule.dialectical(current, *dialect, w.omega, w.v);
    } else {
      next = current;
      next.delta_label.clear();
      if (dialect && dialect->apply(next.class_label, next.eta, w.omega, w.v, Diagnostics{})) {
        next.delta_label = dialect->label();
      }
      next.theta = g.rule.update(current.theta, w.omega, w.v);
    }
    next.index = static_cast<int>(n);
    stepper.check_theta(next.theta);
    current = std::move(next);
    stepper.run.comments.push_back(current);
  }
  return std::move(stepper.run);
}

InteractionTerm InteractionTerm::zero() {
  return {[](const Vector& own, const Vector&, const Vector&, const Vector&) { return Vector::Zero(own.size()); }};
}

InteractionTerm InteractionTerm::compile(const std::vector<std::string>& components, const CommentDims& own,
                                         std::size_t other_theta) {
  if (components.size() != own.theta) throw ConfigError("interaction term dimension differs from the comment space");
  expr::SymbolTable s;
  const auto theta = s.add_vector("theta", own.theta);
  const auto other = s.add_vector("other", other_theta);
  const auto omega = s.add_vector("omega", own.omega);
  const auto v = s.add_vector("v", own.v);
  const auto e = expr::VectorExpression::compile(components, s);
  const auto slots = s.size();
  return {[e, theta, other, omega, v, slots](const Vector& th, const Vector& ot, const Vector& om, const Vector& vv) {
    expr::Env env(slots);
    env.bind(theta, th).bind(other, ot).bind(omega, om).bind(v, vv);
    return e.eval(env);
  }};
}

std::size_t SynthesisArgs::check(std::size_t game) const {
  if (std::find(mask_.begin(), mask_.end(), game) == mask_.end()) {
    throw ConfigError("synthesis form reads game " + std::to_string(game + 1) + " outside its mask");
  }
  return game;
}

SynthesisForm make_synthesis_form(const std::vector<std::string>& components, const std::vector<CommentDims>& games,
                                  const std::vector<std::size_t>& mask) {
  for (auto j : mask) {
    if (j >= games.size()) throw ConfigError("synthesis mask references absent game " + std::to_string(j + 1));
  }
  expr::SymbolTable s;
  std::vector<std::array<std::size_t, 3>> slots;
  for (std::size_t j = 0; j < games.size(); ++j) {
    const auto tag = std::to_string(j + 1);
    slots.push_back({s.add_vector("theta" + tag, games[j].theta), s.add_vector("omega" + tag, games[j].omega),
                     s.add_vector("v" + tag, games[j].v)});
  }
  const auto e = expr::VectorExpression::compile(components, s);
  for (std::size_t j = 0; j < games.size(); ++j) {
    if (std::find(mask.begin(), mask.end(), j) != mask.end()) continue;
    for (auto slot : slots[j]) {
      if (e.reads(slot)) {
        throw ConfigError("synthesis form reads " + s.name(slot) + " but game " + std::to_string(j + 1) +
                          " is outside its mask");
      }
    }
  }
  const auto count = s.size();
  return [e, slots, mask, count](const SynthesisArgs& args) {
    expr::Env env(count);
    for (auto j : mask) {
      env.bind(slots[j][0], args.theta(j)).bind(slots[j][1], args.omega(j)).bind(slots[j][2], args.v(j));
    }
    return e.eval(env);
  };
}

std::vector<CommentedRun> tactical_synthesis(const std::vector<CommentedGame>& games, const SynthesisRule& rule) {
  if (games.empty()) throw ConfigError("synthesis needs at least one game");
  if (rule.forms.size() != games.size() || rule.masks.size() != games.size()) {
    throw ConfigError("synthesis rule has " + std::to_string(rule.forms.size()) + " forms and " +
                      std::to_string(rule.masks.size()) + " masks for " + std::to_string(games.size()) + " games");
  }
  for (const auto& mask : rule.masks) {
    for (auto j : mask) {
      if (j >= games.size()) throw ConfigError("synthesis mask references absent game " + std::to_string(j + 1));
    }
  }
  for (const auto& g : games) {
    if (g.grid != games.front().grid) throw ConfigError("synthesized games must share one window grid");
  }

  std::vector<WindowStepper> steppers;
  steppers.reserve(games.size());
  std::vector<Vector> theta;
  for (const auto& g : games) {
    steppers.emplace_back(g);
    CommentState c = g.initial;
    c.index = 0;
    steppers.back().run.comments.push_back(c);
    theta.push_back(g.initial.theta);
  }
  std::vector<Vector> omega(games.size());
  std::vector<Vector> v(games.size());
  for (std::size_t n = 1; n <= steppers.front().windows(); ++n) {
    for (std::size_t j = 0; j < games.size(); ++j) {
      const auto& w = steppers[j].advance(n, theta[j]);
      omega[j] = w.omega;
      v[j] = w.v;
    }
    std::vector<Vector> next(games.size());
    for (std::size_t j = 0; j < games.size(); ++j) {
      next[j] = rule.forms[j](SynthesisArgs(theta, omega, v, rule.masks[j]));
      steppers[j].check_theta(next[j]);
    }
    theta = std::move(next);
    for (std::size_t j = 0; j < games.size(); ++j) {
      CommentState c = steppers[j].run.comments.back();
      c.index = static_cast<int>(n);
      c.theta = theta[j];
      steppers[j].run.comments.push_back(std::move(c));
    }
  }
  std::vector<CommentedRun> out;
  for (auto& s : steppers) out.push_back(std::move(s.run));
  return out;
}

SynthesisRule interaction_rule(const CommentedGame& g1, const CommentedGame& g2, const InteractionTerm& term12,
                               const InteractionTerm& term21) {
  if (!g1.rule.update || !g2.rule.update || !term12.form || !term21.form) {
    throw ConfigError("interacting games need comment updates and interaction terms");
  }
  auto form = [](CommentUpdate own, InteractionTerm term, std::size_t self, std::size_t other) -> SynthesisForm {
    return [own, term, self, other](const SynthesisArgs& a) -> Vector {
      return own(a.theta(self), a.omega(self), a.v(self)) +
             term.form(a.theta(self), a.theta(other), a.omega(self), a.v(self));
    };
  };
  SynthesisRule rule;
  rule.forms = {form(g1.rule.update, term12, 0, 1), form(g2.rule.update, term21, 1, 0)};
  rule.masks = {{0, 1}, {0, 1}};
  return rule;
}

std::vector<CommentedRun> tactical_interaction(const CommentedGame& g1, const CommentedGame& g2,
                                               const InteractionTerm& term12, const InteractionTerm& term21) {
  if (g1.grid != g2.grid) throw ConfigError("interacting games must share one window grid (no resampling)");
  return tactical_synthesis({g1, g2}, interaction_rule(g1, g2, term12, term21));
}

std::vector<Probe> probe_grid(const std::vector<CommentDims>& games, const std::vector<double>& levels,
                              std::vector<Probe> extra, std::size_t max_full, std::size_t samples) {
  if (levels.empty()) throw ConfigError("probe grid needs at least one level");
  std::size_t coords = 0;
  for (const auto& g : games) coords += g.theta + g.omega + g.v;

  auto fill = [&](const std::function<double(std::size_t)>& value) {
    Probe p;
    std::size_t c = 0;
    for (const auto& g : games) {
      auto take = [&](std::size_t dim) {
        Vector x(static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < dim; ++i) x[static_cast<Eigen::Index>(i)] = value(c++);
        return x;
      };
      p.theta.push_back(take(g.theta));
      p.omega.push_back(take(g.omega));
      p.v.push_back(take(g.v));
    }
    return p;
  };

  std::vector<Probe> out;
  if (coords <= max_full) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < coords; ++i) total *= levels.size();
    for (std::size_t k = 0; k < total; ++k) {
      out.push_back(fill([&](std::size_t c) {
        std::size_t r = k;
        for (std::size_t i = 0; i < c; ++i) r /= levels.size();
        return levels[r % levels.size()];
      }));
    }
  } else {
    const auto [lo, hi] = std::minmax_element(levels.begin(), levels.end());
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> dist(*lo, *hi);
    for (std::size_t k = 0; k < samples; ++k) out.push_back(fill([&](std::size_t) { return dist(rng); }));
  }
  for (auto& p : extra) out.push_back(std::move(p));
  return out;
}

ExtensionCheck is_tactical_extension(const SynthesisRule& synth, std::size_t game, const CommentUpdate& original,
                                     const std::vector<Probe>& probes) {
  if (game >= synth.forms.size()) throw ConfigError("extension check names an absent game");
  ExtensionCheck out;
  for (const auto& p : probes) {
    const Vector a = synth.forms[game](SynthesisArgs(p.theta, p.omega, p.v, synth.masks[game]));
    const Vector b = original(p.theta[game], p.omega[game], p.v[game]);
    const double diff =
        a.size() == b.size() ? (a - b).lpNorm<Eigen::Infinity>() : std::numeric_limits<double>::infinity();
    out.max_difference = std::max(out.max_difference, diff);
    if (!(diff <= 1e-12) && out.holds) {
      out.holds = false;
      out.witness = p;
    }
  }
  return out;
}

}  // namespace tactica::tactics
