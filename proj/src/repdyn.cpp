#include "tactica/repdyn.hpp"

#include "tactica/errors.hpp"
#include "tactica/expression.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace tactica::algebra {

namespace {

using expr::Node;

std::string number_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string func_name(expr::Func f) {
  switch (f) {
    case expr::Func::Sin: return "sin";
    case expr::Func::Cos: return "cos";
    case expr::Func::Exp: return "exp";
    case expr::Func::Tanh: return "tanh";
    case expr::Func::Abs: return "abs";
    case expr::Func::Min: return "min";
    case expr::Func::Max: return "max";
  }
  return "";
}

using Mono = std::vector<int>;
using CoeffPoly = std::map<Mono, std::string>;  // commutative monomial -> coefficient text

struct Expander {
  std::size_t d = 1;
  std::size_t controls = 0;
  std::string source;

  ConfigError fail(const std::string& why) const { return ConfigError("phi '" + source + "': " + why); }

  Mono zero() const { return Mono(d, 0); }

  static bool x_free(const CoeffPoly& p, const Mono& z) { return p.empty() || (p.size() == 1 && p.begin()->first == z); }

  std::string scalar_text(const CoeffPoly& p) const {
    if (p.empty()) return "0";
    return p.begin()->second;
  }

  // Scalar (x-free) name normalized to the coefficient vocabulary.
  std::optional<std::string> scalar_name(const Node& n) const {
    if (n.index) return std::nullopt;
    if (n.name == "t") return n.name;
    if (n.name == "u") {
      if (controls < 1) throw fail("control u is not declared");
      return std::string("u1");
    }
    if (n.name.size() > 1 && n.name[0] == 'u' &&
        std::all_of(n.name.begin() + 1, n.name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      const auto k = std::stoul(n.name.substr(1));
      if (k < 1 || k > controls) throw fail("control '" + n.name + "' is not declared");
      return n.name;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> state_index(const Node& n) const {
    if (n.index) return std::nullopt;
    if (n.name == "x") return d >= 1 ? std::optional<std::size_t>(0) : std::nullopt;
    if (n.name.size() > 1 && n.name[0] == 'x' &&
        std::all_of(n.name.begin() + 1, n.name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      const auto k = std::stoul(n.name.substr(1));
      if (k < 1 || k > d) throw fail("state '" + n.name + "' outside x1..x" + std::to_string(d));
      return k - 1;
    }
    return std::nullopt;
  }

  static std::string mul_text(const std::string& a, const std::string& b) {
    if (a == "1") return b;
    if (b == "1") return a;
    return "(" + a + ")*(" + b + ")";
  }

  CoeffPoly multiply(const CoeffPoly& a, const CoeffPoly& b) const {
    CoeffPoly out;
    for (const auto& [ma, ca] : a) {
      for (const auto& [mb, cb] : b) {
        Mono m(d);
        for (std::size_t i = 0; i < d; ++i) m[i] = ma[i] + mb[i];
        int deg = 0;
        for (int e : m) deg += e;
        if (deg > static_cast<int>(kMaxDegree)) throw fail("degree in x above " + std::to_string(kMaxDegree));
        const auto c = mul_text(ca, cb);
        auto it = out.find(m);
        if (it == out.end()) {
          out.emplace(m, c);
        } else {
          it->second = "(" + it->second + ") + (" + c + ")";
        }
      }
    }
    return out;
  }

  std::string text(const Node& n) const {
    switch (n.kind) {
      case Node::Kind::Number: return number_text(n.number);
      case Node::Kind::Variable: {
        if (auto s = scalar_name(n)) return *s;
        throw fail("name '" + n.name + "' in a coefficient");
      }
      case Node::Kind::Neg: return "-(" + text(*n.children[0]) + ")";
      case Node::Kind::Add: return "(" + text(*n.children[0]) + ") + (" + text(*n.children[1]) + ")";
      case Node::Kind::Sub: return "(" + text(*n.children[0]) + ") - (" + text(*n.children[1]) + ")";
      case Node::Kind::Mul: return "(" + text(*n.children[0]) + ")*(" + text(*n.children[1]) + ")";
      case Node::Kind::Div: return "(" + text(*n.children[0]) + ")/(" + text(*n.children[1]) + ")";
      case Node::Kind::Pow: return "(" + text(*n.children[0]) + ")^(" + text(*n.children[1]) + ")";
      case Node::Kind::Call: {
        std::string out = func_name(n.func) + "(";
        for (std::size_t i = 0; i < n.children.size(); ++i) out += (i ? ", " : "") + text(*n.children[i]);
        return out + ")";
      }
    }
    throw fail("unsupported node");
  }

  CoeffPoly expand(const Node& n) const {
    const auto z = zero();
    switch (n.kind) {
      case Node::Kind::Number:
        return {{z, number_text(n.number)}};
      case Node::Kind::Variable: {
        if (auto k = state_index(n)) {
          Mono m = z;
          m[*k] = 1;
          return {{m, "1"}};
        }
        if (auto s = scalar_name(n)) return {{z, *s}};
        throw fail("unknown name '" + n.name + "'");
      }
      case Node::Kind::Neg: {
        auto p = expand(*n.children[0]);
        for (auto& [m, c] : p) c = "-(" + c + ")";
        return p;
      }
      case Node::Kind::Add:
      case Node::Kind::Sub: {
        auto a = expand(*n.children[0]);
        const auto b = expand(*n.children[1]);
        const bool sub = n.kind == Node::Kind::Sub;
        for (const auto& [m, c] : b) {
          auto it = a.find(m);
          if (it == a.end()) {
            a.emplace(m, sub ? "-(" + c + ")" : c);
          } else {
            it->second = "(" + it->second + (sub ? ") - (" : ") + (") + c + ")";
          }
        }
        return a;
      }
      case Node::Kind::Mul:
        return multiply(expand(*n.children[0]), expand(*n.children[1]));
      case Node::Kind::Div: {
        auto a = expand(*n.children[0]);
        const auto b = expand(*n.children[1]);
        if (!x_free(b, z)) throw fail("division by a polynomial in x");
        const auto den = scalar_text(b);
        for (auto& [m, c] : a) c = "(" + c + ")/(" + den + ")";
        return a;
      }
      case Node::Kind::Pow: {
        const auto base = expand(*n.children[0]);
        const auto e = expand(*n.children[1]);
        if (!x_free(e, z)) throw fail("exponent depends on x");
        if (x_free(base, z)) return {{z, "(" + scalar_text(base) + ")^(" + scalar_text(e) + ")"}};
        const Node& en = *n.children[1];
        if (en.kind != Node::Kind::Number || en.number < 0.0 || en.number != std::floor(en.number) ||
            en.number > static_cast<double>(kMaxDegree)) {
          throw fail("power of x must have a literal integer exponent in 0.." + std::to_string(kMaxDegree));
        }
        CoeffPoly out{{z, "1"}};
        for (int k = 0; k < static_cast<int>(en.number); ++k) out = multiply(out, base);
        return out;
      }
      case Node::Kind::Call: {
        for (const auto& c : n.children) {
          if (!x_free(expand(*c), z)) throw fail("not polynomial in x (" + func_name(n.func) + " of x)");
        }
        return {{z, text(n)}};
      }
    }
    throw fail("unsupported node");
  }
};

struct PhiVocabulary {
  expr::SymbolTable table;
  std::vector<std::size_t> x_slots;  // x1..xd
  std::optional<std::size_t> x_alias;
  std::vector<std::size_t> u_slots;  // u1..uK
  std::optional<std::size_t> u_alias;
  std::size_t t_slot = 0;
};

PhiVocabulary phi_vocabulary(std::size_t d, std::size_t controls, bool with_x) {
  PhiVocabulary v;
  if (with_x) {
    v.x_alias = v.table.add_scalar("x");
    for (std::size_t i = 1; i <= d; ++i) v.x_slots.push_back(v.table.add_scalar("x" + std::to_string(i)));
  }
  if (controls > 0) v.u_alias = v.table.add_scalar("u");
  for (std::size_t k = 1; k <= controls; ++k) v.u_slots.push_back(v.table.add_scalar("u" + std::to_string(k)));
  v.t_slot = v.table.add_scalar("t");
  return v;
}

expr::Env bind(const PhiVocabulary& v, const Vector& x, const Vector& u, const double& t) {
  expr::Env env(v.table.size());
  for (std::size_t i = 0; i < v.x_slots.size(); ++i) env.bind(v.x_slots[i], std::span<const double>(x.data() + i, 1));
  if (v.x_alias) env.bind(*v.x_alias, std::span<const double>(x.data(), 1));
  for (std::size_t k = 0; k < v.u_slots.size(); ++k) env.bind(v.u_slots[k], std::span<const double>(u.data() + k, 1));
  if (v.u_alias) env.bind(*v.u_alias, std::span<const double>(u.data(), 1));
  env.bind(v.t_slot, std::span<const double>(&t, 1));
  return env;
}

std::vector<Vector> scalar_run(const std::vector<expr::Expression>& phi, const PhiVocabulary& voc,
                               const std::function<Vector(double)>& u, const Vector& x0, double t0, double dt,
                               std::size_t steps) {
  auto f = [&](double t, const Vector& x) {
    const Vector uu = u(t);
    const auto env = bind(voc, x, uu, t);
    Vector out(static_cast<Eigen::Index>(phi.size()));
    for (std::size_t i = 0; i < phi.size(); ++i) out[static_cast<Eigen::Index>(i)] = phi[i].eval(env);
    return out;
  };
  std::vector<Vector> out{x0};
  Vector x = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    const Vector k1 = f(t, x);
    const Vector k2 = f(t + dt / 2, x + dt / 2 * k1);
    const Vector k3 = f(t + dt / 2, x + dt / 2 * k2);
    const Vector k4 = f(t0 + static_cast<double>(k + 1) * dt, x + dt * k3);
    x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    out.push_back(x);
  }
  return out;
}

std::size_t whole_steps(double t0, double t1, double dt) {
  if (!(dt > 0.0) || !(t1 > t0)) throw ConfigError("inverse problem needs t1 > t0 and dt > 0");
  const double s = (t1 - t0) / dt;
  if (std::abs(s - std::round(s)) > 1e-9 * std::max(1.0, s)) {
    throw ConfigError("inverse problem interval is not a whole number of steps");
  }
  return static_cast<std::size_t>(std::round(s));
}

}  // namespace

InverseSolution solve_inverse_problem(const InverseProblem& problem) {
  const std::size_t d = problem.phi.size();
  if (d == 0 || d > kMaxGenerators) throw ConfigError("inverse problem needs 1.." + std::to_string(kMaxGenerators) + " states");
  if (static_cast<std::size_t>(problem.x0.size()) != d) throw ConfigError("x0 does not match the number of states");
  if (problem.dimension < 1 || problem.dimension > kMaxDimension) throw ConfigError("diagonal dimension outside 1..6");
  if (problem.slot < 0 || problem.slot >= problem.dimension) throw ConfigError("designated slot outside the diagonal");
  const std::size_t K = problem.controls.size();
  const auto steps = whole_steps(problem.t0, problem.t1, problem.dt);

  // Controls u(t).
  const auto tvoc = phi_vocabulary(0, 0, false);
  std::vector<expr::Expression> u_expr;
  for (const auto& c : problem.controls) u_expr.push_back(expr::Expression::compile(c, tvoc.table));
  auto u_of = [u_expr, tvoc](double t) {
    const Vector none;
    const auto env = bind(tvoc, none, none, t);
    Vector u(static_cast<Eigen::Index>(u_expr.size()));
    for (std::size_t k = 0; k < u_expr.size(); ++k) u[static_cast<Eigen::Index>(k)] = u_expr[k].eval(env);
    return u;
  };

  InverseSolution sol;
  const auto coeff_voc = phi_vocabulary(d, K, false);
  std::vector<expr::Expression> coeff_expr;
  std::vector<std::string> symbol_parts(d);
  std::size_t next_constant = 0;
  for (std::size_t i = 0; i < d; ++i) {
    Expander ex{d, K, problem.phi[i]};
    const auto poly = ex.expand(*expr::parse(problem.phi[i]));
    for (const auto& [mono, coeff] : poly) {
      InverseMonomial m;
      m.component = i;
      m.exponents = mono;
      m.coefficient = coeff;
      const auto compiled = expr::Expression::compile(coeff, coeff_voc.table);
      std::string word;
      for (std::size_t g = 0; g < d; ++g)
        for (int e = 0; e < mono[g]; ++e) word += "*x" + std::to_string(g + 1);
      const bool constant_term = word.empty();
      std::string term;
      if (constant_term && problem.lift_constants) {
        bool fixed = !compiled.reads(coeff_voc.t_slot);
        for (auto s : coeff_voc.u_slots) fixed = fixed && !compiled.reads(s);
        if (!fixed) throw ConfigError("constant term '" + coeff + "' depends on u or t and cannot be lifted");
        const Vector none;
        const double zero_t = 0.0;
        const double value = compiled.eval(bind(coeff_voc, none, Vector::Zero(static_cast<Eigen::Index>(K)), zero_t));
        m.constant = next_constant++;
        sol.spec.constants.push_back(value * Matrix::Identity(problem.dimension, problem.dimension));
        term = "c" + std::to_string(*m.constant + 1);
      } else {
        m.control = coeff_expr.size();
        coeff_expr.push_back(compiled);
        term = "a" + std::to_string(*m.control + 1) + word;
      }
      symbol_parts[i] += (symbol_parts[i].empty() ? "" : " + ") + term;
      sol.monomials.push_back(std::move(m));
    }
  }

  for (std::size_t i = 0; i < d; ++i) {
    if (symbol_parts[i].empty()) symbol_parts[i] = "0";
    sol.symbols.push_back(symbol_parts[i]);
    sol.spec.F.push_back(NcPolynomial::parse(symbol_parts[i], d));
  }
  sol.spec.presentation = AlgebraPresentation::commutative("commutative-m" + std::to_string(d), d);
  for (std::size_t i = 0; i < d; ++i) {
    Matrix X = Matrix::Zero(problem.dimension, problem.dimension);
    for (Eigen::Index j = 0; j < problem.dimension; ++j) {
      const double spread = 1.0 + 0.1 * static_cast<double>(std::abs(j - problem.slot));
      X(j, j) = problem.x0[static_cast<Eigen::Index>(i)] * spread;
    }
    sol.spec.initial.X.push_back(X);
  }
  sol.spec.initial.t = problem.t0;

  sol.a = [coeff_expr, coeff_voc, u_of](double t) {
    const Vector u = u_of(t);
    const Vector none;
    const auto env = bind(coeff_voc, none, u, t);
    Vector a(static_cast<Eigen::Index>(coeff_expr.size()));
    for (std::size_t q = 0; q < coeff_expr.size(); ++q) a[static_cast<Eigen::Index>(q)] = coeff_expr[q].eval(env);
    return a;
  };

  // Symbolic check: every symbol term maps back onto exactly one monomial.
  bool match = true;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (const auto& term : sol.spec.F[i].terms) {
      Mono e(d, 0);
      std::optional<std::size_t> constant;
      for (const auto& l : term.word) {
        if (l.kind == Letter::Kind::Generator) {
          ++e[l.index];
        } else {
          constant = l.index;
        }
      }
      const auto it = std::find_if(sol.monomials.begin(), sol.monomials.end(), [&](const InverseMonomial& m) {
        if (m.component != i || m.exponents != e) return false;
        if (constant) return m.constant == constant;
        return term.controls.size() == 1 && m.control == term.controls.front();
      });
      match = match && it != sol.monomials.end() && term.coefficient == Complex(1.0, 0.0);
      ++seen;
    }
  }
  sol.report.symbolic_match = match && seen == sol.monomials.size();

  // Pointwise check of phi(x, u, t) = f(x, a(u, t)).
  const auto voc = phi_vocabulary(d, K, true);
  std::vector<expr::Expression> phi_expr;
  for (const auto& p : problem.phi) phi_expr.push_back(expr::Expression::compile(p, voc.table));
  const std::vector<double> xs{-1.5, -0.5, 0.25, 1.25};
  const std::vector<double> us{-1.0, 0.5, 2.0};
  const std::vector<double> ts{problem.t0, problem.t0 + 0.7};
  std::size_t x_points = 1, u_points = 1;
  for (std::size_t i = 0; i < d; ++i) x_points *= xs.size();
  for (std::size_t k = 0; k < K && u_points < 729; ++k) u_points *= us.size();
  for (std::size_t px = 0; px < x_points; ++px) {
    Vector x(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0, r = px; i < d; ++i, r /= xs.size()) x[static_cast<Eigen::Index>(i)] = xs[r % xs.size()];
    for (std::size_t pu = 0; pu < u_points; ++pu) {
      Vector u(static_cast<Eigen::Index>(K));
      for (std::size_t k = 0, r = pu; k < K; ++k, r /= us.size()) u[static_cast<Eigen::Index>(k)] = us[r % us.size()];
      for (double t : ts) {
        const auto env = bind(voc, x, u, t);
        const auto cenv = bind(coeff_voc, Vector(), u, t);
        for (std::size_t i = 0; i < d; ++i) {
          double f = 0.0;
          for (const auto& m : sol.monomials) {
            if (m.component != i) continue;
            double mono = 1.0;
            for (std::size_t g = 0; g < d; ++g) mono *= std::pow(x[static_cast<Eigen::Index>(g)], m.exponents[g]);
            const double c = m.constant ? sol.spec.constants[*m.constant](0, 0).real()
                                        : coeff_expr[*m.control].eval(cenv);
            f += c * mono;
          }
          sol.report.pointwise_deviation =
              std::max(sol.report.pointwise_deviation, std::abs(f - phi_expr[i].eval(env)));
        }
      }
    }
  }

  sol.trace = integrate_repdyn(sol.spec, sol.a, problem.t0, problem.t1, problem.dt);
  sol.scalar_reference = scalar_run(phi_expr, voc, u_of, problem.x0, problem.t0, problem.dt, steps);
  const auto half = scalar_run(phi_expr, voc, u_of, problem.x0, problem.t0, problem.dt / 2, 2 * steps);
  for (std::size_t k = 0; k <= steps; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const Complex slot = sol.trace.X[k].X[i](problem.slot, problem.slot);
      sol.report.slot_deviation =
          std::max(sol.report.slot_deviation, std::abs(slot - Complex(sol.scalar_reference[k][ii], 0.0)));
      sol.report.self_convergence =
          std::max(sol.report.self_convergence, std::abs(sol.scalar_reference[k][ii] - half[2 * k][ii]));
    }
  }
  return sol;
}

namespace {

const ClassDynamics& dynamics_of(const TacticalRepDynSpec& spec, const std::string& label) {
  for (const auto& d : spec.dynamics)
    if (d.class_label == label) return d;
  throw ConfigError("no dynamics declared for algebra class '" + label + "'");
}

const Embedding* embedding_of(const TacticalRepDynSpec& spec, const std::string& from, const std::string& to) {
  for (const auto& e : spec.embeddings)
    if (e.from == from && e.to == to) return &e;
  return nullptr;
}

void check_transition(const TacticalRepDynSpec& spec, const std::string& from, const std::string& to) {
  const auto& a = dynamics_of(spec, from);
  const auto& b = dynamics_of(spec, to);
  const auto* e = embedding_of(spec, from, to);
  if (e) {
    if (e->images.size() != b.F.size()) {
      throw ConfigError("embedding " + from + " -> " + to + " gives " + std::to_string(e->images.size()) +
                        " images for " + std::to_string(b.F.size()) + " generators");
    }
    for (const auto& p : e->images) {
      if (p.uses_controls() || p.uses_constants()) {
        throw ConfigError("embedding " + from + " -> " + to + " may only use the old generators");
      }
      for (const auto& t : p.terms)
        for (const auto& l : t.word)
          if (l.index >= a.F.size()) throw ConfigError("embedding " + from + " -> " + to + " reads a missing generator");
    }
  } else if (a.F.size() != b.F.size()) {
    throw ConfigError("transition " + from + " -> " + to + " changes the generator count and has no embedding");
  }
}

MatrixTuple embed(const TacticalRepDynSpec& spec, const MatrixTuple& x, const std::string& from, const std::string& to) {
  const auto* e = embedding_of(spec, from, to);
  if (!e) return x;
  MatrixTuple y;
  y.t = x.t;
  for (const auto& p : e->images) y.X.push_back(evaluate_ordered(p, x));
  return y;
}

Vector mean_control(const ControlSchedule& a, const std::vector<double>& t, std::size_t from) {
  Vector sum;
  for (std::size_t k = from; k < t.size(); ++k) {
    const Vector v = a ? a(t[k]) : Vector();
    if (sum.size() == 0) sum = Vector::Zero(v.size());
    sum += v;
  }
  if (t.size() > from) sum /= static_cast<double>(t.size() - from);
  return sum;
}

}  // namespace

TacticalRepDynRun run_tactical_repdyn(const TacticalRepDynSpec& spec, const tactics::DialecticalObject& delta) {
  if (!spec.registry.contains(spec.initial_class)) {
    throw ConfigError("initial algebra class '" + spec.initial_class + "' is not registered");
  }
  if (spec.grid.size() < 2) throw ConfigError("tactical repdyn needs at least one window");
  for (std::size_t n = 1; n < spec.grid.size(); ++n) {
    if (!(spec.grid[n] > spec.grid[n - 1])) throw ConfigError("window grid must be strictly increasing");
  }
  for (const auto& row : delta.table()) {
    if (!spec.registry.contains(row.from_class) || !spec.registry.contains(row.to_class)) {
      throw ConfigError("transition " + row.from_class + " -> " + row.to_class + " leaves the registry");
    }
    check_transition(spec, row.from_class, row.to_class);
  }
  auto presentation = [&](const std::string& label) -> const AlgebraPresentation& {
    return spec.registry.member(label, dynamics_of(spec, label).F.size());
  };

  std::string current = spec.initial_class;
  {
    RepDynSpec first{dynamics_of(spec, current).F, spec.initial, presentation(current),
                     dynamics_of(spec, current).constants, spec.projection};
    first.validate();
  }

  TacticalRepDynRun run;
  Vector eta = spec.initial_eta;
  MatrixTuple x = spec.initial;
  x.t = spec.grid.front();
  run.t.push_back(x.t);
  run.X.push_back(x);
  run.residual.push_back(relation_residual(presentation(current), x));
  run.labels.push_back(current);

  auto push = [&](const MatrixTuple& y, double r) {
    run.t.push_back(y.t);
    run.X.push_back(y);
    run.residual.push_back(r);
    run.labels.push_back(current);
  };

  auto switch_class = [&](const std::string& from, int window, double time, bool insolvable, double residual) {
    run.transitions.push_back({window, time, from, current, insolvable, residual});
    MatrixTuple y = embed(spec, x, from, current);
    y.t = time;
    const auto& pres = presentation(current);
    auto proj = project(pres, y, spec.projection);
    if (!proj.converged) {
      std::ostringstream os;
      os << "embedded tuple is not a representation of '" << current << "' (residual " << proj.residual << ")";
      throw InsolvableError(os.str(), time, proj.residual);
    }
    x = y;
    push(x, proj.residual);
  };

  for (std::size_t n = 1; n < spec.grid.size(); ++n) {
    const int window = static_cast<int>(n);
    const std::size_t first_sample = run.t.size() - 1;
    double start = spec.grid[n - 1];
    std::string delta_label;
    for (int switches = 0;; ++switches) {
      const auto& dyn = dynamics_of(spec, current);
      auto trace = integrate_repdyn_until(dyn.F, presentation(current), dyn.constants, spec.projection, spec.a, x,
                                          start, spec.grid[n], spec.dt);
      for (std::size_t k = 1; k < trace.t.size(); ++k) push(trace.X[k], trace.residual[k]);
      x = trace.X.back();
      if (!trace.insolvable) break;

      double omega_max = 0.0;
      for (std::size_t k = first_sample; k < run.residual.size(); ++k) omega_max = std::max(omega_max, run.residual[k]);
      const Vector omega = Vector::Constant(1, omega_max);
      const Vector v = mean_control(spec.a, run.t, first_sample);
      const tactics::Diagnostics diag{true, trace.fail_residual};
      const std::string from = current;
      if (switches >= 8 || !delta.apply(current, eta, omega, v, diag)) {
        std::ostringstream os;
        os << "algebra class '" << from << "' became insolvable in window " << window << " at t=" << trace.fail_time
           << " (residual " << trace.fail_residual << ")"
           << (switches >= 8 ? " and the transitions do not settle" : " with no transition out of it");
        throw StrandedClassError(os.str(), from, window);
      }
      delta_label = from + "->" + current;
      switch_class(from, window, trace.fail_time, true, trace.fail_residual);
      start = trace.fail_time;
    }

    double omega_max = 0.0;
    for (std::size_t k = first_sample; k < run.residual.size(); ++k) omega_max = std::max(omega_max, run.residual[k]);
    const Vector omega = Vector::Constant(1, omega_max);
    const Vector v = mean_control(spec.a, run.t, first_sample);
    const std::string from = current;
    if (delta.apply(current, eta, omega, v, tactics::Diagnostics{false, omega_max})) {
      delta_label = from + "->" + current;
      switch_class(from, window, spec.grid[n], false, omega_max);
    }

    tactics::CommentState c;
    c.index = window;
    c.theta = omega;
    c.class_label = current;
    c.eta = eta;
    c.delta_label = delta_label;
    run.stream.push_back(std::move(c));
  }
  return run;
}

}  // namespace tactica::algebra
