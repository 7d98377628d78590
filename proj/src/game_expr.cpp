#include "tactica/game_expr.hpp"

#include <memory>

namespace tactica::game {
namespace {

using expr::Env;
using expr::SymbolTable;
using expr::VectorExpression;

struct Table {
  SymbolTable symbols;
  std::size_t t = 0, phi = 0, dphi = 0, u0 = 0, u = 0, eps = 0, lambda = 0, omega = 0;
};

const Vector& empty_vector() {
  static const Vector v;
  return v;
}

}  // namespace

SignalFn make_signal(const std::vector<std::string>& components) {
  SymbolTable symbols;
  const auto t_slot = symbols.add_scalar("t");
  auto program = std::make_shared<const VectorExpression>(VectorExpression::compile(components, symbols));
  const auto slots = symbols.size();
  return [program, t_slot, slots](double t) {
    Env env(slots);
    env.bind(t_slot, std::span<const double>(&t, 1));
    return program->eval(env);
  };
}

DynamicsFn make_dynamics(const std::vector<std::string>& components, const Dims& dims) {
  Table tb;
  tb.t = tb.symbols.add_scalar("t");
  tb.phi = tb.symbols.add_vector("phi", dims.phi);
  tb.u = tb.symbols.add_vector("u", dims.u);
  tb.lambda = tb.symbols.add_vector("lambda", dims.lambda == 0 ? 1 : dims.lambda);
  tb.omega = tb.symbols.add_vector("omega", dims.omega == 0 ? 1 : dims.omega);
  auto program = std::make_shared<const VectorExpression>(VectorExpression::compile(components, tb.symbols));
  return [program, tb](const DynamicsArgs& a) {
    Env env(tb.symbols.size());
    env.bind(tb.t, std::span<const double>(&a.t, 1))
        .bind(tb.phi, a.phi)
        .bind(tb.u, a.u)
        .bind(tb.lambda, a.lambda)
        .bind(tb.omega, a.omega);
    return program->eval(env);
  };
}

namespace {

Table coupling_table(const Dims& dims, bool with_eps, const char* control_name) {
  Table tb;
  tb.t = tb.symbols.add_scalar("t");
  tb.u0 = tb.symbols.add_vector(control_name, dims.u0);
  tb.phi = tb.symbols.add_vector("phi", dims.phi);
  tb.dphi = tb.symbols.add_vector("dphi", dims.phi);
  tb.lambda = tb.symbols.add_vector("lambda", dims.lambda == 0 ? 1 : dims.lambda);
  if (with_eps) tb.eps = tb.symbols.add_vector("eps", dims.eps);
  return tb;
}

Env bind_coupling(const Table& tb, const CouplingArgs& a, const Vector* eps) {
  Env env(tb.symbols.size());
  env.bind(tb.t, std::span<const double>(&a.t, 1))
      .bind(tb.u0, a.u0)
      .bind(tb.phi, a.phi)
      .bind(tb.dphi, a.dphi ? *a.dphi : empty_vector())
      .bind(tb.lambda, a.lambda);
  if (eps) env.bind(tb.eps, *eps);
  return env;
}

CouplingForm coupling_form(const std::vector<std::string>& components, const Dims& dims, bool* reads_dphi,
                           const char* control_name) {
  const Table tb = coupling_table(dims, true, control_name);
  auto program = std::make_shared<const VectorExpression>(VectorExpression::compile(components, tb.symbols));
  if (reads_dphi) *reads_dphi = program->reads(tb.dphi);
  return [program, tb](const CouplingArgs& a, const Vector& eps) {
    return program->eval(bind_coupling(tb, a, &eps));
  };
}

}  // namespace

EpsilonForm make_epsilon(const std::vector<std::string>& components, const Dims& dims, bool* reads_dphi) {
  const Table tb = coupling_table(dims, false, "u0");
  auto program = std::make_shared<const VectorExpression>(VectorExpression::compile(components, tb.symbols));
  if (reads_dphi) *reads_dphi = program->reads(tb.dphi);
  return [program, tb](const CouplingArgs& a) { return program->eval(bind_coupling(tb, a, nullptr)); };
}

CouplingForm make_coupling(const std::vector<std::string>& components, const Dims& dims, bool* reads_dphi) {
  return coupling_form(components, dims, reads_dphi, "u0");
}

CouplingForm make_inverse_coupling(const std::vector<std::string>& components, const Dims& dims, bool* reads_dphi) {
  return coupling_form(components, dims, reads_dphi, "u");
}

InvariantConstraint make_invariant(std::string name, const std::string& text, const Dims& dims, double tolerance) {
  Table tb;
  tb.t = tb.symbols.add_scalar("t");
  tb.phi = tb.symbols.add_vector("phi", dims.phi);
  tb.dphi = tb.symbols.add_vector("dphi", dims.phi);
  tb.u0 = tb.symbols.add_vector("u0", dims.u0);
  tb.u = tb.symbols.add_vector("u", dims.u);
  tb.eps = tb.symbols.add_vector("eps", dims.eps);
  auto program = std::make_shared<const expr::Expression>(expr::Expression::compile(text, tb.symbols));
  InvariantConstraint c;
  c.name = std::move(name);
  c.tolerance = tolerance;
  c.derivative_order = program->reads(tb.dphi) ? 1 : 0;
  c.value = [program, tb](const SampleView& s) {
    Env env(tb.symbols.size());
    env.bind(tb.t, std::span<const double>(&s.t, 1))
        .bind(tb.phi, s.phi)
        .bind(tb.dphi, s.dphi)
        .bind(tb.u0, s.u0)
        .bind(tb.u, s.u)
        .bind(tb.eps, s.eps);
    return program->eval(env);
  };
  return c;
}

}  // namespace tactica::game
