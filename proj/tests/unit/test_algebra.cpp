#include "doctest.h"

#include "tactica/algebra.hpp"
#include "tactica/errors.hpp"
#include "tactica/repdyn.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

using namespace tactica::algebra;
using tactica::ConfigError;
using tactica::DataError;
using tactica::InsolvableError;
using tactica::StrandedClassError;
using tactica::tactics::DialecticalObject;

namespace {

Matrix E(Eigen::Index n, Eigen::Index i, Eigen::Index j) {
  Matrix m = Matrix::Zero(n, n);
  m(i - 1, j - 1) = 1.0;
  return m;
}

Matrix diag(std::initializer_list<double> v) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) m(k, k) = x, ++k;
  return m;
}

MatrixTuple tuple(std::vector<Matrix> X) { return MatrixTuple{std::move(X), 0.0}; }

AlgebraPresentation heisenberg() {
  return AlgebraPresentation::make("heisenberg", 3, {"x1*x2 - x2*x1 - x3", "x1*x3 - x3*x1", "x2*x3 - x3*x2"});
}

Matrix random_complex(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = Complex(U(rng), U(rng));
  return m;
}

std::vector<NcPolynomial> symbols(const std::vector<std::string>& texts, std::size_t m) {
  std::vector<NcPolynomial> out;
  for (const auto& t : texts) out.push_back(NcPolynomial::parse(t, m));
  return out;
}

}  // namespace

TEST_CASE("polynomial parsing expands products and enforces the caps") {
  const auto p = NcPolynomial::parse("2*(x1 + x2)*x1 - i*x2", 2);
  // 2 x1 x1 + 2 x2 x1 - i x2
  REQUIRE(p.terms.size() == 3);
  CHECK(p.degree() == 2);
  std::mt19937_64 rng(3);
  const auto X = tuple({random_complex(rng, 3), Matrix::Identity(3, 3)});
  const Matrix expect = 2.0 * X.X[0] * X.X[0] + 2.0 * X.X[1] * X.X[0] - Complex(0, 1) * X.X[1];
  CHECK((evaluate_ordered(p, X) - expect).norm() < 1e-14);

  CHECK(NcPolynomial::parse("x1^2/2", 1).terms.front().coefficient == Complex(0.5, 0.0));
  CHECK_THROWS_AS(NcPolynomial::parse("x1*x1*x1*x1", 1), ConfigError);
  CHECK_THROWS_AS(NcPolynomial::parse("x3", 2), ConfigError);
  CHECK_THROWS_AS(NcPolynomial::parse("sin(x1)", 1), ConfigError);
  CHECK_THROWS_AS(NcPolynomial::parse("x1/x1", 1), ConfigError);
  CHECK_THROWS_AS(NcPolynomial::parse("y", 1), ConfigError);
  CHECK_THROWS_AS(AlgebraPresentation::make("bad", 1, {"a1*x1"}), ConfigError);
  CHECK_THROWS_AS(AlgebraPresentation::make("big", 5, {}), ConfigError);
}

TEST_CASE("weyl evaluation of elementary examples") {
  SUBCASE("degree one is the generator itself") {
    std::mt19937_64 rng(1);
    const auto X = tuple({random_complex(rng, 3)});
    CHECK(weyl_eval(NcPolynomial::parse("x1", 1), X) == X.X[0]);
  }
  SUBCASE("x1 x2 on E12, E21 is half the identity") {
    const Matrix A = E(2, 1, 2), B = E(2, 2, 1);
    const Matrix oracle = (A * B + B * A) / 2.0;
    const auto W = weyl_eval(NcPolynomial::parse("x1*x2", 2), tuple({A, B}));
    CHECK(W == oracle);
    CHECK(W == 0.5 * Matrix::Identity(2, 2));
  }
  SUBCASE("x1^2 x2 on commuting diagonals is the pointwise product") {
    const auto W = weyl_eval(NcPolynomial::parse("x1^2*x2", 2), tuple({diag({1, 2}), diag({3, 4})}));
    CHECK((W - diag({3, 16})).norm() < 1e-15);
  }
  SUBCASE("controls and lifted constants scale the words") {
    Vector a(2);
    a << 2.0, -3.0;
    const ConstantLift C{E(2, 1, 2)};
    const auto W = weyl_eval(NcPolynomial::parse("a1*a2*c1 + a1*x1", 1), tuple({Matrix::Identity(2, 2)}), a, C);
    Matrix expect = -6.0 * E(2, 1, 2) + 2.0 * Matrix::Identity(2, 2);
    CHECK((W - expect).norm() < 1e-15);
    CHECK_THROWS_AS(weyl_eval(NcPolynomial::parse("a3*x1", 1), tuple({Matrix::Identity(2, 2)}), a), ConfigError);
  }
}

TEST_CASE("weyl symmetry: permuting a monomial leaves the value unchanged") {
  std::mt19937_64 rng(0xA1);
  std::uniform_int_distribution<int> degree(1, 3), letter(1, 3);
  int noncommuting = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto X = tuple({random_complex(rng, 3), random_complex(rng, 3), random_complex(rng, 3)});
    std::vector<int> idx(static_cast<std::size_t>(degree(rng)));
    for (auto& k : idx) k = letter(rng);
    auto word = [](const std::vector<int>& w) {
      std::string s = "(0.75 - 1.25*i)";
      for (int k : w) s += "*x" + std::to_string(k);
      return s;
    };
    auto perm = idx;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = weyl_eval(NcPolynomial::parse(word(idx), 3), X);
    const auto b = weyl_eval(NcPolynomial::parse(word(perm), 3), X);
    CHECK(a == b);
    // Independent oracle: average of all d! ordered products.
    std::vector<std::size_t> order(idx.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Matrix sum = Matrix::Zero(3, 3);
    int count = 0;
    do {
      Matrix p = Matrix::Identity(3, 3);
      for (auto o : order) p = p * X.X[static_cast<std::size_t>(idx[o] - 1)];
      sum += p;
      ++count;
    } while (std::next_permutation(order.begin(), order.end()));
    const Matrix oracle = Complex(0.75, -1.25) * sum / static_cast<double>(count);
    CHECK((a - oracle).norm() < 1e-12 * (1.0 + oracle.norm()));
    if ((evaluate_ordered(NcPolynomial::parse(word(idx), 3), X) - a).norm() > 1e-6) ++noncommuting;
  }
  CHECK(noncommuting > 10);
}

TEST_CASE("commutative collapse on diagonal tuples") {
  std::mt19937_64 rng(0xD1A6);
  std::uniform_real_distribution<double> U(-1.5, 1.5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Matrix> X;
    for (int g = 0; g < 3; ++g) {
      Matrix d = Matrix::Zero(3, 3);
      for (int k = 0; k < 3; ++k) d(k, k) = Complex(U(rng), U(rng));
      X.push_back(d);
    }
    const auto p = NcPolynomial::parse("x3*x1*x2 - 2*x2*x2*x1 + 0.5*x3*x1 + x2", 3);
    worst = std::max(worst, (weyl_eval(p, tuple(X)) - evaluate_ordered(p, tuple(X))).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("relation residuals and admissibility") {
  const auto H = heisenberg();
  const auto exact = tuple({E(3, 1, 2), E(3, 2, 3), E(3, 1, 3)});
  // Direct multiplication oracle for the first relation.
  CHECK((exact.X[0] * exact.X[1] - exact.X[1] * exact.X[0] - exact.X[2]).norm() == 0.0);
  CHECK(relation_residual(H, exact) == 0.0);
  CHECK(admissible_check(H, exact, 1e-12));

  auto bent = exact;
  bent.X[2] += 0.1 * E(3, 1, 2);
  CHECK(relation_residual(H, bent) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK_FALSE(admissible_check(H, bent, 1e-3));

  const auto empty = AlgebraPresentation::make("free", 3, {});
  std::mt19937_64 rng(5);
  const auto any = tuple({random_complex(rng, 3), random_complex(rng, 3), random_complex(rng, 3)});
  CHECK(relation_residual(empty, any) == 0.0);
  CHECK(admissible_check(empty, any, 0.0));
  CHECK_THROWS_AS(relation_residual(H, tuple({E(3, 1, 2)})), ConfigError);
}

TEST_CASE("residual certificate: zero tolerance admits exactly the exact representations") {
  const auto C = AlgebraPresentation::commutative("commutative", 2);
  const auto H = heisenberg();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-1, 1);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 60; ++trial) {
    const bool make_exact = coin(rng) == 1;
    MatrixTuple X;
    const AlgebraPresentation* pres = &C;
    if (trial % 2 == 0) {
      // Polynomials in one matrix commute.
      const Matrix A = random_complex(rng, 3);
      X = tuple({A, make_exact ? Matrix(A * A + 2.0 * A) : random_complex(rng, 3)});
    } else {
      pres = &H;
      const Matrix a = U(rng) * E(3, 1, 2) + U(rng) * E(3, 2, 3);
      const Matrix b = U(rng) * E(3, 1, 2) + U(rng) * E(3, 2, 3) + U(rng) * E(3, 1, 3);
      X = tuple({a, b, make_exact ? Matrix(a * b - b * a) : Matrix(a * b - b * a + 0.25 * E(3, 1, 2))});
    }
    bool all_zero = true;
    for (const auto& r : pres->relations) all_zero = all_zero && evaluate_ordered(r, X).isZero(0.0);
    CHECK(admissible_check(*pres, X, 0.0) == all_zero);
  }
}

TEST_CASE("frozen dynamics keep the tuple and its residual") {
  const auto H = heisenberg();
  auto X = tuple({E(3, 1, 2), E(3, 2, 3), E(3, 1, 3)});
  X.X[2] += 1e-11 * E(3, 2, 1);
  RepDynSpec spec{symbols({"0", "0", "0"}, 3), X, H, {}, {}};
  const auto r0 = relation_residual(H, X);
  CHECK(r0 > 0.0);
  const auto trace = integrate_repdyn(spec, nullptr, 0.0, 1.0, 0.125);
  REQUIRE(trace.t.size() == 9);
  for (std::size_t k = 0; k < trace.t.size(); ++k) {
    CHECK(trace.residual[k] == r0);
    for (int g = 0; g < 3; ++g) CHECK(trace.X[k].X[g] == X.X[g]);
  }
}

TEST_CASE("diagonal logistic dynamics follow the scalar closed form per slot") {
  const double r = 1.3;
  const auto X0 = tuple({diag({0.1, 0.4, 0.8}), diag({0.2, 0.5, 0.05})});
  RepDynSpec spec{symbols({"a1*(x1 - x1*x1)", "a1*(x2 - x2^2)"}, 2), X0,
                  AlgebraPresentation::commutative("commutative", 2), {}, {}};
  const auto trace = integrate_repdyn(spec, [r](double) { return Vector::Constant(1, r); }, 0.0, 4.0, 1e-2);
  auto closed = [r](double x0, double t) { return x0 * std::exp(r * t) / (1.0 - x0 + x0 * std::exp(r * t)); };
  double worst = 0.0;
  for (std::size_t k = 0; k < trace.t.size(); ++k) {
    for (int g = 0; g < 2; ++g) {
      for (int j = 0; j < 3; ++j) {
        const double x0 = X0.X[g](j, j).real();
        worst = std::max(worst, std::abs(trace.X[k].X[g](j, j) - Complex(closed(x0, trace.t[k]), 0.0)));
      }
      CHECK(trace.X[k].X[g].isDiagonal(0.0));
    }
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("heisenberg dynamics tangent to the variety conserve the relations") {
  RepDynSpec spec{symbols({"a1*x1 + a2*x2", "a1*x2", "2*a1*x3"}, 3), tuple({E(3, 1, 2), E(3, 2, 3), E(3, 1, 3)}),
                  heisenberg(), {}, {}};
  auto a = [](double t) {
    Vector v(2);
    v << 0.2 * std::sin(t), 0.5 * std::cos(0.5 * t);
    return v;
  };
  const auto start = std::chrono::steady_clock::now();
  const auto trace = integrate_repdyn(spec, a, 0.0, 10.0, 1e-3);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(trace.t.size() == 10001);
  CHECK(*std::max_element(trace.residual.begin(), trace.residual.end()) < 1e-8);
  CHECK(seconds < 10.0);
  // X2 = exp(int a1) E23 in closed form.
  const double s = std::exp(0.2 * (1.0 - std::cos(10.0)));
  CHECK(std::abs(trace.X.back().X[1](1, 2) - Complex(s, 0.0)) < 1e-9);
}

TEST_CASE("projection contract: residuals stay within tolerance when the run succeeds") {
  // X2 grows while X3 stays put, so every step leaves the variety.
  RepDynSpec spec{symbols({"0", "x2", "0"}, 3), tuple({E(3, 1, 2), E(3, 2, 3), E(3, 1, 3)}), heisenberg(), {}, {}};
  const auto trace = integrate_repdyn(spec, nullptr, 0.0, 1.0, 1e-2);
  CHECK_FALSE(trace.insolvable);
  for (double r : trace.residual) CHECK(r <= spec.projection.tolerance);
  const auto& X = trace.X.back();
  CHECK(X.X[1].norm() > 2.0);
  CHECK((X.X[0] * X.X[1] - X.X[1] * X.X[0] - X.X[2]).norm() <= 1e-9);
}

TEST_CASE("projection failure raises the insolvable signal") {
  RepDynSpec spec{symbols({"0", "a1*c1"}, 2), tuple({E(3, 1, 2) + E(3, 1, 3), E(3, 1, 3)}),
                  AlgebraPresentation::commutative("commutative", 2), {E(3, 2, 3)}, {}};
  spec.projection.step_clip = 1e-6;
  auto a = [](double t) { return Vector::Constant(1, t >= 1.5 ? 1.0 : 0.0); };
  try {
    integrate_repdyn(spec, a, 0.0, 3.0, 1.0 / 64);
    FAIL("expected InsolvableError");
  } catch (const InsolvableError& e) {
    CHECK(e.time() == doctest::Approx(1.5 - 1.0 / 64));
    CHECK(e.residual() > 1e-9);
  }
  const auto partial = integrate_repdyn_until(spec.F, spec.presentation, spec.constants, spec.projection, a,
                                              spec.initial, 0.0, 3.0, 1.0 / 64);
  CHECK(partial.insolvable);
  CHECK(partial.t.back() == partial.fail_time);
  for (double r : partial.residual) CHECK(r <= 1e-9);
}

TEST_CASE("representative dynamics configuration errors") {
  const auto C = AlgebraPresentation::commutative("commutative", 2);
  RepDynSpec off{symbols({"0", "0"}, 2), tuple({E(2, 1, 2), E(2, 2, 1)}), C, {}, {}};
  CHECK_THROWS_AS(integrate_repdyn(off, nullptr, 0, 1, 0.1), ConfigError);
  RepDynSpec sizes{symbols({"0"}, 2), tuple({diag({1, 2}), diag({3, 4})}), C, {}, {}};
  CHECK_THROWS_AS(integrate_repdyn(sizes, nullptr, 0, 1, 0.1), ConfigError);
  RepDynSpec unlifted{symbols({"c1", "0"}, 2), tuple({diag({1, 2}), diag({3, 4})}), C, {}, {}};
  CHECK_THROWS_AS(integrate_repdyn(unlifted, nullptr, 0, 1, 0.1), ConfigError);
  RepDynSpec big{symbols({"0"}, 1), tuple({Matrix::Identity(7, 7)}), AlgebraPresentation::make("free", 1, {}), {}, {}};
  CHECK_THROWS_AS(integrate_repdyn(big, nullptr, 0, 1, 0.1), ConfigError);
  RepDynSpec ok{symbols({"0", "0"}, 2), tuple({diag({1, 2}), diag({3, 4})}), C, {}, {}};
  CHECK_THROWS_AS(integrate_repdyn(ok, nullptr, 0, 1, 0.3), ConfigError);
}

TEST_CASE("equivalence partition of a label trace") {
  const std::vector<double> t{0.0, 0.5, 1.0, 1.5, 2.0};
  SUBCASE("constant label") {
    const auto p = equivalence_partition(t, {"A", "A", "A", "A", "A"});
    REQUIRE(p.size() == 1);
    CHECK(p[0].start == 0.0);
    CHECK(p[0].end == 2.0);
    CHECK(p[0].closed_end);
  }
  SUBCASE("switch at the midpoint") {
    const auto p = equivalence_partition(t, {"A", "A", "B", "B", "B"});
    REQUIRE(p.size() == 2);
    CHECK(p[0].end == 1.0);
    CHECK_FALSE(p[0].closed_end);
    CHECK(p[1].start == 1.0);
    CHECK(p[1].label == "B");
  }
  SUBCASE("alternating labels") {
    const auto p = equivalence_partition(t, {"A", "B", "A", "B", "A"});
    REQUIRE(p.size() == 5);
    for (std::size_t k = 0; k + 1 < p.size(); ++k) CHECK(p[k].end == p[k + 1].start);
  }
  CHECK_THROWS_AS(equivalence_partition(t, {"A", "", "A", "A", "A"}), DataError);
  CHECK_THROWS_AS(equivalence_partition({}, {}), DataError);
}

TEST_CASE("inverse problem: linear scalar system") {
  InverseProblem p;
  p.phi = {"u*x"};
  p.controls = {"0.5*cos(t)"};
  p.x0 = Vector::Constant(1, 2.0);
  p.t0 = 0.0;
  p.t1 = 2.0;
  p.dt = 1e-3;
  const auto sol = solve_inverse_problem(p);
  REQUIRE(sol.symbols.size() == 1);
  CHECK(sol.symbols[0] == "a1*x1");
  CHECK(sol.report.symbolic_match);
  CHECK(sol.report.pointwise_deviation < 1e-14);
  double worst = 0.0;
  for (std::size_t k = 0; k < sol.trace.t.size(); ++k) {
    const double closed = 2.0 * std::exp(0.5 * std::sin(sol.trace.t[k]));
    worst = std::max(worst, std::abs(sol.trace.X[k].X[0](0, 0).real() - closed));
  }
  CHECK(worst < 1e-10);
  CHECK(sol.spec.presentation.relations.empty());
}

TEST_CASE("inverse problem: logistic system against a scalar reference run") {
  InverseProblem p;
  p.phi = {"u*x*(1 - x)"};
  p.controls = {"1 + 0.5*sin(t)"};
  p.x0 = Vector::Constant(1, 0.1);
  p.t0 = 0.0;
  p.t1 = 5.0;
  p.dt = 1e-3;
  p.dimension = 3;
  p.slot = 1;
  const auto sol = solve_inverse_problem(p);
  REQUIRE(sol.monomials.size() == 2);
  CHECK(sol.report.symbolic_match);
  CHECK(sol.report.pointwise_deviation < 1e-13);
  const auto ref = testing_support::rk4(
      [](double t, const Vector& x) { return Vector::Constant(1, (1 + 0.5 * std::sin(t)) * x[0] * (1 - x[0])); },
      Vector::Constant(1, 0.1), 0.0, 1e-3, 5000);
  double worst = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    worst = std::max(worst, std::abs(sol.trace.X[k].X[0](1, 1).real() - ref[k][0]));
    CHECK(sol.trace.X[k].X[0].isDiagonal(0.0));
  }
  CHECK(worst < 1e-9);
  CHECK(sol.report.slot_deviation < 1e-9);
}

TEST_CASE("inverse problem: lifted constant") {
  InverseProblem p;
  p.phi = {"0.3 + u*x"};
  p.controls = {"-0.8"};
  p.x0 = Vector::Constant(1, 1.0);
  p.t1 = 3.0;
  p.dt = 1e-3;
  p.lift_constants = true;
  const auto sol = solve_inverse_problem(p);
  REQUIRE(sol.spec.constants.size() == 1);
  CHECK((sol.spec.constants[0] - 0.3 * Matrix::Identity(2, 2)).norm() == 0.0);
  CHECK(sol.spec.F[0].uses_constants());
  CHECK(sol.report.symbolic_match);
  // x' = 0.3 - 0.8 x: x = 0.375 + 0.625 e^{-0.8 t}.
  double worst = 0.0;
  for (std::size_t k = 0; k < sol.trace.t.size(); ++k) {
    worst = std::max(worst, std::abs(sol.trace.X[k].X[0](0, 0).real() - (0.375 + 0.625 * std::exp(-0.8 * sol.trace.t[k]))));
  }
  CHECK(worst < 1e-9);
  CHECK(sol.report.slot_deviation < 1e-9);

  p.phi = {"u + u*x"};
  p.controls = {"1"};
  CHECK_THROWS_AS(solve_inverse_problem(p), ConfigError);
}

TEST_CASE("inverse problem: two states and rejected forms") {
  InverseProblem p;
  p.phi = {"x2", "-u1*x1 - 0.1*x2 + u2*x1^3"};
  p.controls = {"1", "-0.05"};
  p.x0 = Vector(2);
  p.x0 << 1.0, 0.0;
  p.t1 = 4.0;
  p.dt = 1e-3;
  const auto sol = solve_inverse_problem(p);
  CHECK(sol.report.symbolic_match);
  CHECK(sol.report.pointwise_deviation < 1e-12);
  CHECK(sol.report.slot_deviation < 1e-9);

  InverseProblem bad = p;
  bad.phi = {"sin(x1)", "x2"};
  CHECK_THROWS_AS(solve_inverse_problem(bad), ConfigError);
  bad.phi = {"x1^4", "x2"};
  CHECK_THROWS_AS(solve_inverse_problem(bad), ConfigError);
  bad.phi = {"x1/x2", "x2"};
  CHECK_THROWS_AS(solve_inverse_problem(bad), ConfigError);
  bad.phi = {"u3*x1", "x2"};
  CHECK_THROWS_AS(solve_inverse_problem(bad), ConfigError);
}

TEST_CASE("inverse fidelity stays within ten times the self-convergence error") {
  for (const char* phi : {"u*x*(1 - x)", "u*x - x^3", "0.2 + u*x^2"}) {
    for (double dt : {0.05, 0.025}) {
      InverseProblem p;
      p.phi = {phi};
      p.controls = {"0.8 + 0.3*cos(2*t)"};
      p.x0 = Vector::Constant(1, 0.3);
      p.t1 = 2.0;
      p.dt = dt;
      const auto sol = solve_inverse_problem(p);
      CAPTURE(phi);
      CHECK(sol.report.self_convergence > 0.0);
      CHECK(sol.report.slot_deviation <= 10.0 * sol.report.self_convergence);
    }
  }
}

namespace {

AlgebraClassRegistry crafted_registry() {
  AlgebraClassRegistry reg;
  reg.add({"commutative", {AlgebraPresentation::commutative("commutative-m2", 2)}});
  reg.add({"heisenberg", {heisenberg()}});
  return reg;
}

TacticalRepDynSpec crafted(double switch_on = 1.5) {
  TacticalRepDynSpec s;
  s.registry = crafted_registry();
  s.dynamics.push_back({"commutative", symbols({"0", "a1*c1"}, 2), {E(3, 2, 3)}});
  s.dynamics.push_back({"heisenberg", symbols({"0", "a1*c1", "a1*c2"}, 3), {E(3, 2, 3), E(3, 1, 3)}});
  s.embeddings.push_back({"commutative", "heisenberg", symbols({"x1", "x2", "x1*x2 - x2*x1"}, 2)});
  s.initial = tuple({E(3, 1, 2) + E(3, 1, 3), E(3, 1, 3)});
  s.initial_class = "commutative";
  s.initial_eta = Vector::Zero(1);
  s.projection.step_clip = 1e-6;
  s.a = [switch_on](double t) { return Vector::Constant(1, t >= switch_on ? 1.0 : 0.0); };
  for (int k = 0; k <= 6; ++k) s.grid.push_back(0.5 * k);
  s.dt = 1.0 / 64;
  return s;
}

}  // namespace

TEST_CASE("tactical repdyn: commutativity breaks and the class moves to heisenberg") {
  DialecticalObject delta("delta", {"commutative", "heisenberg"});
  delta.add("commutative", {"insolvable > 0.5"}, "heisenberg", {"eta[0] + 1"});
  const auto run = run_tactical_repdyn(crafted(), delta);
  REQUIRE(run.transitions.size() == 1);
  const auto& tr = run.transitions.front();
  CHECK(tr.from == "commutative");
  CHECK(tr.to == "heisenberg");
  CHECK(tr.insolvable);
  CHECK(tr.window == 3);
  CHECK(tr.time == doctest::Approx(1.5 - 1.0 / 64));
  REQUIRE(run.stream.size() == 6);
  CHECK(run.stream[1].class_label == "commutative");
  CHECK(run.stream[2].class_label == "heisenberg");
  CHECK(run.stream[2].delta_label == "commutative->heisenberg");
  CHECK(run.stream.back().eta[0] == 1.0);
  double after = 0.0;
  for (std::size_t k = 0; k < run.t.size(); ++k) {
    if (run.labels[k] == "heisenberg") after = std::max(after, run.residual[k]);
  }
  CHECK(after < 1e-8);
  // X3 = [X1, X2] = s E13. RK4 sees the switch at 1.5 only in the last
  // stage of the straddling step, so s(3) = 1.5 + dt/6.
  const auto& X = run.X.back();
  REQUIRE(X.size() == 3);
  CHECK(std::abs(X.X[2](0, 2) - Complex(1.5 + 1.0 / 384, 0.0)) < 1e-12);
  CHECK(X.X[2](0, 2) == X.X[1](1, 2));
  const auto parts = equivalence_partition(run.t, run.labels);
  REQUIRE(parts.size() == 2);
  CHECK(parts[1].start == doctest::Approx(1.5 - 1.0 / 64));
}

TEST_CASE("tactical repdyn: an empty transition table strands the class") {
  DialecticalObject delta("delta", {"commutative", "heisenberg"});
  try {
    run_tactical_repdyn(crafted(), delta);
    FAIL("expected StrandedClassError");
  } catch (const StrandedClassError& e) {
    CHECK(e.class_label() == "commutative");
    CHECK(e.window() == 3);
  }
}

TEST_CASE("tactical repdyn: tangent dynamics never leave the class") {
  DialecticalObject delta("delta", {"commutative", "heisenberg"});
  delta.add("commutative", {"insolvable > 0.5"}, "heisenberg");
  auto spec = crafted(100.0);
  const auto run = run_tactical_repdyn(spec, delta);
  CHECK(run.transitions.empty());
  REQUIRE(run.stream.size() == spec.grid.size() - 1);
  for (const auto& c : run.stream) CHECK(c.class_label == "commutative");
}

TEST_CASE("tactical repdyn: the class stream is causal") {
  DialecticalObject delta("delta", {"commutative", "heisenberg"});
  delta.add("commutative", {"insolvable > 0.5"}, "heisenberg");
  const auto base = run_tactical_repdyn(crafted(), delta);
  auto changed = crafted();
  changed.a = [](double t) { return Vector::Constant(1, t >= 1.5 ? (t > 2.0 ? -3.0 : 1.0) : 0.0); };
  const auto other = run_tactical_repdyn(changed, delta);
  REQUIRE(other.stream.size() == base.stream.size());
  for (std::size_t n = 0; n < 4; ++n) {
    CHECK(other.stream[n].class_label == base.stream[n].class_label);
    CHECK(other.stream[n].theta == base.stream[n].theta);
  }
  CHECK(other.X.back().X[1] != base.X.back().X[1]);
}

TEST_CASE("tactical repdyn: configuration checks") {
  DialecticalObject delta("delta", {"commutative", "heisenberg"});
  delta.add("commutative", {"insolvable > 0.5"}, "heisenberg");
  auto spec = crafted();
  spec.embeddings.clear();
  CHECK_THROWS_AS(run_tactical_repdyn(spec, delta), ConfigError);
  spec = crafted();
  spec.initial_class = "sl2";
  CHECK_THROWS_AS(run_tactical_repdyn(spec, delta), ConfigError);
  spec = crafted();
  spec.dynamics.pop_back();
  CHECK_THROWS_AS(run_tactical_repdyn(spec, delta), ConfigError);
  AlgebraClassRegistry reg;
  CHECK_THROWS_AS(reg.add({"empty", {}}), ConfigError);
  reg.add({"c", {AlgebraPresentation::commutative("c2", 2)}});
  CHECK_THROWS_AS(reg.add({"c", {AlgebraPresentation::commutative("c3", 3)}}), ConfigError);
}
