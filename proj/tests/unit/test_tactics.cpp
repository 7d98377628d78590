#include <doctest.h>

#include "tactica/errors.hpp"
#include "tactica/tactics.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace tactica;
using namespace tactica::tactics;
using testing_support::scalar;

namespace {

constexpr double kDt = 1.0 / 64;  // exact on integer grids

std::vector<double> unit_grid(int windows) {
  std::vector<double> g;
  for (int n = 0; n <= windows; ++n) g.push_back(n);
  return g;
}

/// d phi/dt = -lambda phi + u, u = u0 + eps, with the given pure control and epsilon.
CommentedGame decay_game(double theta0, std::function<double(double)> u0, std::function<double(double)> eps,
                         int windows = 5) {
  CommentedGame g;
  g.system.state_dim = 1;
  g.system.initial_state = scalar(1.0);
  g.system.lambda = scalar(theta0);
  g.system.dynamics = [](const game::DynamicsArgs& a) { return scalar(-a.lambda[0] * a.phi[0] + a.u[0]); };
  game::Player p;
  p.policy.signal = [u0](double t) { return scalar(u0(t)); };
  p.coupling.known_form = [](const game::CouplingArgs& a, const Vector& e) { return scalar(a.u0[0] + e[0]); };
  p.epsilon.form = [eps](const game::CouplingArgs& a) { return scalar(eps(a.t)); };
  g.system.players.push_back(p);
  g.omega = {verbal::FunctionalKind::Mean, [](const verbal::WindowPoint& p) { return p.phi; }};
  g.v = {verbal::FunctionalKind::Mean, [](const verbal::WindowPoint& p) { return p.u0; }};
  g.rule.update = [](const Vector& th, const Vector&, const Vector&) { return th; };
  g.initial.theta = scalar(theta0);
  g.grid = unit_grid(windows);
  g.dt = kDt;
  return g;
}

CommentedGame sine_game(double theta0, int windows = 5) {
  return decay_game(theta0, [](double t) { return 0.5 * std::sin(t); }, [](double) { return 0.0; }, windows);
}

std::vector<double> thetas(const CommentedRun& r, std::size_t c = 0) {
  std::vector<double> out;
  for (const auto& s : r.comments) out.push_back(s.theta[c]);
  return out;
}

}  // namespace

TEST_CASE("frozen comment equals a plain run with constant parameter") {
  const auto g = sine_game(0.7);
  const auto run = run_commented_game(g);
  const auto plain = game::simulate(g.system, nullptr, 0.0, 5.0, kDt);
  REQUIRE(run.trajectory.size() == plain.size());
  for (std::size_t k = 0; k < plain.size(); ++k) {
    CHECK(run.trajectory.t[k] == plain.t[k]);
    CHECK(run.trajectory.phi[k][0] == plain.phi[k][0]);
  }
  for (const auto& c : run.comments) CHECK(c.theta[0] == 0.7);
  CHECK(run.windows.size() == 5);
  CHECK(run.comments.size() == 6);
}

TEST_CASE("comment accumulating the mean of a unit epsilon counts windows") {
  auto g = decay_game(0.25, [](double) { return 0.0; }, [](double) { return 1.0; });
  g.system.lambda = Vector();
  g.system.dynamics = [](const game::DynamicsArgs& a) { return scalar(-a.phi[0]); };
  g.omega = {verbal::FunctionalKind::Mean, [](const verbal::WindowPoint& p) { return p.eps; }};
  g.rule.update = make_comment_update({"theta[0] + omega[0]"}, {});
  const auto run = run_commented_game(g);
  for (std::size_t n = 0; n < run.comments.size(); ++n) {
    CHECK(run.comments[n].index == static_cast<int>(n));
    CHECK(run.comments[n].theta[0] == 0.25 + static_cast<double>(n));
  }
}

TEST_CASE("gain scheduling matches hand-stepped windows") {
  // d phi/dt = -theta phi; theta grows by one whenever the window mean exceeds 0.5.
  auto g = decay_game(0.2, [](double) { return 0.0; }, [](double) { return 0.0; });
  g.system.initial_state = scalar(2.0);
  g.dt = 1.0 / 512;
  g.rule.update = [](const Vector& th, const Vector& om, const Vector&) {
    return scalar(th[0] + (om[0] > 0.5 ? 1.0 : 0.0));
  };
  const auto run = run_commented_game(g);

  double phi = 2.0;
  double theta = 0.2;
  for (int n = 1; n <= 5; ++n) {
    const double mean = phi * (1 - std::exp(-theta)) / theta;
    CHECK(std::abs(mean - 0.5) > 1e-3);
    phi *= std::exp(-theta);
    CHECK(std::abs(run.windows[n - 1].omega[0] - mean) < 1e-9);
    CHECK(std::abs(run.trajectory.phi[static_cast<std::size_t>(n) * 512][0] - phi) < 1e-9);
    theta += mean > 0.5 ? 1.0 : 0.0;
    CHECK(run.comments[n].theta[0] == theta);
  }
}

TEST_CASE("dialectical object moves the class label") {
  auto g = sine_game(0.5);
  g.initial.class_label = "calm";
  g.initial.eta = scalar(0.0);
  DialecticalObject d("alarm", {"calm", "alert"});
  d.add("calm", {"omega[0] < 0.6"}, "alert", {"eta[0] + 1"});
  d.add("alert", {"omega[0] > 10"}, "calm");
  const auto run = run_commented_game(g, &d);
  int fired = 0;
  for (std::size_t n = 1; n < run.comments.size(); ++n) {
    if (!run.comments[n].delta_label.empty()) ++fired;
    const bool expect_alert = run.comments[n - 1].class_label == "alert" || run.windows[n - 1].omega[0] < 0.6;
    CHECK(run.comments[n].class_label == (expect_alert ? "alert" : "calm"));
  }
  CHECK(fired == 1);
  CHECK(run.comments.back().eta[0] == 1.0);

  CHECK_THROWS_AS(d.add("calm", {"omega[0] < 0.6"}, "alert"), ConfigError);
  CHECK_THROWS_AS(d.add("calm", {}, "panic"), ConfigError);
  auto stranger = g;
  stranger.initial.class_label = "unknown";
  CHECK_THROWS_AS(run_commented_game(stranger, &d), ConfigError);
}

TEST_CASE("comment that does not fit the parameter slot") {
  auto g = sine_game(0.5);
  g.initial.theta = Vector::Constant(2, 0.5);
  CHECK_THROWS_AS(run_commented_game(g), ConfigError);
  auto h = sine_game(0.5);
  h.rule.update = [](const Vector&, const Vector&, const Vector&) { return Vector::Zero(2); };
  CHECK_THROWS_AS(run_commented_game(h), ConfigError);
}

TEST_CASE("zero interaction reproduces the uncoupled runs") {
  auto g1 = sine_game(0.5);
  g1.rule.update = make_comment_update({"0.5 * theta[0] + 0.3 * omega[0]"}, {});
  auto g2 = decay_game(1.1, [](double t) { return std::cos(2 * t); }, [](double) { return 0.1; });
  g2.rule.update = make_comment_update({"theta[0] - 0.1 * v[0]"}, {});
  const auto coupled = tactical_interaction(g1, g2, InteractionTerm::zero(), InteractionTerm::zero());
  const auto r1 = run_commented_game(g1);
  const auto r2 = run_commented_game(g2);
  CHECK(thetas(coupled[0]) == thetas(r1));
  CHECK(thetas(coupled[1]) == thetas(r2));
  CHECK(coupled[0].trajectory.phi == r1.trajectory.phi);
  CHECK(coupled[1].trajectory.phi == r2.trajectory.phi);
}

TEST_CASE("pure exchange terms swap the streams") {
  auto g1 = sine_game(1.0);
  auto g2 = sine_game(2.0);
  g1.system.lambda = Vector();
  g2.system.lambda = Vector();
  g1.rule.update = g2.rule.update = [](const Vector& th, const Vector&, const Vector&) {
    return Vector::Zero(th.size());
  };
  const auto exchange = InteractionTerm::compile({"other[0]"}, {}, 1);
  const auto r = tactical_interaction(g1, g2, exchange, exchange);
  for (std::size_t n = 0; n < r[0].comments.size(); ++n) {
    CHECK(r[0].comments[n].theta[0] == (n % 2 == 0 ? 1.0 : 2.0));
    CHECK(r[1].comments[n].theta[0] == (n % 2 == 0 ? 2.0 : 1.0));
  }
}

TEST_CASE("linear coupled comments follow matrix powers") {
  const int windows = 20;
  auto g1 = sine_game(1.0, windows);
  auto g2 = sine_game(-0.5, windows);
  g1.system.lambda = Vector();
  g2.system.lambda = Vector();
  g1.rule.update = make_comment_update({"0.6 * theta[0]"}, {});
  g2.rule.update = make_comment_update({"0.7 * theta[0]"}, {});
  const auto r = tactical_interaction(g1, g2, InteractionTerm::compile({"0.3 * other[0]"}, {}, 1),
                                      InteractionTerm::compile({"0.2 * other[0]"}, {}, 1));
  Eigen::Matrix2d m;
  m << 0.6, 0.3, 0.2, 0.7;
  const Eigen::Vector2d x0(1.0, -0.5);
  for (int n = 0; n <= windows; ++n) {
    // M^n by repeated squaring
    Eigen::Matrix2d p = Eigen::Matrix2d::Identity();
    Eigen::Matrix2d b = m;
    for (int e = n; e > 0; e >>= 1) {
      if (e & 1) p = p * b;
      b = b * b;
    }
    const Eigen::Vector2d x = p * x0;
    CHECK(std::abs(r[0].comments[n].theta[0] - x[0]) < 1e-12);
    CHECK(std::abs(r[1].comments[n].theta[0] - x[1]) < 1e-12);
  }
}

TEST_CASE("synthesis with own forms reproduces independent runs") {
  auto g1 = sine_game(0.5);
  g1.rule.update = make_comment_update({"0.5 * theta[0] + 0.3 * omega[0]"}, {});
  auto g2 = decay_game(1.1, [](double t) { return std::cos(2 * t); }, [](double) { return 0.1; });
  g2.rule.update = make_comment_update({"theta[0] - 0.1 * v[0]"}, {});
  SynthesisRule rule;
  for (std::size_t j = 0; j < 2; ++j) {
    const auto own = (j == 0 ? g1 : g2).rule.update;
    rule.forms.push_back([own, j](const SynthesisArgs& a) { return own(a.theta(j), a.omega(j), a.v(j)); });
    rule.masks.push_back({j});
  }
  const auto s = tactical_synthesis({g1, g2}, rule);
  CHECK(thetas(s[0]) == thetas(run_commented_game(g1)));
  CHECK(thetas(s[1]) == thetas(run_commented_game(g2)));
}

TEST_CASE("interaction is the two-game synthesis with interaction forms") {
  auto g1 = sine_game(0.5);
  g1.rule.update = make_comment_update({"0.5 * theta[0] + 0.3 * omega[0]"}, {});
  auto g2 = decay_game(1.1, [](double t) { return std::cos(2 * t); }, [](double) { return 0.1; });
  g2.rule.update = make_comment_update({"theta[0] - 0.1 * v[0]"}, {});
  const auto t12 = InteractionTerm::compile({"0.05 * other[0] * omega[0]"}, {}, 1);
  const auto t21 = InteractionTerm::compile({"-0.1 * sin(other[0])"}, {}, 1);
  const auto inter = tactical_interaction(g1, g2, t12, t21);

  SynthesisRule rule;
  rule.forms.push_back([&](const SynthesisArgs& a) -> Vector {
    return g1.rule.update(a.theta(0), a.omega(0), a.v(0)) + t12.form(a.theta(0), a.theta(1), a.omega(0), a.v(0));
  });
  rule.forms.push_back([&](const SynthesisArgs& a) -> Vector {
    return g2.rule.update(a.theta(1), a.omega(1), a.v(1)) + t21.form(a.theta(1), a.theta(0), a.omega(1), a.v(1));
  });
  rule.masks = {{0, 1}, {0, 1}};
  const auto synth = tactical_synthesis({g1, g2}, rule);
  CHECK(thetas(inter[0]) == thetas(synth[0]));
  CHECK(thetas(inter[1]) == thetas(synth[1]));
  CHECK(thetas(inter[0]) != thetas(run_commented_game(g1)));
}

TEST_CASE("hierarchical three-game synthesis") {
  auto g1 = sine_game(0.5);
  auto g2 = decay_game(1.1, [](double t) { return std::cos(2 * t); }, [](double) { return 0.1; });
  auto g3 = sine_game(0.9);
  const std::vector<CommentDims> dims(3);
  SynthesisRule rule;
  rule.forms = {make_synthesis_form({"0.9 * theta1[0] + 0.1 * omega1[0]"}, dims, {0}),
                make_synthesis_form({"theta2[0] - 0.2 * v2[0]"}, dims, {1}),
                make_synthesis_form({"0.5 * theta3[0] + 0.1 * omega1[0] - 0.2 * v2[0] + 0.05 * theta1[0]"}, dims,
                                    {0, 1, 2})};
  rule.masks = {{0}, {1}, {0, 1, 2}};
  const auto r = tactical_synthesis({g1, g2, g3}, rule);
  for (std::size_t n = 1; n < r[2].comments.size(); ++n) {
    const double expect = 0.5 * r[2].comments[n - 1].theta[0] + 0.1 * r[0].windows[n - 1].omega[0] -
                          0.2 * r[1].windows[n - 1].v[0] + 0.05 * r[0].comments[n - 1].theta[0];
    CHECK(std::abs(r[2].comments[n].theta[0] - expect) < 1e-14);
    CHECK(std::abs(r[0].comments[n].theta[0] -
                   (0.9 * r[0].comments[n - 1].theta[0] + 0.1 * r[0].windows[n - 1].omega[0])) < 1e-14);
  }

  CHECK_THROWS_AS(make_synthesis_form({"theta3[0]"}, dims, {3}), ConfigError);
  CHECK_THROWS_AS(make_synthesis_form({"theta1[0] + theta2[0]"}, dims, {0}), ConfigError);
  auto bad = rule;
  bad.masks[2] = {0, 5};
  CHECK_THROWS_AS(tactical_synthesis({g1, g2, g3}, bad), ConfigError);
  auto wrong = rule;
  wrong.forms[0] = [](const SynthesisArgs& a) { return a.theta(1); };
  CHECK_THROWS_AS(tactical_synthesis({g1, g2, g3}, wrong), ConfigError);
}

TEST_CASE("interaction rejects mismatched grids") {
  auto g1 = sine_game(0.5);
  auto g2 = sine_game(0.5, 6);
  CHECK_THROWS_AS(tactical_interaction(g1, g2, InteractionTerm::zero(), InteractionTerm::zero()), ConfigError);
}

TEST_CASE("tactical extension on a probe grid") {
  const std::vector<CommentDims> dims(2);
  const auto original = make_comment_update({"0.5 * theta[0] + omega[0] - v[0]"}, {});
  const auto probes = probe_grid(dims, {-1.5, 0.0, 0.5, 2.0});
  CHECK(probes.size() == 4096);
  auto check = [&](const std::string& text) {
    SynthesisRule rule;
    rule.forms = {make_synthesis_form({text}, dims, {0, 1}), make_synthesis_form({"theta2[0]"}, dims, {1})};
    rule.masks = {{0, 1}, {1}};
    return is_tactical_extension(rule, 0, original, probes);
  };
  CHECK(check("0.5 * theta1[0] + omega1[0] - v1[0]").holds);
  CHECK(check("0 * theta2[0] + 0.5 * theta1[0] + omega1[0] - v1[0]").holds);
  const auto off = check("0.5 * theta1[0] + omega1[0] - v1[0] + 1e-3 * theta2[0]");
  CHECK_FALSE(off.holds);
  REQUIRE(off.witness.has_value());
  CHECK(off.witness->theta[1][0] != 0.0);
  CHECK(off.max_difference == doctest::Approx(2e-3));

  // many coordinates fall back to seeded draws
  const auto wide = probe_grid(std::vector<CommentDims>(4), {-1.0, 1.0}, {}, 8, 100);
  CHECK(wide.size() == 100);
  CHECK(wide[7].theta[3][0] == probe_grid(std::vector<CommentDims>(4), {-1.0, 1.0}, {}, 8, 100)[7].theta[3][0]);
}

TEST_CASE("comments only depend on past windows") {
  const auto early = [](double t) { return 0.5 * std::sin(t); };
  auto a = decay_game(0.5, early, [](double) { return 0.0; }, 6);
  auto b = decay_game(0.5, [&](double t) { return t <= 3.0 ? early(t) : 2.0 - t; }, [](double) { return 0.0; }, 6);
  a.rule.update = b.rule.update = make_comment_update({"0.8 * theta[0] + omega[0] + v[0]"}, {});
  const auto ra = run_commented_game(a);
  const auto rb = run_commented_game(b);
  for (int n = 0; n <= 3; ++n) CHECK(ra.comments[n].theta[0] == rb.comments[n].theta[0]);
  CHECK(ra.comments[4].theta[0] != rb.comments[4].theta[0]);
}
