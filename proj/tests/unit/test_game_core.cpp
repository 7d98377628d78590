#include <doctest.h>

#include "tactica/errors.hpp"
#include "tactica/game_core.hpp"
#include "tactica/game_expr.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace tactica;
using namespace tactica::game;
using testing_support::scalar;

TEST_CASE("zero vector field keeps the initial state") {
  InteractiveSystem s = testing_support::linear_decay();
  s.state_dim = 2;
  s.initial_state = Vector(2);
  s.initial_state << 0.3, -1.7;
  s.dynamics = [](const DynamicsArgs& a) { return Vector::Zero(a.phi.size()); };
  const auto traj = simulate(s, nullptr, 0.0, 1.0, 0.1);
  REQUIRE(traj.size() == 11);
  for (const auto& phi : traj.phi) CHECK((phi - s.initial_state).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(traj.t.back() == 1.0);
}

TEST_CASE("linear decay through the epsilon chain matches e^{-t}") {
  const auto traj = simulate(testing_support::linear_decay(), nullptr, 0.0, 2.0, 1e-3);
  REQUIRE(traj.size() == 2001);
  double err = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) err = std::max(err, std::abs(traj.phi[k][0] - std::exp(-traj.t[k])));
  CHECK(err < 1e-8);
  // the chain is recorded at every sample
  CHECK(traj.eps[5][0] == -1.0);
  CHECK(traj.u0[5][0] == 0.0);
  CHECK(traj.u[5][0] == doctest::Approx(-traj.phi[5][0]));
}

TEST_CASE("logistic run agrees with a fine-step reference and the closed form") {
  const auto sys = testing_support::logistic([](double, double) { return 0.0; });
  const auto coarse = simulate(sys, nullptr, 0.0, 5.0, 1e-3);
  const auto fine = simulate(sys, nullptr, 0.0, 5.0, 1e-5);
  double self_err = 0.0;
  double closed_err = 0.0;
  for (std::size_t k = 0; k < coarse.size(); ++k) {
    self_err = std::max(self_err, std::abs(coarse.phi[k][0] - fine.phi[k * 100][0]));
    const double exact = 1.0 / (1.0 + 9.0 * std::exp(-coarse.t[k]));
    closed_err = std::max(closed_err, std::abs(coarse.phi[k][0] - exact));
  }
  CHECK(self_err < 1e-7);
  CHECK(closed_err < 1e-7);
}

TEST_CASE("step halving shows fourth-order convergence") {
  const auto sys = testing_support::linear_decay();
  const double t1 = 2.0;
  const auto ref = simulate(sys, nullptr, 0.0, t1, 2.5e-3 / 16);
  std::vector<double> errors;
  for (double dt : {1e-2, 5e-3, 2.5e-3}) {
    const auto run = simulate(sys, nullptr, 0.0, t1, dt);
    errors.push_back(std::abs(run.phi.back()[0] - ref.phi.back()[0]));
  }
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    const double ratio = errors[i] / errors[i + 1];
    CHECK(ratio > 8.0);
    CHECK(ratio < 32.0);
  }
}

TEST_CASE("identical inputs give bit-identical trajectories") {
  const auto sys = testing_support::logistic([](double t, double phi) { return 0.1 * std::sin(t) * phi; });
  const auto a = simulate(sys, nullptr, 0.0, 3.0, 1e-2);
  const auto b = simulate(sys, nullptr, 0.0, 3.0, 1e-2);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a.phi[k][0] == b.phi[k][0]);
    CHECK(a.eps[k][0] == b.eps[k][0]);
  }
}

TEST_CASE("a non-dividing step ends exactly at t1") {
  const auto traj = simulate(testing_support::linear_decay(), nullptr, 0.0, 1.0, 0.3);
  REQUIRE(traj.size() == 5);
  CHECK(traj.t.back() == 1.0);
  CHECK(traj.t[3] == doctest::Approx(0.9));
}

TEST_CASE("divergence reports the last valid time") {
  InteractiveSystem s = testing_support::linear_decay();
  s.dynamics = [](const DynamicsArgs& a) { return scalar(a.phi[0] * a.phi[0]); };
  try {
    simulate(s, nullptr, 0.0, 3.0, 1e-3);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.last_valid_time() > 0.9);
    CHECK(e.last_valid_time() < 1.1);
  }
}

TEST_CASE("configuration errors") {
  InteractiveSystem s = testing_support::linear_decay();
  CHECK_THROWS_AS(simulate(s, nullptr, 1.0, 0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(simulate(s, nullptr, 0.0, 1.0, 0.0), ConfigError);
  s.players[0].coupling.derivative_order = 2;
  CHECK_THROWS_AS(simulate(s, nullptr, 0.0, 1.0, 0.1), ConfigError);
  s.players[0].coupling.derivative_order = 0;
  s.players[0].epsilon.ground_truth = false;
  CHECK_THROWS_AS(simulate(s, nullptr, 0.0, 1.0, 0.1), ConfigError);
  s.players[0].epsilon.ground_truth = true;
  s.players[0].coupling.direction = Direction::Inverse;
  CHECK_THROWS_AS(simulate(s, nullptr, 0.0, 1.0, 0.1), ConfigError);
}

TEST_CASE("first-derivative couplings are resolved by substitution") {
  // u = u0 + 0.5 dphi with Phi = u and u0 = 1 gives dphi = 2.
  InteractiveSystem s = testing_support::linear_decay();
  s.initial_state = scalar(0.0);
  s.players[0].policy.signal = [](double) { return scalar(1.0); };
  s.players[0].coupling.derivative_order = 1;
  s.players[0].coupling.known_form = [](const CouplingArgs& a, const Vector&) {
    return scalar(a.u0[0] + 0.5 * (*a.dphi)[0]);
  };
  const auto traj = simulate(s, nullptr, 0.0, 1.0, 0.01);
  CHECK(traj.phi.back()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(traj.dphi[10][0] == doctest::Approx(2.0).epsilon(1e-12));

  // non-contractive dependence is reported, not iterated forever
  s.players[0].coupling.known_form = [](const CouplingArgs& a, const Vector&) {
    return scalar(a.u0[0] + 2.0 * (*a.dphi)[0]);
  };
  CHECK_THROWS_AS(simulate(s, nullptr, 0.0, 1.0, 0.01), ConfigError);
}

TEST_CASE("inverse-direction couplings integrate with the closed-form solution") {
  // u0 = u - eps phi, solved u = u0 + eps phi: same run as the forward form.
  InteractiveSystem fwd = testing_support::linear_decay();
  InteractiveSystem inv = fwd;
  inv.players[0].coupling.direction = Direction::Inverse;
  inv.players[0].coupling.known_form = [](const CouplingArgs& a, const Vector& e) {
    return scalar(a.u0[0] - e[0] * a.phi[0]);
  };
  inv.players[0].coupling.solved_form = fwd.players[0].coupling.known_form;
  const auto a = simulate(fwd, nullptr, 0.0, 1.0, 1e-2);
  const auto b = simulate(inv, nullptr, 0.0, 1.0, 1e-2);
  CHECK(max_state_deviation(a, b) == 0.0);
  // the declared inverse relation recovers the pure control from the record
  for (std::size_t k = 0; k < b.size(); k += 10) {
    const CouplingArgs args{b.t[k], b.u[k], b.phi[k], nullptr, inv.lambda};
    CHECK(inv.players[0].coupling.known_form(args, b.eps[k])[0] == doctest::Approx(b.u0[k][0]));
  }
}

TEST_CASE("slow controls: continuous and discrete schedules") {
  InteractiveSystem s = testing_support::linear_decay();
  s.dynamics = [](const DynamicsArgs& a) { return scalar(a.lambda[0]); };
  s.initial_state = scalar(0.0);

  SlowControl cont;
  cont.schedule = SlowControl::Continuous([](double t) { return scalar(2.0 * t); });
  const auto a = simulate(s, &cont, 0.0, 1.0, 0.01);
  CHECK(a.phi.back()[0] == doctest::Approx(1.0).epsilon(1e-12));

  SlowControl disc;
  disc.schedule = SlowControl::Discrete{{0, scalar(1.0)}, {50, scalar(3.0)}};
  const auto b = simulate(s, &disc, 0.0, 1.0, 0.01);
  CHECK(b.phi.back()[0] == doctest::Approx(0.5 + 1.5).epsilon(1e-12));
  CHECK(b.lambda[49][0] == 1.0);
  CHECK(b.lambda[50][0] == 3.0);

  disc.schedule = SlowControl::Discrete{{0, scalar(1.0)}, {0, scalar(3.0)}};
  CHECK_THROWS_AS(simulate(s, &disc, 0.0, 1.0, 0.01), ConfigError);
  disc.schedule = SlowControl::Discrete{{3, scalar(1.0)}};
  CHECK_THROWS_AS(simulate(s, &disc, 0.0, 1.0, 0.01), ConfigError);
}

TEST_CASE("associated ordinary game") {
  SUBCASE("recorded constant epsilon reproduces the linear decay") {
    const auto sys = testing_support::linear_decay();
    const auto run = simulate(sys, nullptr, 0.0, 2.0, 1e-3);
    auto game = associated_ordinary_game(sys);
    bind_epsilon(game, 1, [](double) { return scalar(-1.0); });
    const auto replay = simulate(game, nullptr, 0.0, 2.0, 1e-3);
    CHECK(max_state_deviation(run, replay) <= 1e-12);
  }
  SUBCASE("two players double to four control slots") {
    auto sys = testing_support::linear_decay();
    sys.players.push_back(sys.players[0]);
    sys.dynamics = [](const DynamicsArgs& a) { return scalar(a.u[0] + a.u[1]); };
    CHECK(control_slot_count(sys) == 2);
    CHECK(control_slot_count(associated_ordinary_game(sys)) == 4);
  }
  SUBCASE("logistic with epsilon sin t replays exactly") {
    const auto sys = testing_support::logistic([](double t, double) { return std::sin(t); });
    const auto run = simulate(sys, nullptr, 0.0, 5.0, 1e-3);
    auto game = associated_ordinary_game(sys);
    replay_epsilon(game, run);
    const auto replay = simulate(game, nullptr, 0.0, 5.0, 1e-3);
    CHECK(max_state_deviation(run, replay) <= 1e-12);
  }
  SUBCASE("state-dependent epsilon replays bit for bit at stage level") {
    const auto sys = testing_support::logistic([](double t, double phi) { return 0.3 * phi * std::cos(t); });
    const auto run = simulate(sys, nullptr, 0.0, 4.0, 1e-2);
    auto game = associated_ordinary_game(sys);
    replay_epsilon(game, run);
    const auto replay = simulate(game, nullptr, 0.0, 4.0, 1e-2);
    CHECK(max_state_deviation(run, replay) == 0.0);
  }
  SUBCASE("unbound promoted slots and derivative couplings are rejected") {
    const auto sys = testing_support::linear_decay();
    const auto game = associated_ordinary_game(sys);
    CHECK_THROWS_AS(simulate(game, nullptr, 0.0, 1.0, 0.1), ConfigError);
    auto deriv = sys;
    deriv.players[0].coupling.derivative_order = 1;
    CHECK_THROWS_AS(associated_ordinary_game(deriv), ConfigError);
  }
}

TEST_CASE("indeterminate invariants") {
  SUBCASE("identity relation has no drift") {
    const auto run = simulate(testing_support::linear_decay(), nullptr, 0.0, 2.0, 1e-3);
    InvariantConstraint c{"coupling", [](const SampleView& s) { return s.u[0] - s.u0[0] - s.eps[0] * s.phi[0]; }};
    const auto drift = check_indeterminate_invariants(run, {c});
    REQUIRE(drift.size() == 1);
    CHECK(drift[0].max_drift <= 1e-10);
    CHECK_FALSE(drift[0].violated);
  }
  SUBCASE("non-conserved quantity reports drift") {
    auto sys = testing_support::linear_decay();
    sys.players[0].policy.signal = [](double t) { return scalar(1.0 + t); };
    const auto run = simulate(sys, nullptr, 0.0, 2.0, 1e-3);
    InvariantConstraint c{"product", [](const SampleView& s) { return s.u[0] * s.u0[0]; }, 0, 1e-6};
    const auto drift = check_indeterminate_invariants(run, {c});
    CHECK(drift[0].max_drift > 0.1);
    CHECK(drift[0].violated);
  }
  SUBCASE("rotation system conserves the radius") {
    // phi' = u (-phi2, phi1) with any scalar u conserves phi1^2 + phi2^2.
    InteractiveSystem s;
    s.state_dim = 2;
    s.initial_state = Vector(2);
    s.initial_state << 1.0, 0.5;
    s.dynamics = [](const DynamicsArgs& a) {
      Vector d(2);
      d << -a.u[0] * a.phi[1], a.u[0] * a.phi[0];
      return d;
    };
    s.players.push_back(testing_support::linear_player([](double t) { return 1.0 + 0.5 * std::sin(t); },
                                                       [](double, double phi) { return 0.2 * std::cos(phi); }));
    const auto run = simulate(s, nullptr, 0.0, 10.0, 1e-3);
    InvariantConstraint c{"radius", [](const SampleView& v) { return v.phi.squaredNorm(); }, 0, 1e-6};
    const auto drift = check_indeterminate_invariants(run, {c});
    CHECK(drift[0].max_drift < 1e-6);
    CHECK_FALSE(drift[0].violated);
  }
  SUBCASE("expression invariants and unrecorded derivatives") {
    const auto run = simulate(testing_support::linear_decay(), nullptr, 0.0, 1.0, 1e-2);
    Dims dims;
    const auto c = make_invariant("F", "u[0] - u0[0] - eps[0]*phi[0]", dims, 1e-10);
    CHECK(check_indeterminate_invariants(run, {c})[0].max_drift <= 1e-10);
    const auto d = make_invariant("G", "dphi[0] - u[0]", dims, 1e-10);
    CHECK(d.derivative_order == 1);
    CHECK(check_indeterminate_invariants(run, {d})[0].max_drift == 0.0);
    InvariantConstraint second{"second", [](const SampleView&) { return 0.0; }, 2};
    CHECK_THROWS_AS(check_indeterminate_invariants(run, {second}), ConfigError);
    auto bare = run;
    bare.has_controls = false;
    CHECK_THROWS_AS(check_indeterminate_invariants(bare, {c}), DataError);
  }
}

namespace {

InteractiveSystem three_players() {
  InteractiveSystem s;
  s.state_dim = 1;
  s.initial_state = scalar(0.5);
  for (int i = 0; i < 3; ++i) {
    const double w = 1.0 + i;
    s.players.push_back(testing_support::linear_player([w](double t) { return std::sin(w * t); },
                                                       [](double, double) { return -0.1; }));
  }
  return s;
}

Coalition sum_coalition(std::vector<int> members, double eps) {
  Coalition c;
  c.members = std::move(members);
  c.coupling.known_form = [](const CouplingArgs& a, const Vector& e) { return scalar(a.u0.sum() + e[0] * a.phi[0]); };
  c.epsilon.form = [eps](const CouplingArgs&) { return scalar(eps); };
  return c;
}

}  // namespace

TEST_CASE("coalition simulation") {
  SUBCASE("singleton coalitions equal the per-player run exactly") {
    auto s = three_players();
    s.players.pop_back();
    s.dynamics = [](const DynamicsArgs& a) { return scalar(a.u[0] - 0.5 * a.u[1] * a.phi[0]); };
    for (int i = 0; i < 2; ++i) {
      const auto& p = s.players[static_cast<std::size_t>(i)];
      s.coalitions.push_back({{i + 1}, p.coupling, p.epsilon, 1});
    }
    const auto a = simulate(s, nullptr, 0.0, 3.0, 1e-3);
    const auto b = coalition_simulate(s, 0.0, 3.0, 1e-3);
    CHECK(max_state_deviation(a, b) == 0.0);
  }
  SUBCASE("grand coalition with summed signal equals a single-player run") {
    auto s = three_players();
    s.players.pop_back();
    s.dynamics = [](const DynamicsArgs& a) { return scalar(a.u[0] - a.phi[0]); };
    s.coalitions.push_back(sum_coalition({1, 2}, -0.1));
    const auto grand = coalition_simulate(s, 0.0, 3.0, 1e-3);

    InteractiveSystem single;
    single.state_dim = 1;
    single.initial_state = s.initial_state;
    single.dynamics = s.dynamics;
    single.players.push_back(testing_support::linear_player(
        [](double t) { return std::sin(t) + std::sin(2 * t); }, [](double, double) { return -0.1; }));
    const auto solo = simulate(single, nullptr, 0.0, 3.0, 1e-3);
    CHECK(max_state_deviation(grand, solo) < 1e-13);
  }
  SUBCASE("overlapping coalitions match a hand-assembled right-hand side") {
    auto s = three_players();
    s.dynamics = [](const DynamicsArgs& a) { return scalar(a.u[0] - a.u[1] * a.phi[0]); };
    s.coalitions.push_back(sum_coalition({1, 2}, -0.1));
    s.coalitions.push_back(sum_coalition({2, 3}, 0.2));
    const auto run = coalition_simulate(s, 0.0, 2.0, 1e-3);
    const auto oracle = testing_support::rk4(
        [](double t, const Vector& y) {
          const double v1 = std::sin(t) + std::sin(2 * t) - 0.1 * y[0];
          const double v2 = std::sin(2 * t) + std::sin(3 * t) + 0.2 * y[0];
          return scalar(v1 - v2 * y[0]);
        },
        s.initial_state, 0.0, 1e-3, 2000);
    double err = 0.0;
    for (std::size_t k = 0; k < run.size(); ++k) err = std::max(err, std::abs(run.phi[k][0] - oracle[k][0]));
    CHECK(err < 1e-12);
  }
  SUBCASE("member index outside the player range") {
    auto s = three_players();
    s.dynamics = [](const DynamicsArgs& a) { return scalar(a.u[0]); };
    s.coalitions.push_back(sum_coalition({1, 4}, 0.0));
    CHECK_THROWS_AS(coalition_simulate(s, 0.0, 1.0, 0.1), ConfigError);
  }
}

TEST_CASE("expression-built system runs the linear decay scenario") {
  InteractiveSystem s;
  s.state_dim = 1;
  s.initial_state = scalar(1.0);
  Dims dims;
  s.dynamics = make_dynamics({"u[0]"}, dims);
  Player p;
  p.policy.signal = make_signal({"0"});
  p.coupling.known_form = make_coupling({"u0[0] + eps[0]*phi[0]"}, dims);
  p.epsilon.form = make_epsilon({"-1"}, dims);
  s.players.push_back(p);
  const auto traj = simulate(s, nullptr, 0.0, 1.0, 1e-3);
  CHECK(std::abs(traj.phi.back()[0] - std::exp(-1.0)) < 1e-8);
  CHECK_THROWS_AS(make_coupling({"u0[1]"}, dims), ParseError);
  CHECK_THROWS_AS(make_dynamics({"eps[0]"}, dims), ParseError);
}
