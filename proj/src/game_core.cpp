#include "tactica/game_core.hpp"

#include "tactica/errors.hpp"

#include <cmath>
#include <memory>

namespace tactica::game {
namespace {

// Fixed-point settling of the derivative substitution for order-1 couplings.
constexpr int kSubstitutionIterations = 100;
constexpr double kSubstitutionTolerance = 1e-14;

struct Slot {
  std::vector<int> members;  // 1-based player indices
  const FeedbackCoupling* coupling;
  const EpsilonProcess* epsilon;
  std::size_t control_dim;
};

struct Evaluation {
  Vector u0;  // all players, concatenated
  Vector eps;
  Vector u;
  Vector dphi;
};

class Chain {
 public:
  Chain(const InteractiveSystem& system, std::vector<Slot> slots) : sys_(system), slots_(std::move(slots)) {
    std::size_t off = 0;
    for (const auto& p : sys_.players) {
      player_offset_.push_back(off);
      off += p.control_dim;
    }
    u0_dim_ = off;
    for (const auto& s : slots_) {
      if (s.coupling->derivative_order > 1) {
        throw ConfigError("feedback couplings of derivative order " + std::to_string(s.coupling->derivative_order) +
                          " are not supported (at most first derivatives are substituted)");
      }
      if (s.coupling->derivative_order < 0) throw ConfigError("negative derivative order");
      if (!s.coupling->known_form) throw ConfigError("feedback coupling without a known form");
      if (s.coupling->direction == Direction::Inverse && !s.coupling->solved_form) {
        throw ConfigError("inverse-direction coupling requires a closed-form solution for the interactive control");
      }
      if (!s.epsilon->is_free() && !s.epsilon->ground_truth) {
        throw ConfigError("simulation requires ground-truth epsilon processes");
      }
      if (!s.epsilon->is_free() && !s.epsilon->form) throw ConfigError("epsilon process without a form");
      for (int m : s.members) {
        if (m < 1 || m > static_cast<int>(sys_.players.size())) {
          throw ConfigError("coalition member " + std::to_string(m) + " outside [1.." +
                            std::to_string(sys_.players.size()) + "]");
        }
      }
      if (s.coupling->derivative_order == 1) needs_dphi_ = true;
      eps_offset_.push_back(eps_dim_);
      eps_dim_ += s.epsilon->dim;
      u_offset_.push_back(u_dim_);
      u_dim_ += s.control_dim;
    }
    if (!sys_.dynamics) throw ConfigError("system has no dynamics");
  }

  std::size_t eps_dim() const { return eps_dim_; }

  Evaluation evaluate(const StageTag& tag, const Vector& phi, const Vector& lambda) const {
    Evaluation e;
    e.u0.resize(static_cast<Eigen::Index>(u0_dim_));
    for (std::size_t i = 0; i < sys_.players.size(); ++i) {
      const auto& p = sys_.players[i];
      const Vector v = p.policy.signal ? p.policy.signal(tag.t) : Vector::Zero(static_cast<Eigen::Index>(p.control_dim));
      if (static_cast<std::size_t>(v.size()) != p.control_dim) {
        throw ConfigError("pure control of player " + std::to_string(i + 1) + " has dimension " +
                          std::to_string(v.size()) + ", expected " + std::to_string(p.control_dim));
      }
      e.u0.segment(static_cast<Eigen::Index>(player_offset_[i]), v.size()) = v;
    }
    e.eps.resize(static_cast<Eigen::Index>(eps_dim_));
    e.u.resize(static_cast<Eigen::Index>(u_dim_));

    if (!needs_dphi_) {
      fill_controls(tag, phi, nullptr, lambda, e);
      e.dphi = dynamics(tag.t, phi, e.u, lambda);
      return e;
    }
    Vector guess = Vector::Zero(phi.size());
    for (int it = 0; it < kSubstitutionIterations; ++it) {
      fill_controls(tag, phi, &guess, lambda, e);
      Vector next = dynamics(tag.t, phi, e.u, lambda);
      const double change = (next - guess).lpNorm<Eigen::Infinity>();
      guess = std::move(next);
      if (!std::isfinite(change)) break;
      if (change <= kSubstitutionTolerance * (1.0 + guess.lpNorm<Eigen::Infinity>())) {
        e.dphi = guess;
        return e;
      }
    }
    throw ConfigError("derivative substitution did not settle at t=" + std::to_string(tag.t) +
                      "; the coupling is not contractive in the state derivative");
  }

 private:
  void fill_controls(const StageTag& tag, const Vector& phi, const Vector* dphi, const Vector& lambda,
                     Evaluation& e) const {
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const Slot& slot = slots_[s];
      Vector slot_u0;
      if (slot.members.size() == 1) {
        const auto m = static_cast<std::size_t>(slot.members[0] - 1);
        slot_u0 = e.u0.segment(static_cast<Eigen::Index>(player_offset_[m]),
                               static_cast<Eigen::Index>(sys_.players[m].control_dim));
      } else {
        std::size_t total = 0;
        for (int m : slot.members) total += sys_.players[static_cast<std::size_t>(m - 1)].control_dim;
        slot_u0.resize(static_cast<Eigen::Index>(total));
        Eigen::Index at = 0;
        for (int m : slot.members) {
          const auto idx = static_cast<std::size_t>(m - 1);
          const auto len = static_cast<Eigen::Index>(sys_.players[idx].control_dim);
          slot_u0.segment(at, len) = e.u0.segment(static_cast<Eigen::Index>(player_offset_[idx]), len);
          at += len;
        }
      }
      const Vector* d = slot.coupling->derivative_order == 1 ? dphi : nullptr;
      const CouplingArgs args{tag.t, slot_u0, phi, d, lambda};
      const Vector eps = slot.epsilon->is_free() ? slot.epsilon->free_policy(tag) : slot.epsilon->form(args);
      if (static_cast<std::size_t>(eps.size()) != slot.epsilon->dim) {
        throw ConfigError("epsilon of slot " + std::to_string(s + 1) + " has dimension " + std::to_string(eps.size()) +
                          ", expected " + std::to_string(slot.epsilon->dim));
      }
      const Vector u = slot.coupling->direction == Direction::Forward ? slot.coupling->known_form(args, eps)
                                                                     : slot.coupling->solved_form(args, eps);
      if (static_cast<std::size_t>(u.size()) != slot.control_dim) {
        throw ConfigError("interactive control of slot " + std::to_string(s + 1) + " has dimension " +
                          std::to_string(u.size()) + ", expected " + std::to_string(slot.control_dim));
      }
      e.eps.segment(static_cast<Eigen::Index>(eps_offset_[s]), eps.size()) = eps;
      e.u.segment(static_cast<Eigen::Index>(u_offset_[s]), u.size()) = u;
    }
  }

  Vector dynamics(double t, const Vector& phi, const Vector& u, const Vector& lambda) const {
    const DynamicsArgs args{t, phi, u, lambda, sys_.omega};
    Vector out = sys_.dynamics(args);
    if (out.size() != phi.size()) {
      throw ConfigError("dynamics returned dimension " + std::to_string(out.size()) + ", state has " +
                        std::to_string(phi.size()));
    }
    return out;
  }

  const InteractiveSystem& sys_;
  std::vector<Slot> slots_;
  std::vector<std::size_t> player_offset_;
  std::vector<std::size_t> eps_offset_;
  std::vector<std::size_t> u_offset_;
  std::size_t u0_dim_ = 0;
  std::size_t eps_dim_ = 0;
  std::size_t u_dim_ = 0;
  bool needs_dphi_ = false;
};

std::vector<Slot> player_slots(const InteractiveSystem& system) {
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < system.players.size(); ++i) {
    const auto& p = system.players[i];
    slots.push_back({{static_cast<int>(i + 1)}, &p.coupling, &p.epsilon, p.control_dim});
  }
  return slots;
}

std::vector<Slot> coalition_slots(const InteractiveSystem& system) {
  if (system.coalitions.empty()) throw ConfigError("system declares no coalitions");
  std::vector<Slot> slots;
  for (const auto& c : system.coalitions) {
    if (c.members.empty()) throw ConfigError("empty coalition");
    slots.push_back({c.members, &c.coupling, &c.epsilon, c.control_dim});
  }
  return slots;
}

std::size_t step_count(double t0, double t1, double dt) {
  const double n = (t1 - t0) / dt;
  const double r = std::round(n);
  if (std::abs(n - r) <= 1e-9 * std::max(1.0, n)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(n));
}

void check_slow(const SlowControl* slow) {
  if (!slow) return;
  if (const auto* d = std::get_if<SlowControl::Discrete>(&slow->schedule)) {
    if (d->empty() || d->front().first != 0) {
      throw ConfigError("discrete slow-control schedule must start at step 0");
    }
    for (std::size_t i = 1; i < d->size(); ++i) {
      if ((*d)[i].first <= (*d)[i - 1].first) {
        throw ConfigError("discrete slow-control step indices must be strictly increasing");
      }
    }
  } else if (!std::get<SlowControl::Continuous>(slow->schedule)) {
    throw ConfigError("continuous slow-control schedule is empty");
  }
}

void record(StateTrajectory& traj, double t, const Vector& phi, const Evaluation& e, const Vector& lambda) {
  traj.t.push_back(t);
  traj.phi.push_back(phi);
  traj.dphi.push_back(e.dphi);
  traj.u0.push_back(e.u0);
  traj.eps.push_back(e.eps);
  traj.u.push_back(e.u);
  traj.lambda.push_back(lambda);
}

StateTrajectory integrate(const InteractiveSystem& system, std::vector<Slot> slots, const SlowControl* slow,
                          double t0, double t1, double dt, const Vector& initial) {
  if (!(t0 < t1)) throw ConfigError("simulation interval requires t0 < t1");
  if (!(dt > 0.0)) throw ConfigError("time step must be positive");
  if (static_cast<std::size_t>(initial.size()) != system.state_dim) {
    throw ConfigError("initial state has dimension " + std::to_string(initial.size()) + ", system declares " +
                      std::to_string(system.state_dim));
  }
  if (!initial.allFinite()) throw DivergenceError("initial state is not finite", t0);
  check_slow(slow);

  const Chain chain(system, std::move(slots));
  const std::size_t n = step_count(t0, t1, dt);

  StateTrajectory traj;
  traj.t0 = t0;
  traj.dt = dt;
  traj.t.reserve(n + 1);
  traj.stage_eps.reserve(4 * n + 1);

  auto lambda_at = [&](double t, std::size_t step) -> Vector { return slow ? slow->at(t, step) : system.lambda; };

  Vector phi = initial;
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = t0 + static_cast<double>(k) * dt;
    const double tk1 = (k + 1 == n) ? t1 : t0 + static_cast<double>(k + 1) * dt;
    const double h = tk1 - tk;
    const double tm = tk + 0.5 * h;

    const Vector l1 = lambda_at(tk, k);
    const Evaluation e1 = chain.evaluate({tk, k, 0}, phi, l1);
    record(traj, tk, phi, e1, l1);
    const Vector lm = lambda_at(tm, k);
    const Evaluation e2 = chain.evaluate({tm, k, 1}, phi + (0.5 * h) * e1.dphi, lm);
    const Evaluation e3 = chain.evaluate({tm, k, 2}, phi + (0.5 * h) * e2.dphi, lm);
    const Evaluation e4 = chain.evaluate({tk1, k, 3}, phi + h * e3.dphi, lambda_at(tk1, k));
    traj.stage_eps.push_back(e1.eps);
    traj.stage_eps.push_back(e2.eps);
    traj.stage_eps.push_back(e3.eps);
    traj.stage_eps.push_back(e4.eps);

    Vector next = phi + (h / 6.0) * (e1.dphi + 2.0 * e2.dphi + 2.0 * e3.dphi + e4.dphi);
    if (!next.allFinite()) {
      throw DivergenceError("state diverged after t=" + std::to_string(tk), tk);
    }
    phi = std::move(next);
  }
  const Vector lf = lambda_at(t1, n);
  const Evaluation ef = chain.evaluate({t1, n, 0}, phi, lf);
  record(traj, t1, phi, ef, lf);
  traj.stage_eps.push_back(ef.eps);
  return traj;
}

}  // namespace

Vector SlowControl::at(double t, std::size_t step) const {
  if (const auto* c = std::get_if<Continuous>(&schedule)) return (*c)(t);
  const auto& d = std::get<Discrete>(schedule);
  const Vector* value = &d.front().second;
  for (const auto& [index, v] : d) {
    if (index > step) break;
    value = &v;
  }
  return *value;
}

StateTrajectory simulate(const InteractiveSystem& system, const SlowControl* slow, double t0, double t1, double dt) {
  return simulate(system, slow, t0, t1, dt, system.initial_state);
}

StateTrajectory simulate(const InteractiveSystem& system, const SlowControl* slow, double t0, double t1, double dt,
                         const Vector& initial_state) {
  return integrate(system, player_slots(system), slow, t0, t1, dt, initial_state);
}

StateTrajectory coalition_simulate(const InteractiveSystem& system, double t0, double t1, double dt) {
  return coalition_simulate(system, nullptr, t0, t1, dt, system.initial_state);
}

StateTrajectory coalition_simulate(const InteractiveSystem& system, const SlowControl* slow, double t0, double t1,
                                   double dt, const Vector& initial_state) {
  return integrate(system, coalition_slots(system), slow, t0, t1, dt, initial_state);
}

InteractiveSystem associated_ordinary_game(const InteractiveSystem& system) {
  InteractiveSystem game = system;
  auto promote = [](EpsilonProcess& eps, FeedbackCoupling& coupling, const std::string& who) {
    if (coupling.derivative_order != 0) {
      throw ConfigError("associated ordinary game needs derivative-free couplings; " + who + " has order " +
                        std::to_string(coupling.derivative_order));
    }
    eps.free_policy = [who](const StageTag&) -> Vector {
      throw ConfigError("promoted epsilon control of " + who + " is unbound");
    };
  };
  for (std::size_t i = 0; i < game.players.size(); ++i) {
    promote(game.players[i].epsilon, game.players[i].coupling, "player " + std::to_string(i + 1));
  }
  for (std::size_t i = 0; i < game.coalitions.size(); ++i) {
    promote(game.coalitions[i].epsilon, game.coalitions[i].coupling, "coalition " + std::to_string(i + 1));
  }
  return game;
}

std::size_t control_slot_count(const InteractiveSystem& system) {
  std::size_t count = system.players.size();
  for (const auto& p : system.players) {
    if (p.epsilon.is_free()) ++count;
  }
  return count;
}

void bind_epsilon(InteractiveSystem& game, int player, SignalFn signal) {
  if (player < 1 || player > static_cast<int>(game.players.size())) {
    throw ConfigError("player index " + std::to_string(player) + " out of range");
  }
  auto& eps = game.players[static_cast<std::size_t>(player - 1)].epsilon;
  eps.free_policy = [signal = std::move(signal)](const StageTag& tag) { return signal(tag.t); };
}

void replay_epsilon(InteractiveSystem& game, const StateTrajectory& run) {
  auto record = std::make_shared<const std::vector<Vector>>(run.stage_eps);
  std::size_t offset = 0;
  for (auto& p : game.players) {
    const auto off = static_cast<Eigen::Index>(offset);
    const auto len = static_cast<Eigen::Index>(p.epsilon.dim);
    p.epsilon.free_policy = [record, off, len](const StageTag& tag) -> Vector {
      const std::size_t idx = tag.step * 4 + static_cast<std::size_t>(tag.stage);
      if (idx >= record->size()) throw DataError("epsilon replay record exhausted at t=" + std::to_string(tag.t));
      return (*record)[idx].segment(off, len);
    };
    offset += p.epsilon.dim;
  }
}

std::vector<InvariantDrift> check_indeterminate_invariants(const StateTrajectory& trajectory,
                                                           const std::vector<InvariantConstraint>& constraints) {
  if (!trajectory.has_controls) throw DataError("trajectory carries no control traces");
  if (trajectory.size() == 0) throw DataError("empty trajectory");
  std::vector<InvariantDrift> out;
  for (const auto& c : constraints) {
    if (c.derivative_order > 1) {
      throw ConfigError("invariant '" + c.name + "' references derivatives of order " +
                        std::to_string(c.derivative_order) + "; only first derivatives are recorded");
    }
    auto value_at = [&](std::size_t k) {
      const SampleView view{trajectory.t[k], trajectory.phi[k], trajectory.dphi[k],
                            trajectory.u0[k], trajectory.u[k],   trajectory.eps[k]};
      return c.value(view);
    };
    const double ref = value_at(0);
    double drift = 0.0;
    for (std::size_t k = 1; k < trajectory.size(); ++k) drift = std::max(drift, std::abs(value_at(k) - ref));
    out.push_back({c.name, drift, !(drift <= c.tolerance)});
  }
  return out;
}

void append_samples(StateTrajectory& into, const StateTrajectory& part, bool skip_first) {
  if (into.t.empty()) {
    into.t0 = part.t0;
    into.dt = part.dt;
    into.has_controls = part.has_controls;
  }
  for (std::size_t k = skip_first ? 1 : 0; k < part.size(); ++k) {
    into.t.push_back(part.t[k]);
    into.phi.push_back(part.phi[k]);
    into.dphi.push_back(part.dphi[k]);
    into.u0.push_back(part.u0[k]);
    into.eps.push_back(part.eps[k]);
    into.u.push_back(part.u[k]);
    into.lambda.push_back(part.lambda[k]);
  }
}

double max_state_deviation(const StateTrajectory& a, const StateTrajectory& b) {
  if (a.size() != b.size()) throw DataError("trajectories have different sample counts");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, (a.phi[k] - b.phi[k]).lpNorm<Eigen::Infinity>());
  return m;
}

}  // namespace tactica::game
