#include "tactica/prediction.hpp"

#include "tactica/errors.hpp"
#include "tactica/expression.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <numbers>

namespace tactica::predict {
namespace {

// FFTW's planner is not reentrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

std::size_t whole_steps(double span, double dt, const char* what) {
  const double n = span / dt;
  const double r = std::round(n);
  if (std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
    throw ConfigError(std::string(what) + " must be a whole number of time steps");
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

Prediction predict(const game::InteractiveSystem& model, const Vector& state, double t0, double horizon, double dt) {
  if (!(horizon > 0.0)) throw ConfigError("prediction horizon must be positive");
  const auto traj = game::simulate(model, nullptr, t0, t0 + horizon, dt, state);
  Prediction p;
  p.t0 = t0;
  p.horizon = horizon;
  p.t = traj.t;
  p.controls = traj.u;
  p.phi = traj.phi;
  return p;
}

game::InteractiveSystem with_policies(game::InteractiveSystem system, const std::vector<game::SignalFn>& signals) {
  if (signals.size() != system.players.size()) {
    throw ConfigError("expected " + std::to_string(system.players.size()) + " assumed policies, got " +
                      std::to_string(signals.size()));
  }
  for (std::size_t i = 0; i < signals.size(); ++i) system.players[i].policy.signal = signals[i];
  return system;
}

std::vector<Prediction> rolling_predictions(const game::InteractiveSystem& model, const game::StateTrajectory& run,
                                            double horizon, std::size_t stride) {
  if (!(horizon > 0.0)) throw ConfigError("prediction horizon must be positive");
  if (stride == 0) throw ConfigError("prediction stride must be positive");
  if (run.size() < 2) throw DataError("run has fewer than two samples");
  const std::size_t m = whole_steps(horizon, run.dt, "prediction horizon");
  std::vector<Prediction> out;
  for (std::size_t k = 0; k + m < run.size(); k += stride) {
    out.push_back(predict(model, run.phi[k], run.t[k], horizon, run.dt));
  }
  return out;
}

std::vector<FeedbackRecord> interactivize_by_prediction(const game::StateTrajectory& run,
                                                        const std::vector<Prediction>& predictions, double horizon) {
  if (!(horizon > 0.0)) throw ConfigError("prediction horizon must be positive");
  if (!run.has_controls) throw DataError("run carries no control traces");
  std::vector<const Prediction*> sorted;
  for (const auto& p : predictions) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](const Prediction* a, const Prediction* b) { return a->t0 < b->t0; });

  std::vector<FeedbackRecord> out;
  const double start = run.t.empty() ? 0.0 : run.t.front();
  for (std::size_t k = 0; k < run.size(); ++k) {
    const double t = run.t[k];
    const double base = t - horizon;
    if (base < start && !close(base, start)) continue;
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), base - 1e-9 * std::max(1.0, std::abs(base)),
                                     [](const Prediction* p, double x) { return p->t0 < x; });
    if (it == sorted.end() || !close((*it)->t0, base)) {
      throw DataError("no prediction with base time " + std::to_string(base) + " (needed at t=" + std::to_string(t) +
                      ")");
    }
    const Prediction& p = **it;
    const auto j = std::lower_bound(p.t.begin(), p.t.end(), t - 1e-9 * std::max(1.0, std::abs(t)));
    if (j == p.t.end() || !close(*j, t)) {
      throw DataError("prediction from base " + std::to_string(base) + " has no sample at t=" + std::to_string(t));
    }
    const auto idx = static_cast<std::size_t>(j - p.t.begin());
    out.push_back({t, run.u[k], p.controls[idx], run.phi[k], p.phi[idx], run.dphi[k]});
  }
  return out;
}

FeedbackEstimate fit_feedback(const std::vector<FeedbackRecord>& records, const FeedbackFamily& family) {
  if (records.empty()) throw DataError("no records to fit");
  if (family.residual.empty()) throw ConfigError("feedback family has no residual expression");
  if (family.coefficients == 0) throw ConfigError("feedback family has no coefficients");

  expr::SymbolTable s;
  const auto t_slot = s.add_scalar("t");
  const auto u_slot = s.add_vector("u", static_cast<std::size_t>(records[0].u.size()));
  const auto u0_slot = s.add_vector("u0", static_cast<std::size_t>(records[0].u0.size()));
  const auto phi_slot = s.add_vector("phi", static_cast<std::size_t>(records[0].phi.size()));
  const auto phi0_slot = s.add_vector("phi0", static_cast<std::size_t>(records[0].phi0.size()));
  const auto dphi_slot = s.add_vector("dphi", static_cast<std::size_t>(records[0].dphi.size()));
  const auto c_slot = s.add_vector("c", family.coefficients);
  const auto residual = expr::VectorExpression::compile(family.residual, s);

  const auto rows = static_cast<Eigen::Index>(records.size() * residual.size());
  auto evaluate = [&](const Vector& c) {
    Vector r(rows);
    Eigen::Index at = 0;
    for (const auto& rec : records) {
      expr::Env env(s.size());
      env.bind(t_slot, std::span<const double>(&rec.t, 1));
      env.bind(u_slot, rec.u).bind(u0_slot, rec.u0).bind(phi_slot, rec.phi).bind(phi0_slot, rec.phi0);
      env.bind(dphi_slot, rec.dphi).bind(c_slot, c);
      const Vector part = residual.eval(env);
      r.segment(at, part.size()) = part;
      at += part.size();
    }
    return r;
  };

  FeedbackEstimate est;
  est.family = family.residual;
  Vector c = family.initial.size() == 0 ? Vector::Zero(static_cast<Eigen::Index>(family.coefficients))
                                        : family.initial;
  if (static_cast<std::size_t>(c.size()) != family.coefficients) {
    throw ConfigError("initial coefficient guess has the wrong length");
  }
  Vector r = evaluate(c);
  Eigen::MatrixXd jac(rows, c.size());
  for (int it = 1; it <= 100; ++it) {
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(c[k]));
      Vector cp = c;
      Vector cm = c;
      cp[k] += h;
      cm[k] -= h;
      jac.col(k) = (evaluate(cp) - evaluate(cm)) / (2 * h);
    }
    const Vector step = jac.completeOrthogonalDecomposition().solve(-r);
    c += step;
    r = evaluate(c);
    est.iterations = it;
    if (!r.allFinite()) throw DataError("feedback fit produced non-finite residuals");
    if (step.norm() <= 1e-12 * (1.0 + c.norm())) break;
  }
  est.coefficients = c;
  est.residual_norm = r.norm();
  return est;
}

std::vector<double> filter_trace(const std::vector<double>& values, double dt, const FilterSpec& spec) {
  if (values.size() < 2) throw DataError("trace needs at least two samples");
  if (!(dt > 0.0)) throw ConfigError("sample spacing must be positive");
  const double nyquist = std::numbers::pi / dt;
  if (spec.kind == FilterSpec::Kind::LowPass) {
    if (!(spec.cutoff > 0.0)) throw ConfigError("low-pass cutoff must be positive");
    if (spec.cutoff > nyquist) {
      throw ConfigError("cutoff " + std::to_string(spec.cutoff) + " exceeds the Nyquist frequency " +
                        std::to_string(nyquist));
    }
  } else {
    if (spec.frequencies.empty()) throw ConfigError("band selection needs at least one frequency");
    for (double f : spec.frequencies) {
      if (f < 0.0 || f > nyquist) {
        throw ConfigError("band frequency " + std::to_string(f) + " is outside [0, Nyquist]");
      }
    }
  }

  const std::size_t n = values.size();
  const std::size_t len = 2 * n;
  const std::size_t bins = len / 2 + 1;
  std::vector<double> buffer(len);
  for (std::size_t i = 0; i < n; ++i) {
    buffer[i] = values[i];
    buffer[len - 1 - i] = values[i];
  }
  std::vector<std::complex<double>> spectrum(bins);
  auto* freq = reinterpret_cast<fftw_complex*>(spectrum.data());
  fftw_plan forward;
  fftw_plan backward;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    forward = fftw_plan_dft_r2c_1d(static_cast<int>(len), buffer.data(), freq, FFTW_ESTIMATE);
    backward = fftw_plan_dft_c2r_1d(static_cast<int>(len), freq, buffer.data(), FFTW_ESTIMATE);
  }
  fftw_execute(forward);

  const double bin_width = 2 * std::numbers::pi / (static_cast<double>(len) * dt);
  std::vector<bool> keep(bins, false);
  if (spec.kind == FilterSpec::Kind::LowPass) {
    for (std::size_t k = 0; k < bins; ++k) keep[k] = static_cast<double>(k) * bin_width <= spec.cutoff * (1 + 1e-12);
  } else {
    for (double f : spec.frequencies) {
      const auto k = static_cast<std::size_t>(std::llround(f / bin_width));
      keep[std::min(k, bins - 1)] = true;
    }
  }
  for (std::size_t k = 0; k < bins; ++k) {
    if (!keep[k]) spectrum[k] = 0.0;
  }
  fftw_execute(backward);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buffer[i] / static_cast<double>(len);
  return out;
}

UnravelResult unravel_by_filtering(const game::StateTrajectory& run, std::size_t component, const FilterSpec& spec,
                                   const FeedbackFamily* family) {
  if (!run.has_controls) throw DataError("run carries no control traces");
  if (run.size() < 2) throw DataError("run has fewer than two samples");
  if (component >= static_cast<std::size_t>(run.u[0].size())) {
    throw ConfigError("control component " + std::to_string(component) + " out of range");
  }
  const double dt = run.t[1] - run.t[0];
  for (std::size_t k = 2; k < run.size(); ++k) {
    if (std::abs((run.t[k] - run.t[k - 1]) - dt) > 1e-9 * dt) throw DataError("control trace is not uniformly sampled");
  }
  std::vector<double> u(run.size());
  for (std::size_t k = 0; k < run.size(); ++k) u[k] = run.u[k][static_cast<Eigen::Index>(component)];

  UnravelResult out;
  out.t = run.t;
  out.u0 = filter_trace(u, dt, spec);
  out.residual.resize(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) out.residual[k] = u[k] - out.u0[k];
  if (family) {
    std::vector<FeedbackRecord> rows;
    rows.reserve(run.size());
    for (std::size_t k = 0; k < run.size(); ++k) {
      rows.push_back({run.t[k], Vector::Constant(1, u[k]), Vector::Constant(1, out.u0[k]), run.phi[k], run.phi[k],
                      run.dphi[k]});
    }
    out.estimate = fit_feedback(rows, *family);
  }
  return out;
}

PrognosisReport strategic_pipeline(const game::InteractiveSystem& system,
                                   const std::vector<game::SignalFn>& assumed_epsilon, double t0, double t1,
                                   double dt, double horizon) {
  if (!system.coalitions.empty()) throw ConfigError("the prognosis pipeline works on player slots only");
  if (assumed_epsilon.size() != system.players.size()) {
    throw ConfigError("expected one assumed epsilon signal per player");
  }
  if (horizon < 0.0) throw ConfigError("short-term horizon must not be negative");

  const auto truth = game::simulate(system, nullptr, t0, t1, dt);
  auto model = game::associated_ordinary_game(system);
  for (std::size_t i = 0; i < assumed_epsilon.size(); ++i) {
    game::bind_epsilon(model, static_cast<int>(i + 1), assumed_epsilon[i]);
  }
  const auto long_term = game::simulate(model, nullptr, t0, t1, dt, system.initial_state);

  PrognosisReport report;
  report.horizon = horizon;
  report.rows.resize(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) {
    auto& row = report.rows[k];
    row.t = truth.t[k];
    row.long_term = long_term.phi[k];
    row.blended = long_term.phi[k];
    row.truth = truth.phi[k];
  }
  if (horizon == 0.0) return report;

  const std::size_t m = whole_steps(horizon, dt, "short-term horizon");
  if (m == 0) throw ConfigError("short-term horizon is shorter than one step");
  double corrected_sq = 0.0;
  double uncorrected_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b + 1 < truth.size(); b += m) {
    const std::size_t span = std::min(m, truth.size() - 1 - b);
    const double h = truth.t[b + span] - truth.t[b];
    const auto plain = predict(model, truth.phi[b], truth.t[b], h, dt);
    const Vector deviation = truth.u[b] - plain.controls.front();

    auto shifted = model;
    Eigen::Index offset = 0;
    for (auto& p : shifted.players) {
      const Vector d = deviation.segment(offset, static_cast<Eigen::Index>(p.control_dim));
      offset += static_cast<Eigen::Index>(p.control_dim);
      p.coupling.known_form = [f = p.coupling.known_form, d](const game::CouplingArgs& a, const Vector& e) -> Vector {
        return f(a, e) + d;
      };
    }
    const auto corrected = predict(shifted, truth.phi[b], truth.t[b], h, dt);
    for (std::size_t j = 1; j <= span && j < corrected.phi.size(); ++j) {
      report.rows[b + j].short_term = corrected.phi[j];
      report.rows[b + j].blended = corrected.phi[j];
    }
    corrected_sq += (corrected.phi.back() - truth.phi[b + span]).squaredNorm();
    uncorrected_sq += (plain.phi.back() - truth.phi[b + span]).squaredNorm();
    ++count;
  }
  report.corrected_error = std::sqrt(corrected_sq / static_cast<double>(count));
  report.uncorrected_error = std::sqrt(uncorrected_sq / static_cast<double>(count));
  report.improvement = report.corrected_error > 0.0 ? report.uncorrected_error / report.corrected_error
                                                    : (report.uncorrected_error > 0.0
                                                           ? std::numeric_limits<double>::infinity()
                                                           : 1.0);
  return report;
}

}  // namespace tactica::predict
