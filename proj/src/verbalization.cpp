#include "tactica/verbalization.hpp"

#include "tactica/errors.hpp"

#include <algorithm>
#include <cmath>

namespace tactica::verbal {
namespace {

constexpr int kBisectionSteps = 80;

bool uniform(const std::vector<double>& times) {
  const double h = times[1] - times[0];
  for (std::size_t i = 2; i < times.size(); ++i) {
    if (std::abs((times[i] - times[i - 1]) - h) > 1e-9 * std::abs(h)) return false;
  }
  return true;
}

}  // namespace

std::vector<double> window_weights(const std::vector<double>& times) {
  const std::size_t n = times.size();
  std::vector<double> w(n, 0.0);
  if (n < 2) return w;
  const std::size_t intervals = n - 1;
  if (intervals == 1 || !uniform(times)) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double h = times[i + 1] - times[i];
      w[i] += h / 2;
      w[i + 1] += h / 2;
    }
    return w;
  }
  const double h = (times.back() - times.front()) / static_cast<double>(intervals);
  std::size_t simpson_end = intervals;  // last sample index covered by Simpson
  if (intervals % 2 == 1) simpson_end = intervals - 3;
  for (std::size_t i = 0; i + 2 <= simpson_end; i += 2) {
    w[i] += h / 3;
    w[i + 1] += 4 * h / 3;
    w[i + 2] += h / 3;
  }
  if (intervals % 2 == 1) {
    const std::size_t s = simpson_end;
    w[s] += 3 * h / 8;
    w[s + 1] += 9 * h / 8;
    w[s + 2] += 9 * h / 8;
    w[s + 3] += 3 * h / 8;
  }
  return w;
}

Vector reduce(FunctionalKind kind, const std::vector<double>& times, const std::vector<Vector>& values) {
  if (values.empty()) throw DataError("window has no samples");
  if (kind == FunctionalKind::Endpoint) return values.back();
  if (values.size() < 2) throw DataError("window needs at least two samples");
  const auto w = window_weights(times);
  const double length = times.back() - times.front();
  if (kind == FunctionalKind::Integral) {
    Vector acc = Vector::Zero(values[0].size());
    for (std::size_t i = 0; i < values.size(); ++i) acc += w[i] * values[i];
    return acc;
  }
  if (kind == FunctionalKind::QuadraticMoment) {
    Vector acc = Vector::Zero(values[0].size());
    for (std::size_t i = 0; i < values.size(); ++i) acc += w[i] * values[i].cwiseProduct(values[i]);
    return acc / length;
  }
  // Mean as first value plus the mean deviation: exact for constant integrands.
  const Vector& base = values.front();
  Vector dev = Vector::Zero(base.size());
  for (std::size_t i = 1; i < values.size(); ++i) dev += w[i] * (values[i] - base);
  return base + dev / length;
}

std::pair<std::size_t, std::size_t> window_span(const game::StateTrajectory& traj, double a, double b) {
  auto locate = [&](double x) {
    const auto it = std::lower_bound(traj.t.begin(), traj.t.end(), x);
    const double tol = 1e-9 * std::max(1.0, std::abs(x));
    std::size_t best = traj.t.size();
    if (it != traj.t.end() && std::abs(*it - x) <= tol) best = static_cast<std::size_t>(it - traj.t.begin());
    if (it != traj.t.begin() && std::abs(*(it - 1) - x) <= tol) best = static_cast<std::size_t>(it - traj.t.begin() - 1);
    if (best == traj.t.size()) {
      throw ConfigError("window boundary " + std::to_string(x) + " does not coincide with a sample time");
    }
    return best;
  };
  const auto first = locate(a);
  const auto last = locate(b);
  if (last <= first) throw ConfigError("window [" + std::to_string(a) + ", " + std::to_string(b) + "] is empty");
  return {first, last};
}

Vector evaluate_functional(const WindowFunctional& f, const game::StateTrajectory& traj, std::size_t first,
                           std::size_t last) {
  if (!f.integrand) throw ConfigError("window functional without an integrand");
  std::vector<double> times;
  std::vector<Vector> values;
  times.reserve(last - first + 1);
  values.reserve(last - first + 1);
  for (std::size_t k = first; k <= last; ++k) {
    const WindowPoint p{traj.t[k], traj.phi[k], traj.u0[k], traj.u[k], traj.eps[k]};
    times.push_back(traj.t[k]);
    values.push_back(f.integrand(p));
  }
  return reduce(f.kind, times, values);
}

namespace {

void check_grid(const std::vector<double>& grid) {
  if (grid.size() < 2) throw ConfigError("window grid needs at least two points");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw ConfigError("window grid must be strictly increasing");
  }
}

}  // namespace

DialogueResult simulate_dialogue(const IntentionField& field, const std::vector<game::Player>& players,
                                 const StepMap& step_map, const WindowFunctional& state_functional,
                                 const WindowFunctional& control_functional, const std::vector<double>& t_grid,
                                 const Vector& phi0, double dt, double tolerance) {
  check_grid(t_grid);
  if (!field.dynamics) throw ConfigError("intention field has no dynamics");
  game::InteractiveSystem sys;
  sys.state_dim = field.dim;
  sys.initial_state = field.initial;
  sys.players = players;
  sys.dynamics = [dyn = field.dynamics](const game::DynamicsArgs& a) { return dyn(a.t, a.phi, a.u); };

  DialogueResult out;
  out.phi.push_back(phi0);
  Vector xi = field.initial;
  for (std::size_t n = 1; n < t_grid.size(); ++n) {
    const auto part = game::simulate(sys, nullptr, t_grid[n - 1], t_grid[n], dt, xi);
    const std::size_t first = out.field.size() == 0 ? 0 : out.field.size() - 1;
    game::append_samples(out.field, part, n > 1);
    const std::size_t last = out.field.size() - 1;
    xi = part.phi.back();

    const WindowView view{static_cast<int>(n), t_grid[n - 1], t_grid[n], &out.field, first, last};
    const Vector phi_n = evaluate_functional(state_functional, out.field, first, last);
    const Vector v_n = evaluate_functional(control_functional, out.field, first, last);
    const Vector predicted = step_map(out.phi.back(), v_n, view);
    const double residual = predicted.size() == phi_n.size()
                                ? (predicted - phi_n).lpNorm<Eigen::Infinity>()
                                : std::numeric_limits<double>::infinity();
    out.residuals.push_back(residual);
    if (!(residual <= tolerance) && out.consistent) {
      out.consistent = false;
      out.diagnostic = "not a dialogue under declared maps: window " + std::to_string(n) + " residual " +
                       std::to_string(residual) + " exceeds tolerance " + std::to_string(tolerance);
    }
    out.phi.push_back(phi_n);
    out.v.push_back(v_n);
  }
  return out;
}

CellComplex::CellComplex(std::size_t dim, Vector lower, Vector upper, const std::vector<CellDecl>& cells)
    : dim_(dim), lower_(std::move(lower)), upper_(std::move(upper)) {
  if (static_cast<std::size_t>(lower_.size()) != dim || static_cast<std::size_t>(upper_.size()) != dim) {
    throw ConfigError("admissible box dimension does not match the epsilon space");
  }
  if ((lower_.array() > upper_.array()).any()) throw ConfigError("admissible box has lower > upper");
  if (cells.empty()) throw ConfigError("cell complex has no cells");
  eps_slot_ = symbols_.add_vector("eps", dim);
  for (const auto& c : cells) {
    if (std::find(labels_.begin(), labels_.end(), c.label) != labels_.end()) {
      throw ConfigError("duplicate cell label '" + c.label + "'");
    }
    labels_.push_back(c.label);
    predicates_.push_back(expr::Predicate::compile(c.clauses, symbols_));
  }
}

bool CellComplex::in_box(const Vector& eps) const {
  return static_cast<std::size_t>(eps.size()) == dim_ && (eps.array() >= lower_.array()).all() &&
         (eps.array() <= upper_.array()).all();
}

std::size_t CellComplex::locate(const Vector& eps, double time) const {
  if (!in_box(eps)) {
    throw DomainError("epsilon sample at t=" + std::to_string(time) + " lies outside the admissible box", time);
  }
  expr::Env env(symbols_.size());
  env.bind(eps_slot_, eps);
  std::size_t found = labels_.size();
  for (std::size_t i = 0; i < predicates_.size(); ++i) {
    if (!predicates_[i].holds(env)) continue;
    if (found != labels_.size()) {
      throw DomainError("epsilon sample at t=" + std::to_string(time) + " lies in cells '" + labels_[found] +
                            "' and '" + labels_[i] + "'; cells must be disjoint",
                        time);
    }
    found = i;
  }
  if (found == labels_.size()) {
    throw DomainError("epsilon sample at t=" + std::to_string(time) + " is not covered by any cell", time);
  }
  return found;
}

std::vector<double> detect_partition(const TimeSeries& eps_trace, const CellComplex& complex) {
  if (eps_trace.t.size() != eps_trace.values.size()) throw DataError("epsilon trace times and values differ in length");
  std::vector<std::size_t> labels;
  labels.reserve(eps_trace.t.size());
  for (std::size_t k = 0; k < eps_trace.t.size(); ++k) {
    labels.push_back(complex.locate(eps_trace.values[k], eps_trace.t[k]));
  }
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < labels.size(); ++k) {
    if (labels[k] == labels[k + 1]) continue;
    const double ta = eps_trace.t[k];
    const double tb = eps_trace.t[k + 1];
    const Vector& ea = eps_trace.values[k];
    const Vector& eb = eps_trace.values[k + 1];
    double lo = ta;
    double hi = tb;
    for (int it = 0; it < kBisectionSteps && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      const Vector e = ea + ((mid - ta) / (tb - ta)) * (eb - ea);
      if (complex.locate(e, mid) == labels[k]) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    out.push_back(0.5 * (lo + hi));
  }
  return out;
}

std::vector<double> partition_grid(const std::vector<double>& sample_times, const std::vector<double>& transitions) {
  if (sample_times.size() < 2) throw DataError("need at least two samples to partition");
  std::vector<double> grid{sample_times.front()};
  for (double tau : transitions) {
    const auto it = std::lower_bound(sample_times.begin(), sample_times.end(), tau);
    if (it == sample_times.end()) break;
    if (*it > grid.back() && *it < sample_times.back()) grid.push_back(*it);
  }
  grid.push_back(sample_times.back());
  return grid;
}

std::vector<WindowRecord> build_windows(const game::StateTrajectory& traj, const std::vector<double>& grid,
                                        const WindowFunctional& omega, const WindowFunctional& v,
                                        const CellComplex* complex) {
  check_grid(grid);
  std::vector<WindowRecord> out;
  for (std::size_t n = 1; n < grid.size(); ++n) {
    const auto [first, last] = window_span(traj, grid[n - 1], grid[n]);
    WindowRecord w;
    w.index = static_cast<int>(n);
    w.t_start = grid[n - 1];
    w.t_end = grid[n];
    w.omega = evaluate_functional(omega, traj, first, last);
    w.v = evaluate_functional(v, traj, first, last);
    if (!w.omega.allFinite() || !w.v.allFinite()) {
      throw DataError("window " + std::to_string(n) + " has non-finite functionals");
    }
    if (complex) w.cell_label = complex->label(complex->locate(traj.eps[first], traj.t[first]));
    out.push_back(std::move(w));
  }
  return out;
}

Vector RecurrenceMap::apply(const Vector& omega_prev, const Vector& v, const WindowRecord& window) const {
  if (family == Family::Declared) {
    if (!form) throw ConfigError("declared recurrence without a form");
    return form(omega_prev, v, window);
  }
  Vector z(omega_prev.size() + v.size() + 1);
  z << omega_prev, v, 1.0;
  if (coefficients.cols() != z.size()) throw ConfigError("fitted recurrence does not match window dimensions");
  return coefficients * z;
}

RecurrenceReport verify_recurrence(const std::vector<WindowRecord>& windows, const RecurrenceMap& map,
                                   double tolerance) {
  if (windows.size() < 2) throw ConfigError("recurrence verification needs at least two windows");
  RecurrenceReport r;
  for (std::size_t n = 1; n < windows.size(); ++n) {
    const Vector predicted = map.apply(windows[n - 1].omega, windows[n].v, windows[n]);
    const double res = (windows[n].omega - predicted).norm();
    r.residuals.push_back(res);
    r.max_residual = std::max(r.max_residual, res);
  }
  r.pass = r.max_residual <= tolerance;
  return r;
}

RecurrenceMap fit_recurrence(const std::vector<WindowRecord>& windows) {
  if (windows.size() < 2) throw ConfigError("fitting a recurrence needs at least two windows");
  const auto dw = windows[0].omega.size();
  const auto dv = windows[0].v.size();
  const Eigen::Index p = dw + dv + 1;
  const auto rows = static_cast<Eigen::Index>(windows.size() - 1);
  if (rows < p) {
    throw ConfigError("fitting an affine recurrence needs at least " + std::to_string(p + 1) + " windows, got " +
                      std::to_string(windows.size()));
  }
  Matrix x(rows, p);
  Matrix y(rows, dw);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& prev = windows[static_cast<std::size_t>(i)];
    const auto& cur = windows[static_cast<std::size_t>(i) + 1];
    if (prev.omega.size() != dw || cur.omega.size() != dw || cur.v.size() != dv) {
      throw DataError("window functional dimensions vary across windows");
    }
    x.row(i) << prev.omega.transpose(), cur.v.transpose(), 1.0;
    y.row(i) = cur.omega.transpose();
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(1e-10);
  cod.compute(x);
  const Matrix b = cod.solve(y);

  RecurrenceMap map;
  map.family = RecurrenceMap::Family::FittedAffine;
  map.coefficients = b.transpose();
  map.rank = cod.rank();
  map.rank_deficient = map.rank < p;
  map.residual_norm = (x * b - y).norm();
  return map;
}

WindowFunctional make_functional(FunctionalKind kind, const std::vector<std::string>& components,
                                 const game::Dims& dims) {
  if (components.empty()) throw ConfigError("window functional has no components");
  expr::SymbolTable s;
  const auto t = s.add_scalar("t");
  const auto phi = s.add_vector("phi", dims.phi);
  const auto u0 = s.add_vector("u0", dims.u0);
  const auto u = s.add_vector("u", dims.u);
  const auto eps = s.add_vector("eps", dims.eps);
  const auto e = expr::VectorExpression::compile(components, s);
  const auto slots = s.size();
  WindowFunctional f;
  f.kind = kind;
  f.integrand = [=](const WindowPoint& p) {
    expr::Env env(slots);
    env.bind(t, std::span<const double>(&p.t, 1)).bind(phi, p.phi).bind(u0, p.u0).bind(u, p.u).bind(eps, p.eps);
    return e.eval(env);
  };
  return f;
}

}  // namespace tactica::verbal
