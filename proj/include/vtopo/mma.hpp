#ifndef VTOPO_MMA_HPP
#define VTOPO_MMA_HPP

// Method of Moving Asymptotes (Svanberg 1987) for
//
//   minimize f(x)  subject to  g(x) <= 0,  lower <= x <= upper
//
// with a single constraint. Each update builds the separable rational
// approximation around the current asymptotes and solves its dual, a concave
// function of one multiplier, by bisection. A slack y >= 0 with cost
// c*y + y^2/2 keeps the subproblem feasible.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace vtopo {

struct MmaSettings
{
  double asymptote_init = 0.5;
  double asymptote_increase = 1.2;
  double asymptote_decrease = 0.7;
  double move_limit = 0.2;          // fraction of (upper - lower) per step
  double asymptote_min_gap = 1e-5;  // closest an asymptote may get to x, fraction of (upper - lower)
  double albefa = 0.1;              // keep the subproblem bounds off the asymptotes
  double raa0 = 1e-5;               // convexity regularization
  double slack_linear = 1000.0;     // c
  double slack_quadratic = 1.0;     // d
};

struct MmaState
{
  std::vector<double> lower_bounds, upper_bounds;
  std::vector<double> previous, before_previous;  // x^{k-1}, x^{k-2}
  std::vector<double> low_asymptote, upp_asymptote;
  int iteration = 0;
  MmaSettings settings;

  MmaState() = default;
  MmaState(std::vector<double> lower, std::vector<double> upper, MmaSettings s = {})
      : lower_bounds(std::move(lower)), upper_bounds(std::move(upper)), settings{s}
  {
    if (lower_bounds.size() != upper_bounds.size()) throw std::invalid_argument("MmaState: bound lengths differ");
    for (std::size_t j = 0; j < lower_bounds.size(); ++j)
      if (!(upper_bounds[j] > lower_bounds[j])) throw std::invalid_argument("MmaState: need lower < upper");
  }

  std::size_t size() const noexcept { return lower_bounds.size(); }
};

/// One MMA step from x; advances `state` and returns the new iterate, which
/// satisfies the bounds exactly.
inline std::vector<double> mma_update(std::span<const double> x, double f, std::span<const double> df, double g,
                                      std::span<const double> dg, MmaState& state)
{
  (void)f;
  const std::size_t n = state.size();
  if (x.size() != n || df.size() != n || dg.size() != n)
    throw std::invalid_argument("mma_update: vector lengths do not match the state");
  if (!std::isfinite(g)) throw std::invalid_argument("mma_update: non-finite constraint value");
  for (std::size_t j = 0; j < n; ++j)
    if (!std::isfinite(df[j]) || !std::isfinite(dg[j]))
      throw std::invalid_argument("mma_update: non-finite gradient entry");

  const MmaSettings& s = state.settings;
  auto& low = state.low_asymptote;
  auto& upp = state.upp_asymptote;
  low.resize(n);
  upp.resize(n);

  for (std::size_t j = 0; j < n; ++j) {
    const double range = state.upper_bounds[j] - state.lower_bounds[j];
    if (state.iteration < 2) {
      low[j] = x[j] - s.asymptote_init * range;
      upp[j] = x[j] + s.asymptote_init * range;
    } else {
      const double sign = (x[j] - state.previous[j]) * (state.previous[j] - state.before_previous[j]);
      const double factor = sign > 0.0 ? s.asymptote_increase : sign < 0.0 ? s.asymptote_decrease : 1.0;
      low[j] = x[j] - factor * (state.previous[j] - low[j]);
      upp[j] = x[j] + factor * (upp[j] - state.previous[j]);
      low[j] = std::clamp(low[j], x[j] - 10.0 * range, x[j] - s.asymptote_min_gap * range);
      upp[j] = std::clamp(upp[j], x[j] + s.asymptote_min_gap * range, x[j] + 10.0 * range);
    }
  }

  std::vector<double> alpha(n), beta(n), p0(n), q0(n), p1(n), q1(n);
  double g_offset = g;  // g~(x) = g_offset + sum_j (p1/(U - x) + q1/(x - L))
  for (std::size_t j = 0; j < n; ++j) {
    const double range = state.upper_bounds[j] - state.lower_bounds[j];
    alpha[j] = std::max({state.lower_bounds[j], low[j] + s.albefa * (x[j] - low[j]), x[j] - s.move_limit * range});
    beta[j] = std::min({state.upper_bounds[j], upp[j] - s.albefa * (upp[j] - x[j]), x[j] + s.move_limit * range});
    const double ux = upp[j] - x[j], xl = x[j] - low[j];
    const double reg = s.raa0 / std::max(range, 1e-5);
    p0[j] = ux * ux * (1.001 * std::max(df[j], 0.0) + 0.001 * std::max(-df[j], 0.0) + reg);
    q0[j] = xl * xl * (0.001 * std::max(df[j], 0.0) + 1.001 * std::max(-df[j], 0.0) + reg);
    p1[j] = ux * ux * (1.001 * std::max(dg[j], 0.0) + 0.001 * std::max(-dg[j], 0.0) + reg);
    q1[j] = xl * xl * (0.001 * std::max(dg[j], 0.0) + 1.001 * std::max(-dg[j], 0.0) + reg);
    g_offset -= p1[j] / ux + q1[j] / xl;
  }

  std::vector<double> xs(n);
  auto primal = [&](double lambda) {
    for (std::size_t j = 0; j < n; ++j) {
      const double sp = std::sqrt(p0[j] + lambda * p1[j]);
      const double sq = std::sqrt(q0[j] + lambda * q1[j]);
      xs[j] = std::clamp((sp * low[j] + sq * upp[j]) / (sp + sq), alpha[j], beta[j]);
    }
  };
  // derivative of the dual: g~(x(lambda)) - y(lambda), nonincreasing in lambda
  auto dual_slope = [&](double lambda) {
    primal(lambda);
    double gt = g_offset;
    for (std::size_t j = 0; j < n; ++j) gt += p1[j] / (upp[j] - xs[j]) + q1[j] / (xs[j] - low[j]);
    const double y = std::max(0.0, (lambda - s.slack_linear) / s.slack_quadratic);
    return gt - y;
  };

  double lambda = 0.0;
  if (dual_slope(0.0) > 0.0) {
    double lo = 0.0, hi = 1.0;
    while (dual_slope(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e300) throw std::runtime_error("mma_update: dual bracket failed");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (dual_slope(mid) > 0.0 ? lo : hi) = mid;
    }
    lambda = 0.5 * (lo + hi);
  }
  primal(lambda);
  for (std::size_t j = 0; j < n; ++j) xs[j] = std::clamp(xs[j], state.lower_bounds[j], state.upper_bounds[j]);

  state.before_previous = state.previous.empty() ? std::vector<double>(x.begin(), x.end()) : state.previous;
  state.previous.assign(x.begin(), x.end());
  ++state.iteration;
  return xs;
}

} // namespace vtopo

#endif // VTOPO_MMA_HPP
