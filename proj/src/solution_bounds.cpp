#include "cplrnn/solution_bounds.hpp"

namespace cplrnn {

SolutionFactors solution_factors(const RegionSolution& sol, const Interval& T,
                                 IntervalError* err, double max_width) {
  SolutionFactors f;
  if (err) *err = IntervalError::none;
  if (T.is_empty()) return f;
  if (!(T.width() <= max_width)) {
    if (err) *err = IntervalError::too_wide;
    return f;
  }
  const RegionEigen& eg = *sol.eig;
  f.real_E.reserve(eg.real_terms.size());
  for (int l : eg.real_terms)
    f.real_E.push_back(interval_exp(scale(T, eg.lambda(l).real())));
  f.pair_ECS.reserve(eg.pair_terms.size());
  for (int l : eg.pair_terms) {
    Interval arg = scale(T, eg.lambda(l).imag());
    f.pair_ECS.push_back({interval_exp(scale(T, eg.lambda(l).real())),
                          interval_cos(arg), interval_sin(arg)});
  }
  return f;
}

Interval eval_dim_interval(const RegionSolution& sol, int dim,
                           const SolutionFactors& f) {
  const RegionEigen& eg = *sol.eig;
  Interval acc = Interval::point(-eg.p_part(dim));
  for (size_t k = 0; k < eg.real_terms.size(); ++k) {
    int l = eg.real_terms[k];
    acc = add(acc, scale(f.real_E[k], sol.ctilde(dim, l).real()));
  }
  for (size_t k = 0; k < eg.pair_terms.size(); ++k) {
    int l = eg.pair_terms[k];
    double a = sol.ctilde(dim, l).real();
    double b = sol.ctilde(dim, l).imag();
    const auto& ecs = f.pair_ECS[k];
    Interval osc = sub(scale(ecs[1], a), scale(ecs[2], b));
    acc = add(acc, scale(mul(ecs[0], osc), 2.0));
  }
  return acc;
}

Interval eval_dim_derivative_interval(const RegionSolution& sol, int dim,
                                      const SolutionFactors& f) {
  const RegionEigen& eg = *sol.eig;
  Interval acc = Interval::point(0.0);
  for (size_t k = 0; k < eg.real_terms.size(); ++k) {
    int l = eg.real_terms[k];
    double coef = eg.lambda(l).real() * sol.ctilde(dim, l).real();
    acc = add(acc, scale(f.real_E[k], coef));
  }
  for (size_t k = 0; k < eg.pair_terms.size(); ++k) {
    int l = eg.pair_terms[k];
    double al = eg.lambda(l).real();
    double be = eg.lambda(l).imag();
    double a = sol.ctilde(dim, l).real();
    double b = sol.ctilde(dim, l).imag();
    const auto& ecs = f.pair_ECS[k];
    Interval osc = sub(scale(ecs[1], al * a - be * b),
                       scale(ecs[2], al * b + be * a));
    acc = add(acc, scale(mul(ecs[0], osc), 2.0));
  }
  return acc;
}

Interval eval_solution_interval(const RegionSolution& sol, int dim,
                                const Interval& T, IntervalError* err,
                                double max_width) {
  IntervalError e = IntervalError::none;
  SolutionFactors f = solution_factors(sol, T, &e, max_width);
  if (err) *err = e;
  if (e != IntervalError::none) return Interval::empty();
  if (T.is_empty()) return Interval::empty();
  return eval_dim_interval(sol, dim, f);
}

}  // namespace cplrnn
