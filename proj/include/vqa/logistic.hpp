#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/types.hpp"

// Four-parameter monotonic logistic used to calibrate objective scores onto a
// subjective scale before linear metrics:
//
//   f(o) = (upper - lower) / (1 + exp(-(o - center) / spread)) + lower
//
// fitted by damped least squares (Levenberg-Marquardt with Marquardt scaling
// of the normal equations). Initialisation follows the usual convention:
// upper/lower from the subjective extremes, center at the mean objective
// score, spread at a quarter of the objective standard deviation.

namespace vqa {

/// Fit failed to converge within the iteration budget; carries the best
/// parameters seen so far.
class FitError : public Error {
 public:
  FitError(const std::string& msg, double upper, double lower, double center,
           double spread, double rss)
      : Error(msg), upper(upper), lower(lower), center(center), spread(spread), rss(rss) {}
  double upper, lower, center, spread, rss;
};

template <class Scalar>
struct LogisticParams {
  Scalar upper = Scalar(1);
  Scalar lower = Scalar(0);
  Scalar center = Scalar(0);
  Scalar spread = Scalar(1);

  Scalar operator()(Scalar o) const {
    const Scalar u = (o - center) / spread;
    Scalar sig;
    if (u >= Scalar(0)) {
      sig = Scalar(1) / (Scalar(1) + std::exp(-u));
    } else {
      const Scalar e = std::exp(u);
      sig = e / (Scalar(1) + e);
    }
    return (upper - lower) * sig + lower;
  }
};

template <class Scalar>
VectorX<Scalar> logistic_eval(const LogisticParams<Scalar>& p, const VectorX<Scalar>& o) {
  VectorX<Scalar> out(o.size());
  for (Index i = 0; i < o.size(); ++i) out[i] = p(o[i]);
  return out;
}

template <class Scalar>
struct LogisticFit {
  LogisticParams<Scalar> params;
  Scalar rss = Scalar(0);                 ///< final sum of squared residuals
  int iterations = 0;
  std::vector<Scalar> objective_trace;    ///< rss after every accepted step
};

/// Least-squares fit of the 4-parameter logistic. Converges when a step's
/// improvement falls below `rel_tol`, when no damping produces an improving
/// step, or when 100 accepted steps together improve the objective by less
/// than 1e-4 relative — the last catches ill-posed fits whose optimum sits at
/// infinity (clustered scores) and would otherwise creep forever. Throws
/// FitError (with the best parameters found) if the budget still runs out.
template <class Scalar>
LogisticFit<Scalar> fit_logistic(const VectorX<Scalar>& objective,
                                 const VectorX<Scalar>& subjective,
                                 int max_iterations = 5000,
                                 Scalar rel_tol = Scalar(1e-10)) {
  const Index n = objective.size();
  if (n != subjective.size())
    throw ShapeError("fit_logistic: input sizes differ");
  if (n < 5)
    throw DomainError("fit_logistic: needs more than 4 points, got " + std::to_string(n));

  LogisticParams<Scalar> p;
  p.upper = subjective.maxCoeff();
  p.lower = subjective.minCoeff();
  p.center = objective.mean();
  const Scalar var =
      (objective.array() - p.center).square().sum() / Scalar(n);  // population
  p.spread = std::sqrt(var) / Scalar(4);
  if (!(p.spread > Scalar(0)))
    throw DomainError("fit_logistic: objective scores are constant");

  auto residuals = [&](const LogisticParams<Scalar>& q) {
    return (logistic_eval(q, objective) - subjective).eval();
  };

  VectorX<Scalar> r = residuals(p);
  Scalar rss = r.squaredNorm();
  LogisticFit<Scalar> fit;
  fit.objective_trace.push_back(rss);

  Scalar lambda = Scalar(1e-3);
  bool converged = false;
  Scalar window_start_rss = rss;
  int window_steps = 0;

  Eigen::Matrix<Scalar, Eigen::Dynamic, 4> jac(n, 4);
  for (int it = 1; it <= max_iterations && !converged; ++it) {
    fit.iterations = it;
    const Scalar span = p.upper - p.lower;
    for (Index i = 0; i < n; ++i) {
      const Scalar u = (objective[i] - p.center) / p.spread;
      Scalar sig;
      if (u >= Scalar(0)) {
        sig = Scalar(1) / (Scalar(1) + std::exp(-u));
      } else {
        const Scalar e = std::exp(u);
        sig = e / (Scalar(1) + e);
      }
      const Scalar bell = sig * (Scalar(1) - sig);
      jac(i, 0) = sig;
      jac(i, 1) = Scalar(1) - sig;
      jac(i, 2) = -span * bell / p.spread;
      jac(i, 3) = -span * bell * u / p.spread;
    }
    const Eigen::Matrix<Scalar, 4, 4> normal = jac.transpose() * jac;
    const Eigen::Matrix<Scalar, 4, 1> grad = jac.transpose() * r;

    // Damped inner loop: raise lambda until a step decreases the objective.
    while (true) {
      Eigen::Matrix<Scalar, 4, 4> damped = normal;
      for (int k = 0; k < 4; ++k) {
        const Scalar d = std::max(normal(k, k), Scalar(1e-12));
        damped(k, k) = normal(k, k) + lambda * d;
      }
      const Eigen::Matrix<Scalar, 4, 1> delta = damped.ldlt().solve(-grad);

      LogisticParams<Scalar> cand = p;
      cand.upper += delta[0];
      cand.lower += delta[1];
      cand.center += delta[2];
      cand.spread += delta[3];

      bool ok = cand.spread != Scalar(0) && std::isfinite(cand.spread) &&
                std::isfinite(cand.upper) && std::isfinite(cand.lower) &&
                std::isfinite(cand.center);
      Scalar cand_rss = std::numeric_limits<Scalar>::infinity();
      VectorX<Scalar> cand_r;
      if (ok) {
        cand_r = residuals(cand);
        cand_rss = cand_r.squaredNorm();
        ok = std::isfinite(cand_rss);
      }

      if (ok && cand_rss < rss) {
        const Scalar drop = rss - cand_rss;
        p = cand;
        r = std::move(cand_r);
        rss = cand_rss;
        fit.objective_trace.push_back(rss);
        lambda = std::max(lambda * Scalar(0.25), Scalar(1e-14));
        // Relative change with a unit absolute floor: a fit whose optimum sits
        // at rss ~ 0 keeps halving the objective forever and would otherwise
        // never satisfy a purely relative test.
        if (drop <= rel_tol * (Scalar(1) + rss)) converged = true;
        if (++window_steps == 100) {
          if (window_start_rss - rss <= Scalar(1e-4) * (Scalar(1) + rss))
            converged = true;
          window_start_rss = rss;
          window_steps = 0;
        }
        break;
      }
      lambda *= Scalar(4);
      if (lambda > Scalar(1e14)) {
        // No improving step within the damping range: the objective cannot be
        // reduced further, which satisfies the relative-change criterion.
        converged = true;
        break;
      }
    }
  }

  if (!converged)
    throw FitError("fit_logistic: no convergence in " + std::to_string(max_iterations) +
                       " iterations",
                   static_cast<double>(p.upper), static_cast<double>(p.lower),
                   static_cast<double>(p.center), static_cast<double>(p.spread),
                   static_cast<double>(rss));

  fit.params = p;
  fit.rss = rss;
  return fit;
}

}  // namespace vqa
