#pragma once

// The three regularized models over the factor blocks and the posterior they
// induce on the unconstrained parameter vector.
//
// Sampling parameterization (one flat vector u):
//   [ std_A | std_P | std_C | b0 | log sigma | hyper... ]
// Effects are scale times standardized draws: for the exchangeable and ridge
// models b_X = scale_X * std_X; for the random-walk model the std block holds
// standardized first differences d_X = scale_X * std_X, mapped to sum-to-zero
// levels.  Hyper scales live on the log scale: ridge has one shared scale,
// the other two models one per factor; the exchangeable model's scales carry
// a fixed floor, scale = floor + exp(eta).
//
// log_posterior = log likelihood + standard-normal log density of the std
// blocks + the log-Jacobians of the log-scale transforms (constants dropped
// throughout).  At fixed scales this is the likelihood times the factor
// priors, which is what the prior-rewrite identities below decompose.

#include <string>

#include <Eigen/Core>

#include "apc/datagen.hpp"
#include "apc/design.hpp"
#include "apc/grid.hpp"

namespace apc {

enum class ModelKind {
  RandomEffects,  // independent factor scales, floored
  Ridge,          // one shared scale across all blocks
  RandomWalk,     // per-factor scales on first differences
};

// Short codes used in CLI flags and reports: "re", "rr", "rw".
std::string model_code(ModelKind kind);
ModelKind model_from_code(const std::string& code);

// Scale floor for the exchangeable model's per-factor scales.
inline constexpr double kScaleFloor = 0.05;

struct PriorScales {
  double age = 1.0;
  double period = 1.0;
  double cohort = 1.0;

  // Ridge uses one scale for every block; it is read from `age`.
  static PriorScales shared(double lambda) { return {lambda, lambda, lambda}; }
};

struct ParamLayout {
  ModelKind kind;
  int I, J, K;
  int na, np, nc;   // std block lengths (counts, or counts-1 for random walk)
  int b0_at, lsigma_at, hyper_at;
  int hyper_count;  // 3, or 1 for ridge
  int dim;
};

ParamLayout make_layout(ModelKind kind, const GridSpec& spec);

struct UnconstrainedParams {
  ParamLayout layout;
  Eigen::VectorXd u;  // length layout.dim

  auto std_age() const { return u.segment(0, layout.na); }
  auto std_period() const { return u.segment(layout.na, layout.np); }
  auto std_cohort() const { return u.segment(layout.na + layout.np, layout.nc); }
  double b0() const { return u[layout.b0_at]; }
  double log_sigma() const { return u[layout.lsigma_at]; }
  double sigma() const { return std::exp(u[layout.lsigma_at]); }
};

// Residual scale and prior scales implied by u (exp, plus floor where the
// model has one).
double sigma_of(const UnconstrainedParams& p);
PriorScales scales_of(const UnconstrainedParams& p);

// Maps standardized first differences d (length n-1) to n levels that sum to
// zero exactly: b_1 = -(1/n) * sum_a (n-a) d_a, b_i = b_1 + sum_{a<i} d_a.
Eigen::VectorXd rw_levels(const Eigen::VectorXd& d);
// Adjoint of rw_levels (gradient pullback levels -> differences).
Eigen::VectorXd rw_levels_adjoint(const Eigen::VectorXd& g);
// Adjacent differences; exact inverse of rw_levels on sum-to-zero input.
Eigen::VectorXd rw_diffs(const Eigen::VectorXd& b);

// Effects implied by u.  Exchangeable/ridge blocks are not forced to sum to
// zero; random-walk blocks sum to zero by construction of rw_levels.
EffectSet transform(const UnconstrainedParams& p);

// Gaussian log likelihood of the dataset at given effects and residual scale,
// -N log sigma - sum (y - mu)^2 / (2 sigma^2), constants dropped.
double log_likelihood(const EffectSet& b, double sigma, const Dataset& data);

// Factor-block log prior at fixed scales, constants dropped.
//   exchangeable: -sum_X [ n_X log scale_X + |b_X|^2 / (2 scale_X^2) ]
//   ridge:        -(I+J+K) log lambda - sum_X |b_X|^2 / (2 lambda^2)
//   random walk:  -sum_X [ (n_X - 1) log scale_X + sum(diff b_X)^2 / (2 scale_X^2) ]
double log_prior(ModelKind kind, const EffectSet& b, const PriorScales& scales);

// Same prior evaluated on the slope/nonlinear split of each block, with the
// unidentified linear component s folded in: the age and cohort slopes enter
// as slope + s, the period slope as slope - s.  Level penalties weight the
// squared total slope by sum(v^2); difference penalties weight it by n-1 and
// pick up a cross term against the nonlinear endpoints.
double log_prior_decomposed(ModelKind kind, double slope_age,
                            double slope_period, double slope_cohort, double s,
                            const Eigen::VectorXd& nl_age,
                            const Eigen::VectorXd& nl_period,
                            const Eigen::VectorXd& nl_cohort,
                            const PriorScales& scales);

// Posterior over u for one dataset; precomputes cell statistics so value and
// gradient are O(cells).
class LogPosterior {
 public:
  LogPosterior(ModelKind kind, const Dataset& data);
  LogPosterior(ModelKind kind, SuffStats stats);

  const ParamLayout& layout() const { return layout_; }
  const SuffStats& stats() const { return stats_; }

  double value(const Eigen::VectorXd& u) const;
  // Returns the value; grad is resized and overwritten.  Analytic, exact.
  double value_and_grad(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const;

 private:
  ModelKind kind_;
  SuffStats stats_;
  ParamLayout layout_;
};

// Free-function forms for one-off evaluation.
double log_posterior(ModelKind kind, const UnconstrainedParams& p,
                     const Dataset& data);
Eigen::VectorXd grad_log_posterior(ModelKind kind, const UnconstrainedParams& p,
                                   const Dataset& data);

}  // namespace apc
