#pragma once

// Point and posterior fitting for one model on one dataset, plus the
// split-chain convergence diagnostic.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "apc/datagen.hpp"
#include "apc/models.hpp"

namespace apc {

enum class FitMethod { Map, Mcmc };

std::string method_code(FitMethod m);          // "map" / "mcmc"
FitMethod method_from_code(const std::string& code);

struct FitConfig {
  FitMethod method = FitMethod::Mcmc;
  int chains = 4;
  int iterations = 6000;  // per chain, warmup included
  int warmup = 1000;
  int thin = 5;           // keep every thin-th post-warmup draw
  std::uint64_t seed = 1234;
  int restarts = 8;             // optimizer multistarts (map)
  double rhat_threshold = 1.05; // convergence gate on the worst parameter

  void validate() const;  // throws std::invalid_argument
};

struct FitResult {
  ModelKind kind;
  FitMethod method;
  EffectSet point;        // centered: block means swept into the intercept
  double sigma_hat = 0.0;
  PriorScales hyper_hat;
  // Per-parameter split-chain diagnostic, empty for map fits.
  std::vector<std::pair<std::string, double>> rhat;
  double max_rhat = 0.0;  // 0 when rhat is empty
  double log_posterior_at_point = 0.0;
  bool converged = false;
  int kept_draws = 0;     // total retained posterior draws (mcmc)
};

// Split-chain potential scale reduction: each chain is halved (odd lengths
// drop the middle draw) and the usual between/within variance ratio is taken
// over the half-chains.  Returns +inf when the pooled within-chain variance
// is zero; requires at least one chain of length >= 4.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Maximizes the marginal posterior of (intercept, residual scale, prior
// scales) with the Gaussian effect blocks integrated out in closed form,
// then reports effects at their conditional posterior mean given those
// scales.  Multistart L-BFGS, deterministic under cfg.seed; converged means
// the best start met the gradient tolerance.
FitResult map_fit(ModelKind kind, const Dataset& data, const FitConfig& cfg);

// Hamiltonian Monte Carlo on log_posterior: cfg.chains independent chains,
// warmup with dual-averaging step size and windowed diagonal metric
// adaptation, then fixed-kernel sampling; post-warmup draws thinned by
// cfg.thin.  Point = per-parameter medians of the centered draws; converged
// means every chain finished cleanly and max split-rhat < threshold.
FitResult mcmc_fit(ModelKind kind, const Dataset& data, const FitConfig& cfg);

// Dispatch on cfg.method.
FitResult fit(ModelKind kind, const Dataset& data, const FitConfig& cfg);

}  // namespace apc
