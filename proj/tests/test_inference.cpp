#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"

#include "apc/datagen.hpp"
#include "apc/grid.hpp"
#include "apc/inference.hpp"
#include "apc/models.hpp"
#include "apc/rng.hpp"
#include "helpers.hpp"

namespace {

apc::Dataset make_data(int case_id, std::uint64_t seed, double gamma = 0.1) {
  apc::GridSpec spec;
  spec.gamma = gamma;
  const apc::CaseSpec cs = apc::case_by_id(case_id);
  return apc::generate_dataset(apc::artificial_effects(cs, spec), spec, seed);
}

// Linear transfer between estimate and truth along the gauge direction
// (v_A, -v_P, v_C); the quantity the simulation grades.
double gauge_shift(const apc::EffectSet& est, const apc::EffectSet& truth,
                   const apc::GridSpec& spec) {
  const apc::CenteringIndexes v = apc::centering_indexes(spec);
  const double num = (est.age - truth.age).dot(v.age) -
                     (est.period - truth.period).dot(v.period) +
                     (est.cohort - truth.cohort).dot(v.cohort);
  const double den = v.age.squaredNorm() + v.period.squaredNorm() +
                     v.cohort.squaredNorm();
  return num / den;
}

apc::FitConfig quick_mcmc(int chains, int iterations, int warmup, int thin,
                          std::uint64_t seed) {
  apc::FitConfig cfg;
  cfg.method = apc::FitMethod::Mcmc;
  cfg.chains = chains;
  cfg.iterations = iterations;
  cfg.warmup = warmup;
  cfg.thin = thin;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("fit method codes round trip") {
  CHECK(apc::method_code(apc::FitMethod::Map) == "map");
  CHECK(apc::method_code(apc::FitMethod::Mcmc) == "mcmc");
  CHECK(apc::method_from_code("map") == apc::FitMethod::Map);
  CHECK(apc::method_from_code("mcmc") == apc::FitMethod::Mcmc);
  CHECK_THROWS_AS(apc::method_from_code("vb"), std::invalid_argument);
}

TEST_CASE("fit config validation") {
  apc::FitConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  apc::FitConfig bad = cfg;
  bad.chains = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.warmup = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.iterations = bad.warmup;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.thin = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.restarts = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.rhat_threshold = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.iterations = bad.warmup + 3;  // three retained draws is too few
  bad.thin = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("split rhat on matched and mismatched chains") {
  apc::Rng rng(4242);

  SUBCASE("iid chains sit at one") {
    std::vector<std::vector<double>> chains(4, std::vector<double>(1000));
    for (auto& ch : chains)
      for (auto& x : ch) x = rng.normal();
    const double r = apc::split_rhat(chains);
    CHECK(r > 0.99);
    CHECK(r < 1.01);
  }

  SUBCASE("separated chains blow up") {
    std::vector<std::vector<double>> chains(4, std::vector<double>(500));
    for (int c = 0; c < 4; ++c)
      for (auto& x : chains[c]) x = rng.normal() + (c < 2 ? 0.0 : 5.0);
    CHECK(apc::split_rhat(chains) > 1.5);
  }

  SUBCASE("within-chain drift is caught by the split") {
    // Each chain alone is stationary in neither half; a non-split diagnostic
    // over whole chains would see identical means.
    std::vector<std::vector<double>> chains(2, std::vector<double>(600));
    for (auto& ch : chains)
      for (std::size_t t = 0; t < ch.size(); ++t)
        ch[t] = rng.normal() + (t < 300 ? 0.0 : 5.0);
    CHECK(apc::split_rhat(chains) > 1.5);
  }

  SUBCASE("constant chains return the infinity sentinel") {
    const std::vector<std::vector<double>> chains(3,
                                                  std::vector<double>(50, 2.5));
    CHECK(std::isinf(apc::split_rhat(chains)));
  }

  SUBCASE("all chains too short to halve") {
    const std::vector<std::vector<double>> chains(2, std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(apc::split_rhat(chains), std::invalid_argument);
  }
}

TEST_CASE("map fit is deterministic under the seed") {
  const apc::Dataset data = make_data(5, 77);
  apc::FitConfig cfg;
  cfg.method = apc::FitMethod::Map;
  cfg.seed = 31;
  const apc::FitResult a = apc::map_fit(apc::ModelKind::Ridge, data, cfg);
  const apc::FitResult b = apc::map_fit(apc::ModelKind::Ridge, data, cfg);
  CHECK(a.point.b0 == b.point.b0);
  CHECK(a.point.age == b.point.age);
  CHECK(a.point.period == b.point.period);
  CHECK(a.point.cohort == b.point.cohort);
  CHECK(a.sigma_hat == b.sigma_hat);
  CHECK(a.hyper_hat.age == b.hyper_hat.age);
  CHECK(a.log_posterior_at_point == b.log_posterior_at_point);
}

TEST_CASE("map fit recovers the cohort-trend case with known bias pattern") {
  // Case 3 puts the only linear trend on cohort.  The difference penalty
  // barely taxes it, so the random walk keeps it; the level penalties tax it
  // heavily, so the exchangeable model shifts roughly minus the full slope.
  apc::GridSpec spec;
  const apc::Dataset data = make_data(3, 2025);
  const apc::EffectSet truth =
      apc::artificial_effects(apc::case_by_id(3), spec);

  apc::FitConfig cfg;
  cfg.method = apc::FitMethod::Map;

  const apc::FitResult rw =
      apc::map_fit(apc::ModelKind::RandomWalk, data, cfg);
  CHECK(rw.converged);
  CHECK(std::fabs(gauge_shift(rw.point, truth, spec)) <= 0.02);
  CHECK(rw.sigma_hat > 0.07);
  CHECK(rw.sigma_hat < 0.13);
  CHECK(rw.point.max_abs_block_mean() <= 1e-9);

  const apc::FitResult re =
      apc::map_fit(apc::ModelKind::RandomEffects, data, cfg);
  const double s_re = gauge_shift(re.point, truth, spec);
  CHECK(s_re < -0.07);
  CHECK(s_re > -0.13);
  CHECK(re.hyper_hat.age >= apc::kScaleFloor);
  CHECK(re.hyper_hat.period >= apc::kScaleFloor);
  CHECK(re.hyper_hat.cohort >= apc::kScaleFloor);
}

TEST_CASE("map point is the conditional stationary point of the posterior") {
  const apc::Dataset data = make_data(6, 11);
  apc::FitConfig cfg;
  cfg.method = apc::FitMethod::Map;
  const apc::FitResult res =
      apc::map_fit(apc::ModelKind::RandomWalk, data, cfg);
  CHECK(res.converged);

  // Rebuild the unconstrained vector for the reported point and check that
  // the std blocks and intercept are flat directions of the full posterior.
  const apc::LogPosterior post(apc::ModelKind::RandomWalk, data);
  const apc::ParamLayout& lay = post.layout();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(lay.dim);
  u.segment(0, lay.na) = apc::rw_diffs(res.point.age) / res.hyper_hat.age;
  u.segment(lay.na, lay.np) =
      apc::rw_diffs(res.point.period) / res.hyper_hat.period;
  u.segment(lay.na + lay.np, lay.nc) =
      apc::rw_diffs(res.point.cohort) / res.hyper_hat.cohort;
  u[lay.b0_at] = res.point.b0;
  u[lay.lsigma_at] = std::log(res.sigma_hat);
  u[lay.hyper_at + 0] = std::log(res.hyper_hat.age);
  u[lay.hyper_at + 1] = std::log(res.hyper_hat.period);
  u[lay.hyper_at + 2] = std::log(res.hyper_hat.cohort);

  Eigen::VectorXd grad;
  post.value_and_grad(u, grad);
  CHECK(grad.segment(0, lay.na + lay.np + lay.nc).cwiseAbs().maxCoeff() <=
        1e-6);
  CHECK(std::fabs(grad[lay.b0_at]) <= 1e-3);
}

TEST_CASE("posterior strictly decreases along the gauge from the map point") {
  const apc::Dataset data = make_data(3, 501);
  apc::FitConfig cfg;
  cfg.method = apc::FitMethod::Map;
  const apc::FitResult res =
      apc::map_fit(apc::ModelKind::RandomEffects, data, cfg);

  const apc::LogPosterior post(apc::ModelKind::RandomEffects, data);
  const apc::ParamLayout& lay = post.layout();
  const apc::CenteringIndexes v = apc::centering_indexes(data.spec);

  Eigen::VectorXd u = Eigen::VectorXd::Zero(lay.dim);
  u.segment(0, lay.na) = res.point.age / res.hyper_hat.age;
  u.segment(lay.na, lay.np) = res.point.period / res.hyper_hat.period;
  u.segment(lay.na + lay.np, lay.nc) = res.point.cohort / res.hyper_hat.cohort;
  u[lay.b0_at] = res.point.b0;
  u[lay.lsigma_at] = std::log(res.sigma_hat);
  u[lay.hyper_at + 0] = std::log(res.hyper_hat.age - apc::kScaleFloor);
  u[lay.hyper_at + 1] = std::log(res.hyper_hat.period - apc::kScaleFloor);
  u[lay.hyper_at + 2] = std::log(res.hyper_hat.cohort - apc::kScaleFloor);
  const double at_point = post.value(u);

  for (const double t : {-0.5, -0.05, 0.05, 0.5}) {
    Eigen::VectorXd shifted = u;
    shifted.segment(0, lay.na) += t * v.age / res.hyper_hat.age;
    shifted.segment(lay.na, lay.np) -= t * v.period / res.hyper_hat.period;
    shifted.segment(lay.na + lay.np, lay.nc) +=
        t * v.cohort / res.hyper_hat.cohort;
    CHECK(post.value(shifted) < at_point);
  }
}

TEST_CASE("map random walk recovers truth when noise vanishes") {
  apc::GridSpec spec;
  spec.gamma = 1e-12;
  const apc::CaseSpec cs = apc::case_by_id(8);
  const apc::EffectSet truth = apc::artificial_effects(cs, spec);
  const apc::Dataset data = apc::generate_dataset(truth, spec, 900);

  apc::FitConfig cfg;
  cfg.method = apc::FitMethod::Map;
  cfg.restarts = 2;
  const apc::FitResult res =
      apc::map_fit(apc::ModelKind::RandomWalk, data, cfg);
  CHECK(test_util::max_abs_diff(res.point.age, truth.age) <= 0.05);
  CHECK(test_util::max_abs_diff(res.point.period, truth.period) <= 0.05);
  CHECK(test_util::max_abs_diff(res.point.cohort, truth.cohort) <= 0.05);
  CHECK(std::fabs(res.point.b0 - truth.b0) <= 0.05);
}

TEST_CASE("mcmc fit is deterministic under the seed") {
  const apc::Dataset data = make_data(1, 8);
  const apc::FitConfig cfg = quick_mcmc(2, 300, 120, 3, 99);
  const apc::FitResult a = apc::mcmc_fit(apc::ModelKind::RandomWalk, data, cfg);
  const apc::FitResult b = apc::mcmc_fit(apc::ModelKind::RandomWalk, data, cfg);
  CHECK(a.point.b0 == b.point.b0);
  CHECK(a.point.age == b.point.age);
  CHECK(a.point.cohort == b.point.cohort);
  CHECK(a.sigma_hat == b.sigma_hat);
  CHECK(a.max_rhat == b.max_rhat);
  CHECK(a.kept_draws == b.kept_draws);
  CHECK(a.kept_draws == 2 * 60);
}

TEST_CASE("mcmc fit on the ridge model behaves statistically") {
  apc::GridSpec spec;
  const apc::Dataset data = make_data(3, 321);
  const apc::EffectSet truth =
      apc::artificial_effects(apc::case_by_id(3), spec);
  const apc::FitConfig cfg = quick_mcmc(4, 1200, 400, 2, 7);
  const apc::FitResult res = apc::mcmc_fit(apc::ModelKind::Ridge, data, cfg);

  CHECK(res.kept_draws == 4 * 400);
  CHECK(res.rhat.size() == 42);  // intercept + 39 levels + sigma + lambda
  CHECK(res.rhat.front().first == "b0");
  CHECK(res.rhat.back().first == "lambda");
  CHECK(res.converged);
  CHECK(res.max_rhat < 1.05);
  CHECK(res.point.max_abs_block_mean() <= 1e-9);
  CHECK(res.sigma_hat > 0.07);
  CHECK(res.sigma_hat < 0.13);

  // The shared penalty moves part of the cohort trend; the transfer is
  // negative and well away from either extreme.
  const double s = gauge_shift(res.point, truth, spec);
  CHECK(s < -0.01);
  CHECK(s > -0.15);
}

TEST_CASE("mcmc and map agree on the random walk point") {
  apc::GridSpec spec;
  const apc::Dataset data = make_data(5, 64);
  const apc::EffectSet truth =
      apc::artificial_effects(apc::case_by_id(5), spec);

  apc::FitConfig map_cfg;
  map_cfg.method = apc::FitMethod::Map;
  const apc::FitResult m =
      apc::map_fit(apc::ModelKind::RandomWalk, data, map_cfg);

  const apc::FitConfig cfg = quick_mcmc(4, 1200, 400, 2, 12);
  const apc::FitResult s = apc::mcmc_fit(apc::ModelKind::RandomWalk, data, cfg);
  CHECK(s.converged);
  CHECK(std::fabs(gauge_shift(m.point, truth, spec) -
                  gauge_shift(s.point, truth, spec)) <= 0.05);
  CHECK(test_util::max_abs_diff(m.point.cohort, s.point.cohort) <= 0.08);
}

TEST_CASE("fit dispatches on the configured method") {
  const apc::Dataset data = make_data(1, 5);
  apc::FitConfig cfg = quick_mcmc(2, 260, 100, 4, 3);
  cfg.method = apc::FitMethod::Map;
  CHECK(apc::fit(apc::ModelKind::Ridge, data, cfg).method ==
        apc::FitMethod::Map);
  cfg.method = apc::FitMethod::Mcmc;
  CHECK(apc::fit(apc::ModelKind::Ridge, data, cfg).method ==
        apc::FitMethod::Mcmc);
}
