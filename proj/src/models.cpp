#include "apc/models.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "apc/grid.hpp"

namespace apc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_scales(const PriorScales& s) {
  if (!(s.age > 0.0) || !(s.period > 0.0) || !(s.cohort > 0.0))
    throw std::invalid_argument("prior scales must be > 0");
}

void check_blocks(const EffectSet& b, const GridSpec& g) {
  if (b.age.size() != g.I || b.period.size() != g.J || b.cohort.size() != g.K())
    throw std::invalid_argument("effect block sizes do not match the grid");
}

double sq(double x) { return x * x; }

}  // namespace

std::string model_code(ModelKind kind) {
  switch (kind) {
    case ModelKind::RandomEffects: return "re";
    case ModelKind::Ridge: return "rr";
    case ModelKind::RandomWalk: return "rw";
  }
  throw std::invalid_argument("unknown model kind");
}

ModelKind model_from_code(const std::string& code) {
  if (code == "re") return ModelKind::RandomEffects;
  if (code == "rr") return ModelKind::Ridge;
  if (code == "rw") return ModelKind::RandomWalk;
  throw std::invalid_argument("unknown model code: " + code +
                              " (expected re, rr or rw)");
}

ParamLayout make_layout(ModelKind kind, const GridSpec& spec) {
  spec.validate_shape();
  ParamLayout L;
  L.kind = kind;
  L.I = spec.I;
  L.J = spec.J;
  L.K = spec.K();
  const bool walk = kind == ModelKind::RandomWalk;
  L.na = walk ? L.I - 1 : L.I;
  L.np = walk ? L.J - 1 : L.J;
  L.nc = walk ? L.K - 1 : L.K;
  L.b0_at = L.na + L.np + L.nc;
  L.lsigma_at = L.b0_at + 1;
  L.hyper_at = L.b0_at + 2;
  L.hyper_count = kind == ModelKind::Ridge ? 1 : 3;
  L.dim = L.hyper_at + L.hyper_count;
  return L;
}

double sigma_of(const UnconstrainedParams& p) {
  return std::exp(p.u[p.layout.lsigma_at]);
}

PriorScales scales_of(const UnconstrainedParams& p) {
  const ParamLayout& L = p.layout;
  const auto hyper = [&](int h) { return std::exp(p.u[L.hyper_at + h]); };
  switch (L.kind) {
    case ModelKind::RandomEffects:
      return {kScaleFloor + hyper(0), kScaleFloor + hyper(1),
              kScaleFloor + hyper(2)};
    case ModelKind::Ridge:
      return PriorScales::shared(hyper(0));
    case ModelKind::RandomWalk:
      return {hyper(0), hyper(1), hyper(2)};
  }
  throw std::invalid_argument("unknown model kind");
}

Eigen::VectorXd rw_levels(const Eigen::VectorXd& d) {
  const int n = static_cast<int>(d.size()) + 1;
  if (n < 2) throw std::invalid_argument("rw_levels: need at least one difference");
  double b1 = 0.0;
  for (int a = 1; a < n; ++a) b1 -= (n - a) * d[a - 1];
  b1 /= n;
  Eigen::VectorXd b(n);
  b[0] = b1;
  for (int i = 1; i < n; ++i) b[i] = b[i - 1] + d[i - 1];
  return b;
}

Eigen::VectorXd rw_levels_adjoint(const Eigen::VectorXd& g) {
  const int n = static_cast<int>(g.size());
  if (n < 2) throw std::invalid_argument("rw_levels_adjoint: need >= 2 levels");
  const double total = g.sum();
  Eigen::VectorXd out(n - 1);
  double suffix = 0.0;  // sum of g over levels above a
  for (int a = n - 1; a >= 1; --a) {
    suffix += g[a];
    out[a - 1] = suffix - (static_cast<double>(n - a) / n) * total;
  }
  return out;
}

Eigen::VectorXd rw_diffs(const Eigen::VectorXd& b) {
  const int n = static_cast<int>(b.size());
  if (n < 2) throw std::invalid_argument("rw_diffs: need >= 2 levels");
  return b.tail(n - 1) - b.head(n - 1);
}

EffectSet transform(const UnconstrainedParams& p) {
  const ParamLayout& L = p.layout;
  const PriorScales s = scales_of(p);
  EffectSet e;
  e.b0 = p.b0();
  if (L.kind == ModelKind::RandomWalk) {
    e.age = rw_levels(s.age * p.std_age());
    e.period = rw_levels(s.period * p.std_period());
    e.cohort = rw_levels(s.cohort * p.std_cohort());
  } else {
    e.age = s.age * p.std_age();
    e.period = s.period * p.std_period();
    e.cohort = s.cohort * p.std_cohort();
  }
  return e;
}

double log_likelihood(const EffectSet& b, double sigma, const Dataset& data) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("log_likelihood: sigma must be > 0");
  check_blocks(b, data.spec);
  double rss = 0.0;
  for (const auto& r : data.rows) {
    const double mu =
        b.b0 + b.age[r.i - 1] + b.period[r.j - 1] + b.cohort[r.k - 1];
    rss += sq(r.y - mu);
  }
  return -static_cast<double>(data.rows.size()) * std::log(sigma) -
         rss / (2.0 * sigma * sigma);
}

double log_prior(ModelKind kind, const EffectSet& b, const PriorScales& s) {
  check_scales(s);
  const int I = static_cast<int>(b.age.size());
  const int J = static_cast<int>(b.period.size());
  const int K = static_cast<int>(b.cohort.size());
  switch (kind) {
    case ModelKind::RandomEffects:
      return -(I * std::log(s.age) + J * std::log(s.period) +
               K * std::log(s.cohort)) -
             0.5 * (b.age.squaredNorm() / sq(s.age) +
                    b.period.squaredNorm() / sq(s.period) +
                    b.cohort.squaredNorm() / sq(s.cohort));
    case ModelKind::Ridge: {
      const double lambda = s.age;  // one shared scale; see PriorScales::shared
      const double total = b.age.squaredNorm() + b.period.squaredNorm() +
                           b.cohort.squaredNorm();
      return -(I + J + K) * std::log(lambda) - total / (2.0 * sq(lambda));
    }
    case ModelKind::RandomWalk:
      return -((I - 1) * std::log(s.age) + (J - 1) * std::log(s.period) +
               (K - 1) * std::log(s.cohort)) -
             0.5 * (rw_diffs(b.age).squaredNorm() / sq(s.age) +
                    rw_diffs(b.period).squaredNorm() / sq(s.period) +
                    rw_diffs(b.cohort).squaredNorm() / sq(s.cohort));
  }
  throw std::invalid_argument("unknown model kind");
}

double log_prior_decomposed(ModelKind kind, double slope_age,
                            double slope_period, double slope_cohort, double s,
                            const Eigen::VectorXd& nl_age,
                            const Eigen::VectorXd& nl_period,
                            const Eigen::VectorXd& nl_cohort,
                            const PriorScales& scales) {
  check_scales(scales);
  // Total slope per block once the unidentified shift s is folded in; the
  // period sign is opposite because the shift direction is (v, -v, v).
  const double ta = slope_age + s;
  const double tp = slope_period - s;
  const double tc = slope_cohort + s;
  struct Block {
    double t;
    const Eigen::VectorXd* nl;
    double scale;
  };
  const Block blocks[3] = {{ta, &nl_age, scales.age},
                           {tp, &nl_period, scales.period},
                           {tc, &nl_cohort, scales.cohort}};

  if (kind == ModelKind::RandomWalk) {
    double lp = 0.0;
    for (const Block& blk : blocks) {
      const int n = static_cast<int>(blk.nl->size());
      // (t + nl-diff)^2 summed over adjacent pairs: the linear part
      // contributes t^2 per step, the cross term telescopes to the
      // nonlinear endpoints.
      const double cross = 2.0 * blk.t * ((*blk.nl)[n - 1] - (*blk.nl)[0]);
      const double bracket = sq(blk.t) * (n - 1) + cross +
                             rw_diffs(*blk.nl).squaredNorm();
      lp += -(n - 1) * std::log(blk.scale) - bracket / (2.0 * sq(blk.scale));
    }
    return lp;
  }

  // Level penalties: |b|^2 splits as t^2 sum(v^2) + |nl|^2 because the
  // nonlinear part is orthogonal to the centered index.
  double lp = 0.0;
  for (const Block& blk : blocks) {
    const int n = static_cast<int>(blk.nl->size());
    const double bracket =
        sq(blk.t) * index_weight_sum(n) + blk.nl->squaredNorm();
    lp += -n * std::log(blk.scale) - bracket / (2.0 * sq(blk.scale));
  }
  return lp;
}

LogPosterior::LogPosterior(ModelKind kind, const Dataset& data)
    : LogPosterior(kind, build_suff_stats(data)) {}

LogPosterior::LogPosterior(ModelKind kind, SuffStats stats)
    : kind_(kind), stats_(std::move(stats)),
      layout_(make_layout(kind, stats_.spec)) {}

double LogPosterior::value(const Eigen::VectorXd& u) const {
  Eigen::VectorXd unused;
  return value_and_grad(u, unused);
}

double LogPosterior::value_and_grad(const Eigen::VectorXd& u,
                                    Eigen::VectorXd& grad) const {
  const ParamLayout& L = layout_;
  if (u.size() != L.dim)
    throw std::invalid_argument("log_posterior: wrong parameter length");
  grad = Eigen::VectorXd::Zero(L.dim);

  const UnconstrainedParams p{L, u};
  const double sigma = sigma_of(p);
  const PriorScales scales = scales_of(p);
  const EffectSet e = transform(p);

  // Residual pass over cells.  g_* accumulate count * (cell mean - mu), the
  // unscaled likelihood gradient with respect to each level.
  Eigen::VectorXd ga = Eigen::VectorXd::Zero(L.I);
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(L.J);
  Eigen::VectorXd gc = Eigen::VectorXd::Zero(L.K);
  double gb0 = 0.0;
  double rss_between = 0.0;
  for (int i = 1; i <= L.I; ++i) {
    for (int j = 1; j <= L.J; ++j) {
      const double c = stats_.cell_count(i - 1, j - 1);
      if (c == 0.0) continue;
      const int k = j - i + L.I;
      const double mu =
          e.b0 + e.age[i - 1] + e.period[j - 1] + e.cohort[k - 1];
      const double r = stats_.cell_mean(i - 1, j - 1) - mu;
      rss_between += c * r * r;
      const double cr = c * r;
      gb0 += cr;
      ga[i - 1] += cr;
      gp[j - 1] += cr;
      gc[k - 1] += cr;
    }
  }
  const double rss = stats_.ss_within + rss_between;
  const double n = static_cast<double>(stats_.n);
  const double inv2 = 1.0 / sq(sigma);

  double val = -n * std::log(sigma) - 0.5 * rss * inv2;
  val -= 0.5 * u.head(L.b0_at).squaredNorm();
  val += u[L.lsigma_at];
  for (int h = 0; h < L.hyper_count; ++h) val += u[L.hyper_at + h];
  if (!std::isfinite(val)) {
    grad.setZero();
    return kNegInf;
  }

  // Likelihood gradients with respect to the effect levels.
  ga *= inv2;
  gp *= inv2;
  gc *= inv2;
  grad[L.b0_at] = gb0 * inv2;
  grad[L.lsigma_at] = -n + rss * inv2 + 1.0;  // +1: log-scale Jacobian

  // Chain rule into std blocks and hyper coordinates.  d(scale)/d(eta) equals
  // exp(eta) for every model (the floor shifts the scale, not the slope).
  const auto deta = [&](int h) { return std::exp(u[L.hyper_at + h]); };
  const auto stdA = u.segment(0, L.na);
  const auto stdP = u.segment(L.na, L.np);
  const auto stdC = u.segment(L.na + L.np, L.nc);

  if (L.kind == ModelKind::RandomWalk) {
    const Eigen::VectorXd gda = rw_levels_adjoint(ga);
    const Eigen::VectorXd gdp = rw_levels_adjoint(gp);
    const Eigen::VectorXd gdc = rw_levels_adjoint(gc);
    grad.segment(0, L.na) = scales.age * gda - stdA;
    grad.segment(L.na, L.np) = scales.period * gdp - stdP;
    grad.segment(L.na + L.np, L.nc) = scales.cohort * gdc - stdC;
    grad[L.hyper_at + 0] = deta(0) * gda.dot(stdA) + 1.0;
    grad[L.hyper_at + 1] = deta(1) * gdp.dot(stdP) + 1.0;
    grad[L.hyper_at + 2] = deta(2) * gdc.dot(stdC) + 1.0;
  } else if (L.kind == ModelKind::Ridge) {
    grad.segment(0, L.na) = scales.age * ga - stdA;
    grad.segment(L.na, L.np) = scales.age * gp - stdP;
    grad.segment(L.na + L.np, L.nc) = scales.age * gc - stdC;
    grad[L.hyper_at] =
        deta(0) * (ga.dot(stdA) + gp.dot(stdP) + gc.dot(stdC)) + 1.0;
  } else {
    grad.segment(0, L.na) = scales.age * ga - stdA;
    grad.segment(L.na, L.np) = scales.period * gp - stdP;
    grad.segment(L.na + L.np, L.nc) = scales.cohort * gc - stdC;
    grad[L.hyper_at + 0] = deta(0) * ga.dot(stdA) + 1.0;
    grad[L.hyper_at + 1] = deta(1) * gp.dot(stdP) + 1.0;
    grad[L.hyper_at + 2] = deta(2) * gc.dot(stdC) + 1.0;
  }
  return val;
}

double log_posterior(ModelKind kind, const UnconstrainedParams& p,
                     const Dataset& data) {
  return LogPosterior(kind, data).value(p.u);
}

Eigen::VectorXd grad_log_posterior(ModelKind kind, const UnconstrainedParams& p,
                                   const Dataset& data) {
  Eigen::VectorXd grad;
  LogPosterior(kind, data).value_and_grad(p.u, grad);
  return grad;
}

}  // namespace apc
