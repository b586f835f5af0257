#include "apc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "apc/design.hpp"
#include "apc/rng.hpp"

namespace apc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ----------------------------------------------------------------- optimizer

using ObjFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct OptimResult {
  Eigen::VectorXd x;
  double f = kInf;
  int iters = 0;
  bool converged = false;
};

struct LsPoint {
  double a = 0.0;
  double f = kInf;
  Eigen::VectorXd x, g;
  bool ok = false;
};

// Strong-Wolfe line search (c1 = 1e-4, c2 = 0.9): bracketing expansion then
// bisection zoom.  Non-finite trial values are treated as overshoots.
LsPoint wolfe_search(const ObjFn& fg, const Eigen::VectorXd& x0, double f0,
                     const Eigen::VectorXd& g0, const Eigen::VectorXd& d) {
  constexpr double c1 = 1e-4, c2 = 0.9;
  const double dphi0 = g0.dot(d);
  LsPoint out;
  if (!(dphi0 < 0.0)) return out;

  double ft = kInf;
  Eigen::VectorXd xt, gt;
  const auto eval = [&](double a) {
    xt = x0 + a * d;
    ft = fg(xt, gt);
  };

  double alo = 0.0, flo = f0, ahi = -1.0;
  bool bracketed = false;
  double aprev = 0.0, fprev = f0, a = 1.0;
  for (int i = 0; i < 20; ++i) {
    eval(a);
    if (!std::isfinite(ft) || ft > f0 + c1 * a * dphi0 ||
        (i > 0 && ft >= fprev)) {
      alo = aprev;
      flo = fprev;
      ahi = a;
      bracketed = true;
      break;
    }
    const double dp = gt.dot(d);
    if (std::abs(dp) <= -c2 * dphi0) {
      out = {a, ft, xt, gt, true};
      return out;
    }
    if (dp >= 0.0) {
      alo = a;
      flo = ft;
      ahi = aprev;
      bracketed = true;
      break;
    }
    aprev = a;
    fprev = ft;
    a = std::min(2.0 * a, 1e6);
  }
  if (!bracketed) return out;

  for (int i = 0; i < 40; ++i) {
    const double am = 0.5 * (alo + ahi);
    eval(am);
    if (!std::isfinite(ft) || ft > f0 + c1 * am * dphi0 || ft >= flo) {
      ahi = am;
    } else {
      const double dp = gt.dot(d);
      if (std::abs(dp) <= -c2 * dphi0) {
        out = {am, ft, xt, gt, true};
        return out;
      }
      if (dp * (ahi - alo) >= 0.0) ahi = alo;
      alo = am;
      flo = ft;
    }
    if (std::abs(ahi - alo) <= 1e-12 * std::max(1.0, std::abs(alo))) break;
  }
  if (alo > 0.0 && flo < f0 + c1 * alo * dphi0) {
    // Sufficient decrease without certified curvature; take it rather than
    // stall.  The caller's curvature guard decides whether to store the pair.
    eval(alo);
    out = {alo, ft, xt, gt, true};
  }
  return out;
}

OptimResult lbfgs_minimize(const ObjFn& fg, Eigen::VectorXd x, int max_iters,
                           double tol) {
  constexpr int kMemory = 8;
  OptimResult res;
  Eigen::VectorXd g;
  double f = fg(x, g);
  if (!std::isfinite(f)) {
    res.x = std::move(x);
    res.f = f;
    return res;
  }
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;  // (s, y)
  std::deque<double> rho;
  bool just_reset = false;
  int it = 0;
  for (; it < max_iters; ++it) {
    const double gn = g.norm();
    if (gn <= tol * (1.0 + std::abs(f))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd d;
    if (mem.empty()) {
      d = -g / std::max(1.0, gn);
    } else {
      Eigen::VectorXd q = g;
      const int k = static_cast<int>(mem.size());
      std::vector<double> alpha(k);
      for (int i = k - 1; i >= 0; --i) {
        alpha[i] = rho[i] * mem[i].first.dot(q);
        q -= alpha[i] * mem[i].second;
      }
      q *= mem.back().first.dot(mem.back().second) /
           mem.back().second.squaredNorm();
      for (int i = 0; i < k; ++i) {
        const double beta = rho[i] * mem[i].second.dot(q);
        q += (alpha[i] - beta) * mem[i].first;
      }
      d = -q;
    }
    if (g.dot(d) >= 0.0) {
      mem.clear();
      rho.clear();
      d = -g / std::max(1.0, gn);
    }
    const LsPoint st = wolfe_search(fg, x, f, g, d);
    if (!st.ok) {
      if (!mem.empty() && !just_reset) {
        mem.clear();
        rho.clear();
        just_reset = true;
        --it;
        continue;
      }
      break;
    }
    just_reset = false;
    Eigen::VectorXd s = st.x - x;
    Eigen::VectorXd y = st.g - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      mem.emplace_back(std::move(s), std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(mem.size()) > kMemory) {
        mem.pop_front();
        rho.pop_front();
      }
    }
    x = st.x;
    f = st.f;
    g = st.g;
  }
  res.x = std::move(x);
  res.f = f;
  res.iters = it;
  if (!res.converged) res.converged = g.norm() <= tol * (1.0 + std::abs(f));
  return res;
}

// --------------------------------------------------------- marginal posterior

// Columns of the map from standardized first differences to sum-to-zero
// levels, one factor block.
Eigen::MatrixXd rw_basis(int n) {
  Eigen::MatrixXd B(n, n - 1);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n - 1);
  for (int j = 0; j < n - 1; ++j) {
    d[j] = 1.0;
    B.col(j) = rw_levels(d);
    d[j] = 0.0;
  }
  return B;
}

// Log marginal posterior of theta = [b0, log sigma, eta...] with the Gaussian
// effect blocks integrated out.  With M the design columns for the scaled
// z coordinates, the Gaussian integral reduces to the m x m system
// S = sigma^2 I + M'M; evaluation works on S' = S / sigma^2 whose pivots stay
// near or above one, and recovers the quadratic form through the identity
// r' Cov^-1 r = |r - M mu|^2 / sigma^2 + |mu|^2 at mu = S^-1 M' r, which is
// free of large-term cancellation.
struct Marginal {
  ModelKind kind;
  GridSpec spec;
  const SuffStats* st = nullptr;
  int m = 0;
  int hyper_count = 0;
  Eigen::MatrixXd C;           // B' X'X B
  Eigen::VectorXd w;           // B' X'y
  Eigen::VectorXd vcnt;        // B' column counts
  std::vector<int> group;      // factor index per z coordinate
  double n = 0.0, ybar = 0.0, sdy = 0.0;

  int dim() const { return 2 + hyper_count; }
  double eval(const Eigen::VectorXd& th, EffectSet* point = nullptr) const;
};

Marginal make_marginal(ModelKind kind, const SuffStats& st) {
  Marginal mg;
  mg.kind = kind;
  mg.spec = st.spec;
  mg.st = &st;
  const int I = st.spec.I, J = st.spec.J, K = st.spec.K();
  const int L = st.spec.levels();
  mg.hyper_count = kind == ModelKind::Ridge ? 1 : 3;
  mg.n = static_cast<double>(st.n);
  mg.ybar = st.sum_y / mg.n;
  mg.sdy = std::sqrt(std::max(st.sum_yy / mg.n - mg.ybar * mg.ybar, 1e-12));
  if (kind == ModelKind::RandomWalk) {
    mg.m = L - 3;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(L, mg.m);
    int lev = 0, col = 0, f = 0;
    for (int nb : {I, J, K}) {
      B.block(lev, col, nb, nb - 1) = rw_basis(nb);
      mg.group.insert(mg.group.end(), nb - 1, f++);
      lev += nb;
      col += nb - 1;
    }
    mg.C = B.transpose() * st.xtx * B;
    mg.w = B.transpose() * st.xty;
    mg.vcnt = B.transpose() * st.level_count;
  } else {
    mg.m = L;
    mg.C = st.xtx;
    mg.w = st.xty;
    mg.vcnt = st.level_count;
    int f = 0;
    for (int nb : {I, J, K}) mg.group.insert(mg.group.end(), nb, f++);
  }
  return mg;
}

double Marginal::eval(const Eigen::VectorXd& th, EffectSet* point) const {
  if (th.cwiseAbs().maxCoeff() > 40.0) return -kInf;
  const double b0 = th[0], lsig = th[1];
  const double sig2 = std::exp(2.0 * lsig);
  double sc[3];
  switch (kind) {
    case ModelKind::RandomEffects:
      for (int f = 0; f < 3; ++f) sc[f] = kScaleFloor + std::exp(th[2 + f]);
      break;
    case ModelKind::Ridge:
      sc[0] = sc[1] = sc[2] = std::exp(th[2]);
      break;
    case ModelKind::RandomWalk:
      for (int f = 0; f < 3; ++f) sc[f] = std::exp(th[2 + f]);
      break;
  }
  Eigen::VectorXd sz(m);
  for (int i = 0; i < m; ++i) sz[i] = sc[group[i]];

  Eigen::MatrixXd S(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double v = sz[i] * sz[j] * C(i, j) / sig2;
      S(i, j) = v + (i == j ? 1.0 : 0.0);
      S(j, i) = S(i, j);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) return -kInf;
  const Eigen::VectorXd a = sz.cwiseProduct(w - b0 * vcnt);
  const Eigen::VectorXd muz = llt.solve(a) / sig2;
  if (!muz.allFinite()) return -kInf;
  const Eigen::VectorXd bz = sz.cwiseProduct(muz);

  EffectSet e;
  e.b0 = b0;
  const int I = spec.I, J = spec.J, K = spec.K();
  if (kind == ModelKind::RandomWalk) {
    e.age = rw_levels(bz.segment(0, I - 1));
    e.period = rw_levels(bz.segment(I - 1, J - 1));
    e.cohort = rw_levels(bz.segment(I + J - 2, K - 1));
  } else {
    e.age = bz.segment(0, I);
    e.period = bz.segment(I, J);
    e.cohort = bz.segment(I + J, K);
  }
  const double rss = residual_ss(*st, e);
  const double lndet =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double lml =
      -0.5 * (2.0 * n * lsig + lndet + rss / sig2 + muz.squaredNorm());
  if (point) *point = e;
  return lml + lsig + th.segment(2, hyper_count).sum();
}

PriorScales scales_from_theta(ModelKind kind, const Eigen::VectorXd& th) {
  switch (kind) {
    case ModelKind::RandomEffects:
      return {kScaleFloor + std::exp(th[2]), kScaleFloor + std::exp(th[3]),
              kScaleFloor + std::exp(th[4])};
    case ModelKind::Ridge:
      return PriorScales::shared(std::exp(th[2]));
    case ModelKind::RandomWalk:
      return {std::exp(th[2]), std::exp(th[3]), std::exp(th[4])};
  }
  throw std::logic_error("scales_from_theta: bad kind");
}

// Unconstrained vector whose transform reproduces the given centered point.
Eigen::VectorXd pack_point(const ParamLayout& lay, const EffectSet& e,
                           double sigma, const PriorScales& sc) {
  const auto safe_log = [](double v) { return std::log(std::max(v, 1e-12)); };
  const auto safe_div = [](double v) { return std::max(v, 1e-12); };
  Eigen::VectorXd u = Eigen::VectorXd::Zero(lay.dim);
  if (lay.kind == ModelKind::RandomWalk) {
    u.segment(0, lay.na) = rw_diffs(e.age) / safe_div(sc.age);
    u.segment(lay.na, lay.np) = rw_diffs(e.period) / safe_div(sc.period);
    u.segment(lay.na + lay.np, lay.nc) = rw_diffs(e.cohort) / safe_div(sc.cohort);
  } else {
    u.segment(0, lay.na) = e.age / safe_div(sc.age);
    u.segment(lay.na, lay.np) = e.period / safe_div(sc.period);
    u.segment(lay.na + lay.np, lay.nc) = e.cohort / safe_div(sc.cohort);
  }
  u[lay.b0_at] = e.b0;
  u[lay.lsigma_at] = safe_log(sigma);
  switch (lay.kind) {
    case ModelKind::RandomEffects:
      u[lay.hyper_at + 0] = safe_log(sc.age - kScaleFloor);
      u[lay.hyper_at + 1] = safe_log(sc.period - kScaleFloor);
      u[lay.hyper_at + 2] = safe_log(sc.cohort - kScaleFloor);
      break;
    case ModelKind::Ridge:
      u[lay.hyper_at] = safe_log(sc.age);
      break;
    case ModelKind::RandomWalk:
      u[lay.hyper_at + 0] = safe_log(sc.age);
      u[lay.hyper_at + 1] = safe_log(sc.period);
      u[lay.hyper_at + 2] = safe_log(sc.cohort);
      break;
  }
  return u;
}

// ------------------------------------------------------------------- sampler

constexpr double kTargetAccept = 0.8;
constexpr double kDivergenceGap = 1000.0;
constexpr double kTrajectoryTime = 1.57;
constexpr int kMaxLeapfrog = 128;
constexpr int kInitLeapfrog = 8;

struct DualAverage {
  double mu = 0.0, leps = 0.0, leps_bar = 0.0, hbar = 0.0;
  long m = 0;

  void reset(double eps0) {
    mu = std::log(10.0 * eps0);
    leps = std::log(eps0);
    leps_bar = std::log(eps0);
    hbar = 0.0;
    m = 0;
  }
  void update(double accept) {
    ++m;
    const double frac = 1.0 / (static_cast<double>(m) + 10.0);
    hbar = (1.0 - frac) * hbar + frac * (kTargetAccept - accept);
    leps = mu - std::sqrt(static_cast<double>(m)) / 0.05 * hbar;
    const double w = std::pow(static_cast<double>(m), -0.75);
    leps_bar = w * leps + (1.0 - w) * leps_bar;
  }
  double eps() const { return std::exp(leps); }
  double eps_avg() const { return std::exp(leps_bar); }
};

struct RunningVar {
  long n = 0;
  Eigen::VectorXd mean, m2;

  explicit RunningVar(int d)
      : mean(Eigen::VectorXd::Zero(d)), m2(Eigen::VectorXd::Zero(d)) {}
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd d1 = x - mean;
    mean += d1 / static_cast<double>(n);
    m2 += d1.cwiseProduct(x - mean);
  }
  void reset() {
    n = 0;
    mean.setZero();
    m2.setZero();
  }
  // Sample variance shrunk toward a small constant, as a diagonal metric.
  Eigen::VectorXd regularized() const {
    const double dn = static_cast<double>(n);
    Eigen::VectorXd v = m2 / std::max(dn - 1.0, 1.0);
    const double wgt = dn / (dn + 5.0);
    return (wgt * v.array() + (1.0 - wgt) * 1e-3).matrix();
  }
};

// Warmup phases: step-size-only buffer, doubling variance windows, step-size
// tail.  The final window is extended so it always ends at term_start.
struct Schedule {
  int init_end = 0;
  int term_start = 0;
  std::vector<int> window_ends;
};

Schedule make_schedule(int warmup) {
  Schedule s;
  if (warmup < 20) {
    s.init_end = warmup;
    s.term_start = warmup;
    return s;
  }
  s.init_end = std::min(75, warmup / 4);
  s.term_start = warmup - std::min(50, warmup / 10);
  int pos = s.init_end, width = 25;
  while (pos < s.term_start) {
    int end = pos + width;
    if (pos + 3 * width >= s.term_start) end = s.term_start;
    s.window_ends.push_back(end);
    pos = end;
    width *= 2;
  }
  return s;
}

struct TrajState {
  Eigen::VectorXd q, g;
  double f = -kInf;
  double kin = kInf;
  bool ok = false;
};

TrajState leapfrog(const LogPosterior& post, const Eigen::VectorXd& q0,
                   const Eigen::VectorXd& p0, double f0,
                   const Eigen::VectorXd& g0, double eps, int steps,
                   const Eigen::VectorXd& inv_mass) {
  TrajState t;
  t.q = q0;
  t.g = g0;
  t.f = f0;
  Eigen::VectorXd p = p0 + 0.5 * eps * t.g;
  for (int l = 0; l < steps; ++l) {
    t.q += eps * inv_mass.cwiseProduct(p);
    t.f = post.value_and_grad(t.q, t.g);
    if (!std::isfinite(t.f)) return t;
    p += (l + 1 < steps ? eps : 0.5 * eps) * t.g;
  }
  t.kin = 0.5 * p.cwiseProduct(p).dot(inv_mass);
  t.ok = true;
  return t;
}

double find_reasonable_eps(const LogPosterior& post, const Eigen::VectorXd& q,
                           double f, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& inv_mass, Rng& rng) {
  Eigen::VectorXd p(q.size());
  for (int i = 0; i < p.size(); ++i)
    p[i] = rng.normal() / std::sqrt(inv_mass[i]);
  const double h0 = -f + 0.5 * p.cwiseProduct(p).dot(inv_mass);
  const auto accept_prob = [&](double eps) {
    const TrajState t = leapfrog(post, q, p, f, g, eps, 1, inv_mass);
    if (!t.ok) return 0.0;
    const double dh = (-t.f + t.kin) - h0;
    return std::isfinite(dh) ? std::min(1.0, std::exp(-dh)) : 0.0;
  };
  double eps = 1.0;
  const bool grow = accept_prob(eps) > 0.5;
  for (int i = 0; i < 50; ++i) {
    eps *= grow ? 2.0 : 0.5;
    const double a = accept_prob(eps);
    if (grow ? a <= 0.5 : a > 0.5) break;
    if (eps > 1e6 || eps < 1e-8) break;
  }
  return std::clamp(eps, 1e-8, 10.0);
}

// One reported row per kept draw: intercept, centered blocks, residual scale,
// prior scales.
void extract_draw(const ParamLayout& lay, const Eigen::VectorXd& q,
                  double* out) {
  const UnconstrainedParams up{lay, q};
  EffectSet e = transform(up);
  e.center();
  int idx = 0;
  out[idx++] = e.b0;
  for (int i = 0; i < lay.I; ++i) out[idx++] = e.age[i];
  for (int j = 0; j < lay.J; ++j) out[idx++] = e.period[j];
  for (int k = 0; k < lay.K; ++k) out[idx++] = e.cohort[k];
  out[idx++] = up.sigma();
  const PriorScales sc = scales_of(up);
  out[idx++] = sc.age;
  if (lay.hyper_count == 3) {
    out[idx++] = sc.period;
    out[idx++] = sc.cohort;
  }
}

struct ChainOut {
  std::vector<double> draws;  // kept x P, row major
  int kept = 0;
  int divergences = 0;
  double mean_accept = 0.0;
  bool ok = false;
};

ChainOut run_chain(const LogPosterior& post, const Eigen::VectorXd& u_init,
                   const FitConfig& cfg, int chain, int attempt, int P) {
  const ParamLayout& lay = post.layout();
  const SuffStats& st = post.stats();
  const int dim = lay.dim;
  const double dn = static_cast<double>(st.n);
  const double ybar = st.sum_y / dn;
  const double sdy =
      std::sqrt(std::max(st.sum_yy / dn - ybar * ybar, 1e-12));
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(chain * 8 + attempt)));
  // Retry attempts get a tighter step-size cap.
  const double cap = std::ldexp(1.0, -attempt);

  ChainOut out;
  Eigen::VectorXd q(dim), g;
  double f = -kInf;
  const int nstd = lay.na + lay.np + lay.nc;
  for (int tries = 0; tries < 50 && !std::isfinite(f); ++tries) {
    if (tries == 0) {
      // Spread chains around the supplied mode, a few posterior widths per
      // coordinate.  The posterior can hold minor modes across the gauge
      // direction, so wider dispersion would not just slow adaptation: the
      // first trajectories respond to a large likelihood misfit by crushing
      // the scales, and chains rebuild into whichever basin is nearest
      // instead of probing the one the point estimate reports.
      q = u_init;
      for (int i = 0; i < nstd; ++i) q[i] += 0.05 * rng.normal();
      q[lay.b0_at] += 0.02 * rng.normal();
      q[lay.lsigma_at] += 0.05 * rng.normal();
      for (int h = 0; h < lay.hyper_count; ++h)
        q[lay.hyper_at + h] += 0.25 * rng.normal();
    } else {
      for (int i = 0; i < nstd; ++i) q[i] = rng.normal();
      q[lay.b0_at] = ybar + 0.5 * rng.normal();
      q[lay.lsigma_at] =
          std::log(std::max(0.5 * sdy, 1e-3)) + 0.5 * rng.normal();
      for (int h = 0; h < lay.hyper_count; ++h)
        q[lay.hyper_at + h] = std::log(0.3) + 0.7 * rng.normal();
    }
    f = post.value_and_grad(q, g);
  }
  if (!std::isfinite(f)) return out;

  Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(dim);
  DualAverage da;
  da.reset(std::min(find_reasonable_eps(post, q, f, g, inv_mass, rng), cap));
  const Schedule sched = make_schedule(cfg.warmup);
  RunningVar rv(dim);
  std::size_t widx = 0;
  double eps_final = da.eps();
  double accept_sum = 0.0;
  long post_iters = 0;

  out.draws.reserve(
      static_cast<std::size_t>((cfg.iterations - cfg.warmup + cfg.thin - 1) /
                               cfg.thin) *
      P);
  for (int it = 0; it < cfg.iterations; ++it) {
    const bool warm = it < cfg.warmup;
    const double eps = warm ? da.eps() : eps_final;
    const double jitter = rng.uniform(0.8, 1.0);
    // During the init buffer trajectories stay short: momentum refreshes
    // then bleed off the initial potential-energy surplus a little at a
    // time, where one long trajectory would convert it into a ballistic
    // flight along the soft scale coordinates and out of the start basin.
    const int max_steps =
        (warm && it < sched.init_end) ? kInitLeapfrog : kMaxLeapfrog;
    const int steps = static_cast<int>(std::clamp<long long>(
        std::llround(kTrajectoryTime / eps * jitter), 1, max_steps));
    Eigen::VectorXd p(dim);
    for (int i = 0; i < dim; ++i)
      p[i] = rng.normal() / std::sqrt(inv_mass[i]);
    const double h0 = -f + 0.5 * p.cwiseProduct(p).dot(inv_mass);
    const TrajState t = leapfrog(post, q, p, f, g, eps, steps, inv_mass);
    const double dh = t.ok ? (-t.f + t.kin) - h0 : kInf;
    const bool divergent = !std::isfinite(dh) || dh > kDivergenceGap;
    const double alpha = divergent ? 0.0 : std::min(1.0, std::exp(-dh));
    const double uu = rng.uniform();
    if (!divergent && std::log(uu) < -dh) {
      q = t.q;
      f = t.f;
      g = t.g;
    }
    if (warm) {
      da.update(alpha);
      if (it >= sched.init_end && it < sched.term_start) rv.add(q);
      if (widx < sched.window_ends.size() &&
          it + 1 == sched.window_ends[widx]) {
        if (rv.n >= 10) inv_mass = rv.regularized();
        rv.reset();
        da.reset(
            std::min(find_reasonable_eps(post, q, f, g, inv_mass, rng), cap));
        ++widx;
      }
      if (it + 1 == cfg.warmup) eps_final = std::min(da.eps_avg(), cap);
    } else {
      ++post_iters;
      accept_sum += alpha;
      if (divergent) ++out.divergences;
      if ((it - cfg.warmup) % cfg.thin == 0) {
        const std::size_t base = out.draws.size();
        out.draws.resize(base + P);
        extract_draw(lay, q, out.draws.data() + base);
        ++out.kept;
      }
    }
  }
  out.mean_accept = post_iters > 0 ? accept_sum / post_iters : 0.0;
  out.ok = out.divergences <= std::max<long>(1, post_iters / 200) &&
           out.mean_accept >= 0.5;
  return out;
}

double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + n / 2;
  std::nth_element(v.begin(), mid, v.end());
  const double hi = *mid;
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

// -------------------------------------------------------------------- public

std::string method_code(FitMethod m) {
  return m == FitMethod::Map ? "map" : "mcmc";
}

FitMethod method_from_code(const std::string& code) {
  if (code == "map") return FitMethod::Map;
  if (code == "mcmc") return FitMethod::Mcmc;
  throw std::invalid_argument("unknown fit method code: " + code);
}

void FitConfig::validate() const {
  if (chains < 1) throw std::invalid_argument("fit config: chains must be >= 1");
  if (warmup < 1) throw std::invalid_argument("fit config: warmup must be >= 1");
  if (iterations <= warmup)
    throw std::invalid_argument("fit config: iterations must exceed warmup");
  if (thin < 1) throw std::invalid_argument("fit config: thin must be >= 1");
  if (restarts < 1)
    throw std::invalid_argument("fit config: restarts must be >= 1");
  if (!(rhat_threshold > 1.0))
    throw std::invalid_argument("fit config: rhat threshold must exceed 1");
  if ((iterations - warmup + thin - 1) / thin < 4)
    throw std::invalid_argument(
        "fit config: fewer than 4 draws would be retained");
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::pair<const double*, std::size_t>> halves;
  std::size_t nh = std::numeric_limits<std::size_t>::max();
  for (const auto& ch : chains) {
    if (ch.size() < 4) continue;
    const std::size_t n2 = ch.size() / 2;
    halves.emplace_back(ch.data(), n2);
    halves.emplace_back(ch.data() + (ch.size() - n2), n2);
    nh = std::min(nh, n2);
  }
  if (halves.empty())
    throw std::invalid_argument(
        "split_rhat: need at least one chain with 4 draws");
  const std::size_t m = halves.size();
  std::vector<double> mean(m, 0.0), var(m, 0.0);
  for (std::size_t h = 0; h < m; ++h) {
    const double* x = halves[h].first;
    for (std::size_t t = 0; t < nh; ++t) mean[h] += x[t];
    mean[h] /= static_cast<double>(nh);
    for (std::size_t t = 0; t < nh; ++t) {
      const double d = x[t] - mean[h];
      var[h] += d * d;
    }
    var[h] /= static_cast<double>(nh - 1);
  }
  double wvar = 0.0;
  for (double v : var) wvar += v;
  wvar /= static_cast<double>(m);
  if (wvar <= 0.0) return kInf;
  double grand = 0.0;
  for (double mu : mean) grand += mu;
  grand /= static_cast<double>(m);
  double bvar = 0.0;  // between-half variance of means, i.e. B/n
  for (double mu : mean) bvar += (mu - grand) * (mu - grand);
  bvar /= static_cast<double>(m - 1);
  const double dn = static_cast<double>(nh);
  return std::sqrt((dn - 1.0) / dn + bvar / wvar);
}

FitResult map_fit(ModelKind kind, const Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  data.spec.validate_shape();
  if (data.rows.empty())
    throw std::invalid_argument("map_fit: dataset has no rows");
  const SuffStats st = build_suff_stats(data);
  const Marginal mg = make_marginal(kind, st);
  const int d = mg.dim();

  const auto value = [&mg](const Eigen::VectorXd& th) { return mg.eval(th); };
  // Central differences; the marginal is smooth away from the barrier.
  const ObjFn fg = [&](const Eigen::VectorXd& th, Eigen::VectorXd& grad) {
    grad = Eigen::VectorXd::Zero(d);
    const double f0 = value(th);
    if (!std::isfinite(f0)) return kInf;
    Eigen::VectorXd tp = th;
    for (int i = 0; i < d; ++i) {
      // Wide enough that roundoff in the evaluation stays well below the
      // optimizer's gradient tolerance.
      const double h = 1e-5 * (1.0 + std::abs(th[i]));
      tp[i] = th[i] + h;
      const double fp = value(tp);
      tp[i] = th[i] - h;
      const double fm = value(tp);
      tp[i] = th[i];
      grad[i] =
          std::isfinite(fp) && std::isfinite(fm) ? -(fp - fm) / (2.0 * h) : 0.0;
    }
    return -f0;
  };

  Eigen::VectorXd center(d);
  center[0] = mg.ybar;
  center[1] = std::log(std::max(mg.sdy, 1e-3));
  for (int i = 2; i < d; ++i) center[i] = std::log(0.3);

  double best_val = -kInf;
  bool best_conv = false;
  Eigen::VectorXd best_th;
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd th0 = center;
    if (r > 0)
      for (int i = 0; i < d; ++i) th0[i] += 0.5 * rng.normal();
    if (!std::isfinite(value(th0))) continue;
    const OptimResult res = lbfgs_minimize(fg, th0, 10000, 1e-8);
    const double v = -res.f;
    if (!std::isfinite(v)) continue;
    // Starts regularly land on the same optimum; among ties keep one that
    // certified the gradient tolerance.
    const double tie = 1e-9 * (1.0 + std::abs(v));
    if (v > best_val + tie || (v > best_val - tie && res.converged && !best_conv)) {
      best_val = std::max(v, best_val);
      best_th = res.x;
      best_conv = res.converged;
    }
  }
  if (!std::isfinite(best_val))
    throw std::runtime_error("map_fit: no start produced a finite optimum");

  FitResult out;
  out.kind = kind;
  out.method = FitMethod::Map;
  mg.eval(best_th, &out.point);
  out.point.center();
  out.sigma_hat = std::exp(best_th[1]);
  out.hyper_hat = scales_from_theta(kind, best_th);
  out.converged = best_conv;
  const LogPosterior post(kind, st);
  out.log_posterior_at_point = post.value(
      pack_point(post.layout(), out.point, out.sigma_hat, out.hyper_hat));
  return out;
}

FitResult mcmc_fit(ModelKind kind, const Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  data.spec.validate_shape();
  if (data.rows.empty())
    throw std::invalid_argument("mcmc_fit: dataset has no rows");
  const LogPosterior post(kind, data);
  const ParamLayout& lay = post.layout();
  const int I = lay.I, J = lay.J, K = lay.K;
  const int P = 1 + I + J + K + 1 + lay.hyper_count;

  // Chains start jittered around the marginal-map point.
  FitConfig map_cfg = cfg;
  map_cfg.restarts = std::min(cfg.restarts, 4);
  const FitResult anchor = map_fit(kind, data, map_cfg);
  const Eigen::VectorXd u_init = pack_point(lay, anchor.point,
                                            anchor.sigma_hat, anchor.hyper_hat);

  std::vector<ChainOut> chains(cfg.chains);
  bool all_ok = true;
  for (int c = 0; c < cfg.chains; ++c) {
    ChainOut co;
    for (int attempt = 0; attempt < 3 && !co.ok; ++attempt)
      co = run_chain(post, u_init, cfg, c, attempt, P);
    all_ok = all_ok && co.ok;
    chains[c] = std::move(co);
  }
  int total_kept = 0;
  for (const auto& c : chains) total_kept += c.kept;
  if (total_kept == 0)
    throw std::runtime_error("mcmc_fit: no chain produced draws");

  std::vector<std::string> names;
  names.reserve(P);
  names.emplace_back("b0");
  char buf[32];
  for (int i = 1; i <= I; ++i) {
    std::snprintf(buf, sizeof buf, "age[%d]", i);
    names.emplace_back(buf);
  }
  for (int j = 1; j <= J; ++j) {
    std::snprintf(buf, sizeof buf, "period[%d]", j);
    names.emplace_back(buf);
  }
  for (int k = 1; k <= K; ++k) {
    std::snprintf(buf, sizeof buf, "cohort[%d]", k);
    names.emplace_back(buf);
  }
  names.emplace_back("sigma");
  if (lay.hyper_count == 1) {
    names.emplace_back("lambda");
  } else {
    names.emplace_back("scale_age");
    names.emplace_back("scale_period");
    names.emplace_back("scale_cohort");
  }

  FitResult out;
  out.kind = kind;
  out.method = FitMethod::Mcmc;
  out.kept_draws = total_kept;

  double maxr = 0.0;
  std::vector<std::vector<double>> series(chains.size());
  std::vector<double> pool;
  Eigen::VectorXd med(P);
  for (int p = 0; p < P; ++p) {
    pool.clear();
    for (std::size_t c = 0; c < chains.size(); ++c) {
      const auto& ch = chains[c];
      series[c].resize(ch.kept);
      for (int t = 0; t < ch.kept; ++t) {
        series[c][t] = ch.draws[static_cast<std::size_t>(t) * P + p];
        pool.push_back(series[c][t]);
      }
    }
    const double r = split_rhat(series);
    out.rhat.emplace_back(names[p], r);
    maxr = std::max(maxr, r);
    med[p] = median_inplace(pool);
  }
  out.max_rhat = maxr;

  EffectSet e;
  e.b0 = med[0];
  e.age = med.segment(1, I);
  e.period = med.segment(1 + I, J);
  e.cohort = med.segment(1 + I + J, K);
  e.center();  // medians of centered draws are only approximately centered
  out.point = e;
  out.sigma_hat = med[1 + I + J + K];
  const int hy = 1 + I + J + K + 1;
  out.hyper_hat = lay.hyper_count == 1
                      ? PriorScales::shared(med[hy])
                      : PriorScales{med[hy], med[hy + 1], med[hy + 2]};
  out.converged = all_ok && std::isfinite(maxr) && maxr < cfg.rhat_threshold;
  out.log_posterior_at_point = post.value(
      pack_point(lay, out.point, out.sigma_hat, out.hyper_hat));
  return out;
}

FitResult fit(ModelKind kind, const Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  return cfg.method == FitMethod::Map ? map_fit(kind, data, cfg)
                                      : mcmc_fit(kind, data, cfg);
}

}  // namespace apc
