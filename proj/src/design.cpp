#include "apc/design.hpp"

#include <stdexcept>

namespace apc {

DesignMatrix build_design(const Dataset& data) {
  data.spec.validate_shape();
  DesignMatrix dm;
  dm.spec = data.spec;
  dm.X = Eigen::MatrixXd::Zero(static_cast<int>(data.rows.size()),
                               data.spec.levels());
  for (int r = 0; r < static_cast<int>(data.rows.size()); ++r) {
    const auto& row = data.rows[r];
    dm.X(r, dm.age_col(row.i)) = 1.0;
    dm.X(r, dm.period_col(row.j)) = 1.0;
    dm.X(r, dm.cohort_col(row.k)) = 1.0;
  }
  return dm;
}

Eigen::MatrixXd cell_means(const Dataset& data) {
  data.spec.validate_shape();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(data.spec.I, data.spec.J);
  Eigen::MatrixXd count = Eigen::MatrixXd::Zero(data.spec.I, data.spec.J);
  for (const auto& r : data.rows) {
    sum(r.i - 1, r.j - 1) += r.y;
    count(r.i - 1, r.j - 1) += 1.0;
  }
  for (int i = 0; i < data.spec.I; ++i)
    for (int j = 0; j < data.spec.J; ++j)
      if (count(i, j) > 0.0) sum(i, j) /= count(i, j);
  return sum;
}

SuffStats build_suff_stats(const Dataset& data) {
  data.spec.validate_shape();
  const GridSpec& g = data.spec;
  SuffStats st;
  st.spec = g;
  st.cell_mean = Eigen::MatrixXd::Zero(g.I, g.J);
  st.cell_count = Eigen::MatrixXd::Zero(g.I, g.J);
  st.xtx = Eigen::MatrixXd::Zero(g.levels(), g.levels());
  st.xty = Eigen::VectorXd::Zero(g.levels());
  st.level_count = Eigen::VectorXd::Zero(g.levels());
  st.n = static_cast<long>(data.rows.size());

  const int pj0 = g.I;          // first period column
  const int ck0 = g.I + g.J;    // first cohort column
  for (const auto& r : data.rows) {
    if (r.i < 1 || r.i > g.I || r.j < 1 || r.j > g.J ||
        r.k != r.j - r.i + g.I)
      throw std::invalid_argument("build_suff_stats: row indexes out of range");
    st.cell_mean(r.i - 1, r.j - 1) += r.y;
    st.cell_count(r.i - 1, r.j - 1) += 1.0;
    st.sum_y += r.y;
    st.sum_yy += r.y * r.y;
    const int a = r.i - 1, p = pj0 + r.j - 1, c = ck0 + r.k - 1;
    st.xty[a] += r.y;
    st.xty[p] += r.y;
    st.xty[c] += r.y;
  }
  for (int i = 0; i < g.I; ++i)
    for (int j = 0; j < g.J; ++j)
      if (st.cell_count(i, j) > 0.0) st.cell_mean(i, j) /= st.cell_count(i, j);

  // Within-cell scatter needs the means, so a second pass.
  for (const auto& r : data.rows) {
    const double e = r.y - st.cell_mean(r.i - 1, r.j - 1);
    st.ss_within += e * e;
  }

  // Gram matrix from cell counts; each cell contributes its count to the
  // three diagonal entries and the three symmetric cross pairs.
  for (int i = 1; i <= g.I; ++i) {
    for (int j = 1; j <= g.J; ++j) {
      const double c = st.cell_count(i - 1, j - 1);
      if (c == 0.0) continue;
      const int k = j - i + g.I;
      const int ai = i - 1, pj = pj0 + j - 1, ck = ck0 + k - 1;
      st.xtx(ai, ai) += c;
      st.xtx(pj, pj) += c;
      st.xtx(ck, ck) += c;
      st.xtx(ai, pj) += c;
      st.xtx(pj, ai) += c;
      st.xtx(ai, ck) += c;
      st.xtx(ck, ai) += c;
      st.xtx(pj, ck) += c;
      st.xtx(ck, pj) += c;
    }
  }
  st.level_count = st.xtx.diagonal();
  return st;
}

double residual_ss(const SuffStats& stats, const EffectSet& effects) {
  const GridSpec& g = stats.spec;
  if (effects.age.size() != g.I || effects.period.size() != g.J ||
      effects.cohort.size() != g.K())
    throw std::invalid_argument("residual_ss: effect sizes do not match grid");
  double rss = stats.ss_within;
  for (int i = 1; i <= g.I; ++i) {
    for (int j = 1; j <= g.J; ++j) {
      const double cnt = stats.cell_count(i - 1, j - 1);
      if (cnt == 0.0) continue;
      const int k = j - i + g.I;
      const double mu = effects.b0 + effects.age[i - 1] +
                        effects.period[j - 1] + effects.cohort[k - 1];
      const double d = stats.cell_mean(i - 1, j - 1) - mu;
      rss += cnt * d * d;
    }
  }
  return rss;
}

}  // namespace apc
