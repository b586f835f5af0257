#pragma once

// Dense design matrix for the factor blocks, plus the sufficient statistics
// the fitting code actually runs on (cell counts/means and Gram blocks), so
// likelihood work is O(cells) instead of O(rows).

#include <Eigen/Core>

#include "apc/datagen.hpp"
#include "apc/grid.hpp"

namespace apc {

// Rows follow the dataset; columns are indicator blocks
// [age (I) | period (J) | cohort (K)], so row (i,j,k) has ones at columns
// i-1, I+j-1, I+J+k-1.  The intercept is not a column.
struct DesignMatrix {
  GridSpec spec;
  Eigen::MatrixXd X;  // rows() x levels(), entries 0/1

  int age_col(int i) const { return i - 1; }
  int period_col(int j) const { return spec.I + j - 1; }
  int cohort_col(int k) const { return spec.I + spec.J + k - 1; }
};

DesignMatrix build_design(const Dataset& data);

// I x J matrix of per-cell response means.
Eigen::MatrixXd cell_means(const Dataset& data);

// Everything likelihood-shaped work needs, computed in one pass over rows.
// Cell means carry the between-cell information; ss_within is the residual
// sum of squares about cell means.
struct SuffStats {
  GridSpec spec;
  Eigen::MatrixXd cell_mean;   // I x J
  Eigen::MatrixXd cell_count;  // I x J (integer-valued)
  double ss_within = 0.0;      // sum over rows of (y - cell mean)^2
  double sum_y = 0.0;
  double sum_yy = 0.0;
  long n = 0;

  // Level-indexed pieces for the marginal (integrated-effects) computations:
  // Gram matrix X'X, X'y and column counts, all exact in doubles because the
  // entries are integer counts and sums.
  Eigen::MatrixXd xtx;         // levels x levels
  Eigen::VectorXd xty;         // levels
  Eigen::VectorXd level_count; // levels, = diagonal of xtx
};

SuffStats build_suff_stats(const Dataset& data);

// Residual sum of squares at the given effects, via the cell decomposition
// ss_within + sum_cells count * (cell mean - mu)^2; avoids the catastrophic
// cancellation a direct y'y - 2 b'X'y + ... expansion would hit when
// residuals are tiny.
double residual_ss(const SuffStats& stats, const EffectSet& effects);

}  // namespace apc
