#pragma once

// Age-period grid bookkeeping: cohort indexing, centered index vectors, and
// the index weight sums that decide how strongly a regularizer penalizes each
// factor's linear component.

#include <Eigen/Core>

namespace apc {

struct GridSpec {
  int I = 10;          // age groups
  int J = 10;          // periods
  int T = 10;          // replicates per cell
  double gamma = 0.1;  // noise standard deviation, used only when generating

  int K() const { return I + J - 1; }  // cohorts, fixed by the grid shape
  int cells() const { return I * J; }
  int rows() const { return I * J * T; }
  int levels() const { return I + J + K(); }

  // Shape checks (I, J >= 2; T >= 1); throws std::invalid_argument.
  void validate_shape() const;
  // Shape checks plus gamma > 0; required before generating data.
  void validate_generation() const;
};

// k = j - i + I; diagonals of the grid, 1-based like i and j.
int cohort_index(int i, int j, const GridSpec& spec);

// v_n = n - (count+1)/2 for n = 1..count; sums to zero by construction.
Eigen::VectorXd centering_offsets(int count);

struct CenteringIndexes {
  Eigen::VectorXd age;     // v^A, length I
  Eigen::VectorXd period;  // v^P, length J
  Eigen::VectorXd cohort;  // v^C, length K
};

// The three centered index vectors.  Cell identity: for every (i, j),
// age[i-1] - period[j-1] + cohort[k-1] == 0, which is the direction the
// likelihood cannot see.
CenteringIndexes centering_indexes(const GridSpec& spec);

// sum of v_n^2 = count*(count+1)*(count-1)/12.
double index_weight_sum(int count);

// Excess of the level-weight ratio sum(v_C^2)/sum(v_P^2) over the
// difference-weight ratio (K-1)/(J-1), in closed form
// (K-1)*(2J+I)*(I-1) / (J*(J+1)*(J-1)).  Strictly positive for I, J >= 2:
// level penalties tax the cohort linear component harder than difference
// penalties do.
double weight_gap(int I, int J);

}  // namespace apc
