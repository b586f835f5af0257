#pragma once

// Artificial effect construction and dataset generation.  Effects combine a
// linear trend over the centered index with an alternating-sign nonlinear
// term; sign patterns over the three factors enumerate the simulation cases.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apc/grid.hpp"

namespace apc {

struct CaseSpec {
  int sign_age = 0;     // -1, 0, +1
  int sign_period = 0;  // -1, 0, +1
  int sign_cohort = 0;  // -1, 0, +1
  double slope_mag = 0.1;
  double nl_mag = 0.05;

  std::string label() const;  // e.g. "+0-"
  void validate() const;      // signs in {-1,0,1}, not all zero, mags >= 0
};

// The 13 canonical sign patterns, in fixed order.  Together with their
// negations they cover every nonzero pattern; negations are redundant because
// flipping all signs mirrors the fit.
std::vector<CaseSpec> enumerate_cases(double slope_mag = 0.1,
                                      double nl_mag = 0.05);

// Case by 1-based position in the canonical order.
CaseSpec case_by_id(int case_id, double slope_mag = 0.1, double nl_mag = 0.05);

// One full set of effects (true or estimated): intercept plus the three
// factor blocks.
struct EffectSet {
  double b0 = 0.0;
  Eigen::VectorXd age;     // length I
  Eigen::VectorXd period;  // length J
  Eigen::VectorXd cohort;  // length K

  // Sweeps each block mean into the intercept, leaving blocks sum-to-zero.
  void center();
  double max_abs_block_mean() const;
};

// True effects for a case.  Per block with count n, sign s, index v:
//   beta_n = -(s*nl/(2n)) * (cos(pi n) - 1) + s*slope * v_n + s*nl * cos(pi n_idx)
// cos at integer arguments is evaluated exactly via parity, so the leading
// correction is exactly zero for even counts and each block sums to zero
// exactly.
EffectSet artificial_effects(const CaseSpec& c, const GridSpec& spec);

struct Dataset {
  struct Row {
    int i, j, k;
    double y;
  };

  GridSpec spec;
  std::uint64_t seed = 0;
  std::string label;  // case label for generated data, "external" for imports
  std::vector<Row> rows;
};

// Replicated grid sample: for each replicate t = 1..T, cells in period-major
// order with age fastest; y = b0 + beta_A + beta_P + beta_C + gamma * e,
// e ~ N(0,1) drawn in row order from Rng(seed).  Throws on dimension
// mismatch between beta and spec.
Dataset generate_dataset(const EffectSet& beta, const GridSpec& spec,
                         std::uint64_t seed);

// CSV with header "i,j,k,y"; y printed with 17 significant digits so the
// round trip is value-exact and reruns are byte-identical.
void write_csv(const Dataset& data, std::ostream& os);
void write_csv_file(const Dataset& data, const std::string& path);

// Strict import: exact header, four fields per row, k must equal j - i + I,
// every cell present the same number of times.  I and J are inferred from
// the largest indexes; gamma is unknown for imported data and left NaN.
// Errors name the offending row.  Throws std::invalid_argument on malformed
// content, std::runtime_error on I/O failure.
Dataset read_csv(std::istream& is);
Dataset read_csv_file(const std::string& path);

}  // namespace apc
