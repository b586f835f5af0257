#include "apc/grid.hpp"

#include <stdexcept>
#include <string>

namespace apc {

void GridSpec::validate_shape() const {
  if (I < 2) throw std::invalid_argument("GridSpec: I must be >= 2, got " + std::to_string(I));
  if (J < 2) throw std::invalid_argument("GridSpec: J must be >= 2, got " + std::to_string(J));
  if (T < 1) throw std::invalid_argument("GridSpec: T must be >= 1, got " + std::to_string(T));
}

void GridSpec::validate_generation() const {
  validate_shape();
  if (!(gamma > 0.0))
    throw std::invalid_argument("GridSpec: gamma must be > 0 to generate data");
}

int cohort_index(int i, int j, const GridSpec& spec) {
  if (i < 1 || i > spec.I)
    throw std::invalid_argument("cohort_index: i out of range: " + std::to_string(i));
  if (j < 1 || j > spec.J)
    throw std::invalid_argument("cohort_index: j out of range: " + std::to_string(j));
  return j - i + spec.I;
}

Eigen::VectorXd centering_offsets(int count) {
  if (count < 1) throw std::invalid_argument("centering_offsets: count must be >= 1");
  Eigen::VectorXd v(count);
  const double mid = 0.5 * (count + 1);
  for (int n = 1; n <= count; ++n) v[n - 1] = n - mid;
  return v;
}

CenteringIndexes centering_indexes(const GridSpec& spec) {
  spec.validate_shape();
  return {centering_offsets(spec.I), centering_offsets(spec.J),
          centering_offsets(spec.K())};
}

double index_weight_sum(int count) {
  if (count < 1) throw std::invalid_argument("index_weight_sum: count must be >= 1");
  const double n = count;
  return n * (n + 1.0) * (n - 1.0) / 12.0;
}

double weight_gap(int I, int J) {
  if (I < 2 || J < 2) throw std::invalid_argument("weight_gap: I and J must be >= 2");
  const double K = I + J - 1;
  return (K - 1.0) * (2.0 * J + I) * (I - 1.0) /
         (static_cast<double>(J) * (J + 1.0) * (J - 1.0));
}

}  // namespace apc
