#include "apc/datagen.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "apc/rng.hpp"

namespace apc {

namespace {

// cos(pi * n) at integer n, exact.
double cos_pi(int n) { return (n % 2 == 0) ? 1.0 : -1.0; }

char sign_char(int s) { return s > 0 ? '+' : (s < 0 ? '-' : '0'); }

// One factor block: leading correction + linear trend + alternating term.
Eigen::VectorXd effect_block(int sign, double slope_mag, double nl_mag,
                             int count) {
  const double slope = sign * slope_mag;
  const double nl = sign * nl_mag;
  const Eigen::VectorXd v = centering_offsets(count);
  // Nonzero only for odd counts; it restores the block's zero sum, which the
  // alternating term breaks when it has one more -1 than +1.
  const double correction = -(nl / (2.0 * count)) * (cos_pi(count) - 1.0);
  Eigen::VectorXd b(count);
  for (int n = 1; n <= count; ++n)
    b[n - 1] = correction + slope * v[n - 1] + nl * cos_pi(n);
  return b;
}

}  // namespace

std::string CaseSpec::label() const {
  return {sign_char(sign_age), sign_char(sign_period), sign_char(sign_cohort)};
}

void CaseSpec::validate() const {
  for (int s : {sign_age, sign_period, sign_cohort})
    if (s < -1 || s > 1)
      throw std::invalid_argument("CaseSpec: signs must be -1, 0 or +1");
  if (sign_age == 0 && sign_period == 0 && sign_cohort == 0)
    throw std::invalid_argument("CaseSpec: at least one sign must be nonzero");
  if (slope_mag < 0.0 || nl_mag < 0.0)
    throw std::invalid_argument("CaseSpec: magnitudes must be >= 0");
}

std::vector<CaseSpec> enumerate_cases(double slope_mag, double nl_mag) {
  // Canonical order: the three single-factor cases, the three two-factor
  // same-sign cases, two mixed two-factor cases, one negated two-factor case,
  // then the four three-factor cases.
  static constexpr int signs[13][3] = {
      {+1, 0, 0}, {0, +1, 0}, {0, 0, +1}, {+1, +1, 0}, {+1, 0, +1},
      {0, +1, +1}, {0, +1, -1}, {-1, 0, +1}, {-1, +1, 0}, {+1, +1, -1},
      {+1, +1, +1}, {-1, +1, +1}, {+1, -1, +1}};
  std::vector<CaseSpec> cases;
  cases.reserve(13);
  for (const auto& s : signs)
    cases.push_back({s[0], s[1], s[2], slope_mag, nl_mag});
  return cases;
}

CaseSpec case_by_id(int case_id, double slope_mag, double nl_mag) {
  if (case_id < 1 || case_id > 13)
    throw std::invalid_argument("case id must be 1..13, got " +
                                std::to_string(case_id));
  return enumerate_cases(slope_mag, nl_mag)[case_id - 1];
}

void EffectSet::center() {
  for (Eigen::VectorXd* block : {&age, &period, &cohort}) {
    if (block->size() == 0) continue;
    const double m = block->mean();
    block->array() -= m;
    b0 += m;
  }
}

double EffectSet::max_abs_block_mean() const {
  double worst = 0.0;
  for (const Eigen::VectorXd* block : {&age, &period, &cohort})
    if (block->size() > 0) worst = std::max(worst, std::fabs(block->mean()));
  return worst;
}

EffectSet artificial_effects(const CaseSpec& c, const GridSpec& spec) {
  spec.validate_shape();
  c.validate();
  EffectSet e;
  e.b0 = 0.0;
  e.age = effect_block(c.sign_age, c.slope_mag, c.nl_mag, spec.I);
  e.period = effect_block(c.sign_period, c.slope_mag, c.nl_mag, spec.J);
  e.cohort = effect_block(c.sign_cohort, c.slope_mag, c.nl_mag, spec.K());
  return e;
}

Dataset generate_dataset(const EffectSet& beta, const GridSpec& spec,
                         std::uint64_t seed) {
  spec.validate_generation();
  if (beta.age.size() != spec.I || beta.period.size() != spec.J ||
      beta.cohort.size() != spec.K())
    throw std::invalid_argument(
        "generate_dataset: effect block sizes do not match the grid");

  Dataset d;
  d.spec = spec;
  d.seed = seed;
  d.rows.reserve(spec.rows());
  Rng rng(seed);
  for (int t = 1; t <= spec.T; ++t) {
    for (int j = 1; j <= spec.J; ++j) {
      for (int i = 1; i <= spec.I; ++i) {
        const int k = cohort_index(i, j, spec);
        const double mu = beta.b0 + beta.age[i - 1] + beta.period[j - 1] +
                          beta.cohort[k - 1];
        d.rows.push_back({i, j, k, mu + spec.gamma * rng.normal()});
      }
    }
  }
  return d;
}

void write_csv(const Dataset& data, std::ostream& os) {
  os << "i,j,k,y\n";
  char buf[64];
  for (const auto& r : data.rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g\n", r.i, r.j, r.k, r.y);
    os << buf;
  }
}

void write_csv_file(const Dataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_csv(data, os);
  if (!os.good()) throw std::runtime_error("write failed: " + path);
}

Dataset read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::invalid_argument("csv: empty input, expected header i,j,k,y");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "i,j,k,y")
    throw std::invalid_argument("csv: bad header, expected i,j,k,y");

  Dataset d;
  d.label = "external";
  int line_no = 1;
  int max_i = 0, max_j = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "csv row " + std::to_string(line_no);
    Dataset::Row r{};
    char trailing = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%lf%c", &r.i, &r.j, &r.k, &r.y,
                    &trailing) != 4)
      throw std::invalid_argument(where + ": expected i,j,k,y fields, got '" +
                                  line + "'");
    if (r.i < 1 || r.j < 1)
      throw std::invalid_argument(where + ": indexes must be >= 1");
    max_i = std::max(max_i, r.i);
    max_j = std::max(max_j, r.j);
    d.rows.push_back(r);
  }
  if (d.rows.empty()) throw std::invalid_argument("csv: no data rows");

  // Grid shape is whatever the indexes span; cohort ids must agree with it.
  d.spec.I = max_i;
  d.spec.J = max_j;
  d.spec.gamma = std::numeric_limits<double>::quiet_NaN();
  std::map<std::pair<int, int>, int> counts;
  for (size_t n = 0; n < d.rows.size(); ++n) {
    const auto& r = d.rows[n];
    if (r.k != r.j - r.i + d.spec.I)
      throw std::invalid_argument("csv row " + std::to_string(n + 2) +
                                  ": k=" + std::to_string(r.k) +
                                  " does not equal j-i+I=" +
                                  std::to_string(r.j - r.i + d.spec.I));
    ++counts[{r.i, r.j}];
  }
  if (counts.size() != static_cast<size_t>(d.spec.I) * d.spec.J)
    throw std::invalid_argument(
        "csv: incomplete grid, " + std::to_string(counts.size()) + " of " +
        std::to_string(d.spec.I * d.spec.J) + " cells present (missing cell)");
  const int T = counts.begin()->second;
  for (const auto& [cell, n] : counts)
    if (n != T)
      throw std::invalid_argument(
          "csv: unbalanced cell (" + std::to_string(cell.first) + "," +
          std::to_string(cell.second) + "): " + std::to_string(n) +
          " rows, expected " + std::to_string(T));
  d.spec.T = T;
  d.spec.validate_shape();
  return d;
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return read_csv(is);
}

}  // namespace apc
