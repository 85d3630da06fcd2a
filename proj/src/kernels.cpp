#include "framr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <omp.h>

namespace framr::kernels {

void set_threads(int n) {
  if (n >= 1) omp_set_num_threads(n);
}

int max_threads() { return omp_get_max_threads(); }

namespace {

void check_rows(const Eigen::MatrixXd& x, Eigen::Index n) {
  if (x.rows() != n) throw std::invalid_argument("kernel: row count mismatch");
}

std::ptrdiff_t block_count(Eigen::Index n) { return (n + kRowBlock - 1) / kRowBlock; }

// Lower triangle of X[r0:r1]^T diag(w) X[r0:r1], accumulated into g.
void gram_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, Eigen::Index r0, Eigen::Index r1,
               Eigen::MatrixXd& g) {
  const Eigen::Index p = x.cols();
  for (Eigen::Index a = 0; a < p; ++a) {
    const double* xa = x.col(a).data();
    for (Eigen::Index b = 0; b <= a; ++b) {
      const double* xb = x.col(b).data();
      double s = 0;
      for (Eigen::Index i = r0; i < r1; ++i) s += w[i] * xa[i] * xb[i];
      g(a, b) += s;
    }
  }
}

void symmetrize(Eigen::MatrixXd& g) {
  for (Eigen::Index a = 0; a < g.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < g.cols(); ++b) g(a, b) = g(b, a);
  }
}

double row_dot(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta, Eigen::Index i) {
  double s = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) s += x(i, j) * beta[j];
  return s;
}

// Nearest k entries of ascending `d` to value v, by expanding from the
// insertion point one run of equal values at a time. Ties go to the lower
// index, matching the brute-force ordering exactly.
void nearest_sorted(const std::vector<double>& d, double v, int k, std::uint32_t* out) {
  const auto n = static_cast<std::ptrdiff_t>(d.size());
  std::ptrdiff_t hi = std::lower_bound(d.begin(), d.end(), v) - d.begin();
  std::ptrdiff_t lo = hi - 1;
  int taken = 0;
  while (taken < k) {
    const bool take_lo = lo >= 0 && (hi >= n || v - d[lo] <= d[hi] - v);
    std::ptrdiff_t first, last;
    if (take_lo) {
      first = last = lo;
      while (first > 0 && d[first - 1] == d[lo]) --first;
      lo = first - 1;
    } else {
      first = last = hi;
      while (last + 1 < n && d[last + 1] == d[hi]) ++last;
      hi = last + 1;
    }
    for (std::ptrdiff_t i = first; i <= last && taken < k; ++i) out[taken++] = static_cast<std::uint32_t>(i);
  }
}

}  // namespace

namespace serial {

Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  check_rows(x, w.size());
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index a = 0; a < p; ++a) {
      for (Eigen::Index b = 0; b <= a; ++b) g(a, b) += w[i] * x(i, a) * x(i, b);
    }
  }
  symmetrize(g);
  return g;
}

Eigen::VectorXd cross_product(const Eigen::MatrixXd& x, const Eigen::VectorXd& v) {
  check_rows(x, v.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out[j] += x(i, j) * v[i];
  }
  return out;
}

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta) {
  if (x.cols() != beta.size()) throw std::invalid_argument("kernel: coefficient length mismatch");
  Eigen::VectorXd eta(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) eta[i] = row_dot(x, beta, i);
  return eta;
}

std::vector<std::uint32_t> nearest_donors(const std::vector<double>& donors, const std::vector<double>& recipients,
                                          int k) {
  if (k < 1 || static_cast<std::size_t>(k) > donors.size()) throw std::invalid_argument("kernel: bad donor count");
  std::vector<std::uint32_t> out(recipients.size() * k);
  std::vector<std::uint32_t> order(donors.size());
  for (std::size_t r = 0; r < recipients.size(); ++r) {
    const double v = recipients[r];
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::uint32_t a, std::uint32_t b) {
      double da = std::abs(donors[a] - v), db = std::abs(donors[b] - v);
      return da != db ? da < db : a < b;
    });
    std::copy(order.begin(), order.begin() + k, out.begin() + r * k);
  }
  return out;
}

std::vector<std::int64_t> case_placements(const std::vector<double>& cases, const std::vector<double>& controls) {
  std::vector<std::int64_t> out(cases.size(), 0);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    for (double c : controls) out[i] += cases[i] > c ? 2 : (cases[i] == c ? 1 : 0);
  }
  return out;
}

}  // namespace serial

namespace omp {

Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
  check_rows(x, w.size());
  const Eigen::Index n = x.rows(), p = x.cols();
  const std::ptrdiff_t nb = block_count(n);
  std::vector<Eigen::MatrixXd> partial(nb, Eigen::MatrixXd::Zero(p, p));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    gram_rows(x, w, b * kRowBlock, std::min<Eigen::Index>(n, (b + 1) * kRowBlock), partial[b]);
  }
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  for (const auto& part : partial) g += part;
  symmetrize(g);
  return g;
}

Eigen::VectorXd cross_product(const Eigen::MatrixXd& x, const Eigen::VectorXd& v) {
  check_rows(x, v.size());
  const Eigen::Index n = x.rows(), p = x.cols();
  const std::ptrdiff_t nb = block_count(n);
  Eigen::MatrixXd partial = Eigen::MatrixXd::Zero(p, nb);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const Eigen::Index r0 = b * kRowBlock, r1 = std::min<Eigen::Index>(n, (b + 1) * kRowBlock);
    for (Eigen::Index j = 0; j < p; ++j) {
      const double* xj = x.col(j).data();
      double s = 0;
      for (Eigen::Index i = r0; i < r1; ++i) s += xj[i] * v[i];
      partial(j, b) = s;
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
  for (std::ptrdiff_t b = 0; b < nb; ++b) out += partial.col(b);
  return out;
}

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta) {
  if (x.cols() != beta.size()) throw std::invalid_argument("kernel: coefficient length mismatch");
  const Eigen::Index n = x.rows();
  Eigen::VectorXd eta(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) eta[i] = row_dot(x, beta, i);
  return eta;
}

std::vector<std::uint32_t> nearest_donors(const std::vector<double>& donors, const std::vector<double>& recipients,
                                          int k) {
  if (k < 1 || static_cast<std::size_t>(k) > donors.size()) throw std::invalid_argument("kernel: bad donor count");
  const auto n = static_cast<std::ptrdiff_t>(recipients.size());
  std::vector<std::uint32_t> out(recipients.size() * k);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) nearest_sorted(donors, recipients[r], k, out.data() + r * k);
  return out;
}

std::vector<std::int64_t> case_placements(const std::vector<double>& cases, const std::vector<double>& controls) {
  std::vector<double> sorted(controls);
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<std::ptrdiff_t>(cases.size());
  std::vector<std::int64_t> out(cases.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto lo = std::lower_bound(sorted.begin(), sorted.end(), cases[i]);
    auto hi = std::upper_bound(lo, sorted.end(), cases[i]);
    out[i] = 2 * (lo - sorted.begin()) + (hi - lo);
  }
  return out;
}

}  // namespace omp
}  // namespace framr::kernels
