#pragma once

// Hot loops shared by fitting, imputation and evaluation. Each kernel has a
// serial reference version and an OpenMP version; the OpenMP versions reduce
// over fixed row blocks in block order, so results do not depend on the
// number of threads.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace framr::kernels {

inline constexpr std::ptrdiff_t kRowBlock = 2048;

namespace serial {

/// X^T diag(w) X.
Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w);

/// X^T v.
Eigen::VectorXd cross_product(const Eigen::MatrixXd& x, const Eigen::VectorXd& v);

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta);

/// For each recipient, indices (into the ascending `donors`) of the k donors
/// closest to it. Distance ties go to the lower index. Row-major n_recipients x k.
std::vector<std::uint32_t> nearest_donors(const std::vector<double>& donors, const std::vector<double>& recipients,
                                          int k);

/// For each case score, twice the number of controls it outranks, counting
/// ties as one (i.e. 2 * (#below + 0.5 * #equal)).
std::vector<std::int64_t> case_placements(const std::vector<double>& cases, const std::vector<double>& controls);

}  // namespace serial

namespace omp {

Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w);
Eigen::VectorXd cross_product(const Eigen::MatrixXd& x, const Eigen::VectorXd& v);
Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta);
std::vector<std::uint32_t> nearest_donors(const std::vector<double>& donors, const std::vector<double>& recipients,
                                          int k);
std::vector<std::int64_t> case_placements(const std::vector<double>& cases, const std::vector<double>& controls);

}  // namespace omp

/// Sets the OpenMP thread count; values < 1 leave the runtime default.
void set_threads(int n);
int max_threads();

}  // namespace framr::kernels
