#pragma once

#include <Eigen/Core>

namespace lfm {

// Row-major so that each sample is a contiguous row, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace lfm
