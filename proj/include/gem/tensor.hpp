#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace gem {

/// Dense row-major matrix of 64-bit reals.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major sparse matrix used for neighbourhood propagation.
using SparseOperator = Eigen::SparseMatrix<double, Eigen::RowMajor>;

}  // namespace gem
