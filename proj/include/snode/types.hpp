#pragma once

#include <Eigen/Core>

namespace snode {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// State or forcing values on a grid: one row per channel, one column per grid point.
using Field = RowMatrix;

}  // namespace snode
