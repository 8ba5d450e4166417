#pragma once

#include <Eigen/Dense>

namespace hemo {

/// Dense row-major double matrix; rows index frames, tokens or nodes.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace hemo
