#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace surgformer {

// Dense matrices are row-major throughout: rows are nodes, columns are
// channels, and all per-node kernels walk rows.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Vec3 = Eigen::Vector3d;
using MatX3d = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatX3f = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatX4i = Eigen::Matrix<int, Eigen::Dynamic, 4, Eigen::RowMajor>;
using MatX3i = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Graph Laplacians live in compressed row form.
using SpMatRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;
// Assembled stiffness matrices stay column-major for the sparse solvers.
using SpMatCol = Eigen::SparseMatrix<double>;

}  // namespace surgformer
