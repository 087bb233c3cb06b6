#pragma once

#include <Eigen/Core>

#include "dynformer/tensor.hpp"

namespace dynformer::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

inline CMapMat cmat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return CMapMat(t.data().data() + offset, static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cols));
}
inline MapMat mmat(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapMat(t.data().data() + offset, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}
inline CMapVec cvec(const Tensor& t) {
  return CMapVec(t.data().data(), static_cast<Eigen::Index>(t.size()));
}
inline MapVec mvec(Tensor& t) {
  return MapVec(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

}  // namespace dynformer::detail
