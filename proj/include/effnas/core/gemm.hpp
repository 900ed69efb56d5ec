#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace effnas::kernels {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// C (+)= op(A) * op(B) on row-major buffers. op(A) is M x K, op(B) is K x N.
/// Single-threaded Eigen blocking, so the reduction order is fixed.
template <class T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t n, std::int64_t k, bool trans_a,
          bool trans_b, bool accumulate) {
  MatMap<T> cm(c, m, n);
  const auto ar = trans_a ? k : m, ac = trans_a ? m : k;
  const auto br = trans_b ? n : k, bc = trans_b ? k : n;
  ConstMatMap<T> am(a, ar, ac);
  ConstMatMap<T> bm(b, br, bc);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

}  // namespace effnas::kernels
