#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace geodp::kernels {

// C[m,n] (+)= op(A) * op(B), all row-major. op(A) is [m,k]; A is stored as
// [k,m] when trans_a. op(B) is [k,n]; B is stored as [n,k] when trans_b.
template <class T>
void gemm(const T* a, const T* b, T* c, std::ptrdiff_t m, std::ptrdiff_t k, std::ptrdiff_t n,
          bool trans_a, bool trans_b, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> out(c, m, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) out.setZero();
    return;
  }
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      out.noalias() += lhs * rhs;
    else
      out.noalias() = lhs * rhs;
  };
  if (!trans_a && !trans_b) run(CMap(a, m, k), CMap(b, k, n));
  else if (trans_a && !trans_b) run(CMap(a, k, m).transpose(), CMap(b, k, n));
  else if (!trans_a && trans_b) run(CMap(a, m, k), CMap(b, n, k).transpose());
  else run(CMap(a, k, m).transpose(), CMap(b, n, k).transpose());
}

}  // namespace geodp::kernels
