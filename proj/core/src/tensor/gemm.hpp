#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace vtlab::detail {

// Row-major GEMM wrappers. C is M x N and is accumulated into.

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

/// C += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  MutMap<T>(C, M, N).noalias() += ConstMap<T>(A, M, K) * ConstMap<T>(B, K, N);
}

/// C += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  MutMap<T>(C, M, N).noalias() += ConstMap<T>(A, M, K) * ConstMap<T>(B, N, K).transpose();
}

/// C += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  MutMap<T>(C, M, N).noalias() += ConstMap<T>(A, K, M).transpose() * ConstMap<T>(B, K, N);
}

}  // namespace vtlab::detail
