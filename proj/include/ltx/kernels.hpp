#pragma once

#include <cstdint>

// Dense kernels for conv/dense layers. Accumulation order is fixed (k
// ascending for every output element), so results are bit-identical across
// runs; no parallel or reordered reductions.

namespace ltx::detail {

// Column-block width for the streaming kernels: four C rows of this width
// stay L1-resident while every K row of the B block streams past them.
inline constexpr int64_t kGemmBlockN = 512;

// C(M,N) += A(M,K) * B(K,N), row-major. Four-row unroll so each B row is
// reused across four accumulating C rows; N is tiled so the active C rows
// fit in L1 even for batch-wide column matrices. Per output element the
// accumulation order stays "k ascending", independent of the tiling.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
  for (int64_t j0 = 0; j0 < N; j0 += kGemmBlockN) {
    const int64_t jn = j0 + kGemmBlockN < N ? kGemmBlockN : N - j0;
    int64_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* c0 = C + (i + 0) * N + j0;
      T* c1 = C + (i + 1) * N + j0;
      T* c2 = C + (i + 2) * N + j0;
      T* c3 = C + (i + 3) * N + j0;
      for (int64_t k = 0; k < K; ++k) {
        const T a0 = A[(i + 0) * K + k];
        const T a1 = A[(i + 1) * K + k];
        const T a2 = A[(i + 2) * K + k];
        const T a3 = A[(i + 3) * K + k];
        const T* bk = B + k * N + j0;
        for (int64_t j = 0; j < jn; ++j) {
          const T b = bk[j];
          c0[j] += a0 * b;
          c1[j] += a1 * b;
          c2[j] += a2 * b;
          c3[j] += a3 * b;
        }
      }
    }
    for (; i < M; ++i) {
      T* ci = C + i * N + j0;
      for (int64_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        const T* bk = B + k * N + j0;
        for (int64_t j = 0; j < jn; ++j) ci[j] += a * bk[j];
      }
    }
  }
}

// C(M,N) += A(M,L) * B(N,L)^T : rows of A dotted with rows of B.
template <typename T>
void gemm_abt_acc(const T* A, const T* B, T* C, int64_t M, int64_t L,
                  int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const T* ai = A + i * L;
    T* ci = C + i * N;
    int64_t j = 0;
    for (; j + 4 <= N; j += 4) {
      const T* b0 = B + (j + 0) * L;
      const T* b1 = B + (j + 1) * L;
      const T* b2 = B + (j + 2) * L;
      const T* b3 = B + (j + 3) * L;
      T s0{}, s1{}, s2{}, s3{};
      for (int64_t t = 0; t < L; ++t) {
        const T a = ai[t];
        s0 += a * b0[t];
        s1 += a * b1[t];
        s2 += a * b2[t];
        s3 += a * b3[t];
      }
      ci[j + 0] += s0;
      ci[j + 1] += s1;
      ci[j + 2] += s2;
      ci[j + 3] += s3;
    }
    for (; j < N; ++j) {
      const T* bj = B + j * L;
      T s{};
      for (int64_t t = 0; t < L; ++t) s += ai[t] * bj[t];
      ci[j] += s;
    }
  }
}

// C(M,N) += A(K,M)^T * B(K,N): axpy over rows of B, striding columns of A.
// N-tiled like gemm_acc; per-element accumulation stays k-ascending.
template <typename T>
void gemm_atb_acc(const T* A, const T* B, T* C, int64_t K, int64_t M,
                  int64_t N) {
  for (int64_t j0 = 0; j0 < N; j0 += kGemmBlockN) {
    const int64_t jn = j0 + kGemmBlockN < N ? kGemmBlockN : N - j0;
    for (int64_t k = 0; k < K; ++k) {
      const T* ak = A + k * M;
      const T* bk = B + k * N + j0;
      for (int64_t i = 0; i < M; ++i) {
        const T a = ak[i];
        T* ci = C + i * N + j0;
        for (int64_t j = 0; j < jn; ++j) ci[j] += a * bk[j];
      }
    }
  }
}

// Expands one image (C,H,W) into columns (C*KH*KW, OH*OW); zero padding.
// `row_len` is the full row length of the destination matrix, so several
// images can share one wide column matrix (each writing its own column
// block); the single-image case passes row_len = OH*OW.
template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int kernel,
            int stride, int pad, int64_t oh, int64_t ow, T* col,
            int64_t row_len) {
  for (int64_t ch = 0; ch < c; ++ch) {
    const T* xc = x + ch * h * w;
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        T* row = col + ((ch * kernel + ki) * kernel + kj) * row_len;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride - pad + ki;
          T* out = row + oy * ow;
          if (iy < 0 || iy >= h) {
            for (int64_t ox = 0; ox < ow; ++ox) out[ox] = T{};
            continue;
          }
          const T* xrow = xc + iy * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride - pad + kj;
            out[ox] = (ix >= 0 && ix < w) ? xrow[ix] : T{};
          }
        }
      }
    }
  }
}

// Scatters column gradients back to an image; accumulates. `row_len` as in
// im2col: the stride between rows of the (possibly batch-wide) matrix.
template <typename T>
void col2im_acc(const T* col, int64_t c, int64_t h, int64_t w, int kernel,
                int stride, int pad, int64_t oh, int64_t ow, T* dx,
                int64_t row_len) {
  for (int64_t ch = 0; ch < c; ++ch) {
    T* dxc = dx + ch * h * w;
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const T* row = col + ((ch * kernel + ki) * kernel + kj) * row_len;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const T* in = row + oy * ow;
          T* dxrow = dxc + iy * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dxrow[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace ltx::detail
