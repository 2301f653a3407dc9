#pragma once

// Small deterministic matrix-multiply kernels used by the convolution,
// deconvolution and fully-connected layers.
//
// Every output element is accumulated as c + a0*b0 + a1*b1 + ... in
// increasing k order, whatever the matrix sizes and whether the element falls
// in a vectorized tile or a scalar tail. Together with -ffp-contract=off this
// makes a convolution evaluated at a subset of positions reproduce the dense
// result bit for bit.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace sbnet {

/// Counts the multiply-accumulate operations executed by the kernels on this
/// thread while the object is alive. Nested counters each see the full count.
class MacCounter {
 public:
  MacCounter() : previous_(slot()) { slot() = this; }
  ~MacCounter() { slot() = previous_; }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  [[nodiscard]] std::uint64_t count() const { return count_; }

  static void add(std::uint64_t macs) {
    for (MacCounter* c = slot(); c != nullptr; c = c->previous_) c->count_ += macs;
  }
  static bool active() { return slot() != nullptr; }

 private:
  static MacCounter*& slot() {
    thread_local MacCounter* current = nullptr;
    return current;
  }
  MacCounter* previous_;
  std::uint64_t count_ = 0;
};

namespace detail {

// Strided view of the left operand: A(i, k) = data[i * row_stride + k * col_stride].
struct MatView {
  const double* data;
  std::ptrdiff_t row_stride;
  std::ptrdiff_t col_stride;
  [[nodiscard]] double operator()(std::ptrdiff_t i, std::ptrdiff_t k) const {
    return data[i * row_stride + k * col_stride];
  }
};

/// C[m x n] += A[m x kd] * B[kd x n]; B and C are row-major with leading
/// dimensions ldb and ldc.
inline void gemm_accumulate(std::ptrdiff_t m, std::ptrdiff_t n, std::ptrdiff_t kd, MatView a,
                            const double* b, std::ptrdiff_t ldb, double* c, std::ptrdiff_t ldc) {
  constexpr std::ptrdiff_t MR = 4;
  constexpr std::ptrdiff_t NR = 8;
  const bool counting = MacCounter::active();
  // Full-width column strips of B are packed contiguously: with power-of-two
  // leading dimensions the strided rows would otherwise collide in cache.
  std::vector<double> strip(static_cast<std::size_t>(kd * NR));
  for (std::ptrdiff_t j0 = 0; j0 < n; j0 += NR) {
    const std::ptrdiff_t nr = std::min(NR, n - j0);
    if (nr == NR)
      for (std::ptrdiff_t k = 0; k < kd; ++k) std::copy_n(b + k * ldb + j0, NR, strip.data() + k * NR);
    for (std::ptrdiff_t i0 = 0; i0 < m; i0 += MR) {
      const std::ptrdiff_t mr = std::min(MR, m - i0);
      if (mr == MR && nr == NR) {
        double acc[MR][NR];
        for (std::ptrdiff_t r = 0; r < MR; ++r)
          for (std::ptrdiff_t q = 0; q < NR; ++q) acc[r][q] = c[(i0 + r) * ldc + j0 + q];
        for (std::ptrdiff_t k = 0; k < kd; ++k) {
          const double* brow = strip.data() + k * NR;
          const double a0 = a(i0 + 0, k);
          const double a1 = a(i0 + 1, k);
          const double a2 = a(i0 + 2, k);
          const double a3 = a(i0 + 3, k);
          for (std::ptrdiff_t q = 0; q < NR; ++q) {
            acc[0][q] += a0 * brow[q];
            acc[1][q] += a1 * brow[q];
            acc[2][q] += a2 * brow[q];
            acc[3][q] += a3 * brow[q];
          }
        }
        for (std::ptrdiff_t r = 0; r < MR; ++r)
          for (std::ptrdiff_t q = 0; q < NR; ++q) c[(i0 + r) * ldc + j0 + q] = acc[r][q];
      } else {
        for (std::ptrdiff_t r = 0; r < mr; ++r)
          for (std::ptrdiff_t q = 0; q < nr; ++q) {
            double s = c[(i0 + r) * ldc + j0 + q];
            for (std::ptrdiff_t k = 0; k < kd; ++k) s += a(i0 + r, k) * b[k * ldb + j0 + q];
            c[(i0 + r) * ldc + j0 + q] = s;
          }
      }
      if (counting) MacCounter::add(static_cast<std::uint64_t>(mr * nr * kd));
    }
  }
}

}  // namespace detail
}  // namespace sbnet
