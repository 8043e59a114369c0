#pragma once

// Data-parallel inner loops behind the dense linear algebra and the
// propagation kernels. Every routine has a scalar reference implementation
// and, on x86-64, an AVX2+FMA variant selected at runtime.
//
// Selection order: DIFFORMER_ISA environment variable ("scalar", "avx2",
// "auto"), otherwise the widest ISA the CPU reports. Results are deterministic
// for a fixed ISA; scalar and AVX2 agree to rounding (FMA contraction and
// lane-wise reduction order differ).

#include <cstddef>
#include <string_view>

namespace difformer::kernels {

enum class Isa { scalar, avx2 };

using DotFn = double (*)(const double* a, const double* b, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
/// C[m x n] += A[m x k] * B[k x n]; all row-major with leading dimensions.
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, std::size_t lda,
                        const double* b, std::size_t ldb,
                        double* c, std::size_t ldc);
using MapFn = void (*)(const double* x, double* y, std::size_t n);

struct KernelTable {
    Isa isa;
    const char* name;
    DotFn dot;
    AxpyFn axpy;
    GemmFn gemm;
    MapFn sigmoid;  // y = 1 / (1 + exp(-x)); x and y may alias
    MapFn exp;      // y = exp(x); x and y may alias
};

const KernelTable& scalar_table() noexcept;
/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table() noexcept;

bool cpu_supports(Isa isa) noexcept;
const KernelTable& table_for(Isa isa);

/// Currently active table.
const KernelTable& active() noexcept;
Isa active_isa() noexcept;
/// Switch the active table; throws ParameterError if the CPU lacks the ISA.
void select(Isa isa);
Isa parse_isa(std::string_view name);
const char* isa_name(Isa isa) noexcept;

/// Restores the previously active ISA on scope exit.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) : previous_(active_isa()) { select(isa); }
    ~ScopedIsa() { select(previous_); }
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

inline double dot(const double* a, const double* b, std::size_t n) {
    return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    active().axpy(alpha, x, y, n);
}
inline void gemm(std::size_t m, std::size_t n, std::size_t k,
                 const double* a, std::size_t lda,
                 const double* b, std::size_t ldb,
                 double* c, std::size_t ldc) {
    active().gemm(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void sigmoid(const double* x, double* y, std::size_t n) {
    active().sigmoid(x, y, n);
}
inline void exp(const double* x, double* y, std::size_t n) {
    active().exp(x, y, n);
}

namespace detail {
// Individual variants, exposed for the equivalence tests.
double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double* c,
                 std::size_t ldc);
void sigmoid_scalar(const double* x, double* y, std::size_t n);
void exp_scalar(const double* x, double* y, std::size_t n);

#if defined(DIFFORMER_HAVE_AVX2)
double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc);
void sigmoid_avx2(const double* x, double* y, std::size_t n);
void exp_avx2(const double* x, double* y, std::size_t n);
#endif
}  // namespace detail

}  // namespace difformer::kernels
