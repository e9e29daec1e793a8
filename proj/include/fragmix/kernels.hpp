#pragma once

// Dense double-precision inner kernels with runtime ISA selection.
//
// A scalar reference table is always available. An AVX2+FMA table is compiled
// in a separate translation unit and selected at first use when the CPU
// supports it. FRAGMIX_ISA=scalar|avx2 in the environment pins the choice.
//
// All matrices are row-major with explicit leading dimensions so callers can
// pass strided views (one attention head inside a packed H-wide row, say).
// The gemm kernels accumulate into C; callers zero C when they need `=`.

#include <cstddef>
#include <optional>
#include <string_view>

namespace fragmix::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // C[m x n] += A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc);
    // C[m x n] += A[m x k] * B[n x k]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc);
    // C[m x n] += A[k x m]^T * B[k x n]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_table() noexcept;

bool isa_available(Isa isa) noexcept;
const KernelTable& table(Isa isa);

// The table every op in the library dispatches through.
const KernelTable& active() noexcept;
Isa active_isa() noexcept;

// Pins the active table; returns the previous choice. Throws if unavailable.
Isa set_active(Isa isa);

// RAII pin, for tests that compare variants.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) : previous_(set_active(isa)) {}
    ~ScopedIsa() { set_active(previous_); }
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

}  // namespace fragmix::kernels
