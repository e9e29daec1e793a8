#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace fragmix::kernels {

namespace {

const KernelTable kScalar{Isa::scalar, &scalar::dot, &scalar::axpy, &scalar::gemm_nn, &scalar::gemm_nt,
                          &scalar::gemm_tn};

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_choice() {
    const char* env = std::getenv("FRAGMIX_ISA");
    if (env != nullptr && std::string(env) == "scalar") return &kScalar;
    if (const KernelTable* t = avx2_table(); t != nullptr) return t;
    return &kScalar;
}

const KernelTable*& current() noexcept {
    static const KernelTable* chosen = initial_choice();
    return chosen;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

const KernelTable& scalar_table() noexcept { return kScalar; }

const KernelTable* avx2_table() noexcept {
    static const bool usable = cpu_has_avx2() && avx2_table_compiled() != nullptr;
    return usable ? avx2_table_compiled() : nullptr;
}

bool isa_available(Isa isa) noexcept { return isa == Isa::scalar || avx2_table() != nullptr; }

const KernelTable& table(Isa isa) {
    if (isa == Isa::scalar) return kScalar;
    if (const KernelTable* t = avx2_table(); t != nullptr) return *t;
    throw std::runtime_error("kernel variant '" + std::string(isa_name(isa)) + "' is not available on this CPU");
}

const KernelTable& active() noexcept { return *current(); }

Isa active_isa() noexcept { return current()->isa; }

Isa set_active(Isa isa) {
    const Isa previous = current()->isa;
    current() = &table(isa);
    return previous;
}

}  // namespace fragmix::kernels
