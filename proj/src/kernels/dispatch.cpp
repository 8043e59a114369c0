#include "difformer/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "difformer/error.hpp"

namespace difformer::kernels {

namespace {

const KernelTable kScalar{Isa::scalar,        "scalar",
                          detail::dot_scalar, detail::axpy_scalar,
                          detail::gemm_scalar, detail::sigmoid_scalar,
                          detail::exp_scalar};

#if defined(DIFFORMER_HAVE_AVX2)
const KernelTable kAvx2{Isa::avx2,        "avx2",
                        detail::dot_avx2, detail::axpy_avx2,
                        detail::gemm_avx2, detail::sigmoid_avx2,
                        detail::exp_avx2};
#endif

const KernelTable* initial_table() {
    const char* env = std::getenv("DIFFORMER_ISA");
    if (env != nullptr && std::string(env) != "auto" && *env != '\0') {
        const Isa want = parse_isa(env);
        if (!cpu_supports(want)) {
            throw ParameterError(std::string("DIFFORMER_ISA=") + env +
                                 " is not supported on this CPU");
        }
        return &table_for(want);
    }
    if (cpu_supports(Isa::avx2)) return &table_for(Isa::avx2);
    return &kScalar;
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{initial_table()};
    return table;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

const KernelTable* avx2_table() noexcept {
#if defined(DIFFORMER_HAVE_AVX2)
    return &kAvx2;
#else
    return nullptr;
#endif
}

bool cpu_supports(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(DIFFORMER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

const KernelTable& table_for(Isa isa) {
    if (isa == Isa::avx2) {
        const KernelTable* t = avx2_table();
        if (t == nullptr) throw ParameterError("AVX2 kernels were not compiled in");
        return *t;
    }
    return kScalar;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

Isa active_isa() noexcept { return active().isa; }

void select(Isa isa) {
    if (!cpu_supports(isa)) {
        throw ParameterError(std::string("ISA ") + isa_name(isa) + " is not available");
    }
    current().store(&table_for(isa), std::memory_order_relaxed);
}

Isa parse_isa(std::string_view name) {
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2") return Isa::avx2;
    throw ParameterError("unknown ISA '" + std::string(name) + "' (expected scalar or avx2)");
}

const char* isa_name(Isa isa) noexcept {
    return isa == Isa::avx2 ? "avx2" : "scalar";
}

}  // namespace difformer::kernels
