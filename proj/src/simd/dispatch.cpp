#include <atomic>
#include <cstdlib>
#include <string_view>

#include "v2m/simd/kernels.hpp"

namespace v2m::simd {

#ifndef V2M_HAVE_AVX2
namespace avx2 {
const KernelTable* table() { return nullptr; }
}  // namespace avx2
#endif

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* select() {
  if (const char* env = std::getenv("V2M_SIMD"); env && std::string_view(env) == "scalar")
    return &base::table();
  if (avx2::table() != nullptr && cpu_has_avx2_fma()) return avx2::table();
  return &base::table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{select()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

const KernelTable& set_active(const KernelTable& table) {
  return *slot().exchange(&table, std::memory_order_acq_rel);
}

}  // namespace v2m::simd
