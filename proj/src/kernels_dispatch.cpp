#include "srma/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

#include "srma/kernels_scalar.hpp"

namespace srma::kern {

#ifdef SRMA_HAVE_AVX2_BUILD
namespace avx2 {
Table<float> table_f32();
Table<double> table_f64();
}  // namespace avx2
#endif

namespace {

template <typename S>
Table<S> make_scalar() {
  Table<S> t;
  t.add = scalar::add<S>;
  t.mul = scalar::mul<S>;
  t.neg = scalar::neg<S>;
  t.scale = scalar::scale<S>;
  t.axpy = scalar::axpy<S>;
  t.mul_acc = scalar::mul_acc<S>;
  t.affine = scalar::affine<S>;
  t.norm_affine = scalar::norm_affine<S>;
  t.scan_step = scalar::scan_step<S>;
  t.stencil_acc = scalar::stencil_acc<S>;
  t.stencil_acc_rev = scalar::stencil_acc_rev<S>;
  t.find_nonfinite = scalar::find_nonfinite<S>;
  return t;
}

Table<float> g_f32 = make_scalar<float>();
Table<double> g_f64 = make_scalar<double>();
std::string g_variant = "scalar";

bool apply_variant(const std::string& name) {
  if (name == "scalar") {
    g_f32 = make_scalar<float>();
    g_f64 = make_scalar<double>();
    g_variant = "scalar";
    return true;
  }
  if (name == "avx2") {
#ifdef SRMA_HAVE_AVX2_BUILD
    if (avx2_supported()) {
      g_f32 = avx2::table_f32();
      g_f64 = avx2::table_f64();
      g_variant = "avx2";
      return true;
    }
#endif
    return false;
  }
  if (name == "auto" || name.empty()) {
    if (apply_variant("avx2")) return true;
    return apply_variant("scalar");
  }
  return false;
}

struct Init {
  Init() {
    const char* env = std::getenv("SRMA_KERNELS");
    if (!apply_variant(env ? env : "auto")) apply_variant("auto");
  }
};
Init g_init;

}  // namespace

bool avx2_supported() {
#ifdef SRMA_HAVE_AVX2_BUILD
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

void set_variant(const std::string& name) {
  if (!apply_variant(name)) throw std::runtime_error("kernel variant unavailable: " + name);
}

std::string active_variant() { return g_variant; }

template <>
const Table<float>& active<float>() {
  return g_f32;
}

template <>
const Table<double>& active<double>() {
  return g_f64;
}

template <>
Table<float> scalar_table<float>() {
  return make_scalar<float>();
}

template <>
Table<double> scalar_table<double>() {
  return make_scalar<double>();
}

}  // namespace srma::kern
