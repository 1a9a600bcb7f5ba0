// AVX2/FMA variants of the kernels in simd_scalar.cpp. This translation unit
// is compiled with -mavx2 -mfma and only entered after a runtime CPU check.
//
// exp/log/erfc use the classic Cephes rational approximations (relative
// error ~1e-16); four cells are processed per vector lane group.

#include "phylova/simd.hpp"

#if defined(PHYLOVA_BUILD_AVX2)

#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "phylova/quadrature.hpp"

namespace phylova::simd {
namespace {

inline __m256d set1(double v) { return _mm256_set1_pd(v); }

template <std::size_t N>
inline __m256d polevl(__m256d x, const double (&c)[N]) {
  __m256d acc = set1(c[0]);
  for (std::size_t i = 1; i < N; ++i) acc = _mm256_fmadd_pd(acc, x, set1(c[i]));
  return acc;
}

// Leading coefficient of 1 implied.
template <std::size_t N>
inline __m256d p1evl(__m256d x, const double (&c)[N]) {
  __m256d acc = _mm256_add_pd(x, set1(c[0]));
  for (std::size_t i = 1; i < N; ++i) acc = _mm256_fmadd_pd(acc, x, set1(c[i]));
  return acc;
}

inline __m256d exp_pd(__m256d x) {
  static constexpr double P[] = {1.26177193074810590878E-4, 3.02994407707441961300E-2,
                                 9.99999999999999999910E-1};
  static constexpr double Q[] = {3.00198505138664455042E-6, 2.52448340349684104192E-3,
                                 2.27265548208155028766E-1, 2.00000000000000000009E0};
  const __m256d lo = set1(-708.0);
  const __m256d hi = set1(709.0);
  const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);
  const __m256d k = _mm256_round_pd(_mm256_mul_pd(x, set1(1.4426950408889634073599)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(k, set1(6.93145751953125E-1), x);
  r = _mm256_fnmadd_pd(k, set1(1.42860682030941723212E-6), r);
  const __m256d rr = _mm256_mul_pd(r, r);
  const __m256d px = _mm256_mul_pd(r, polevl(rr, P));
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(polevl(rr, Q), px));
  e = _mm256_fmadd_pd(set1(2.0), e, set1(1.0));
  // scale by 2^k through the exponent field
  const __m128i k32 = _mm256_cvtpd_epi32(k);
  __m256i k64 = _mm256_cvtepi32_epi64(k32);
  k64 = _mm256_add_epi64(k64, _mm256_set1_epi64x(1023));
  const __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(k64, 52));
  e = _mm256_mul_pd(e, scale);
  return _mm256_andnot_pd(underflow, e);
}

// Natural log for positive normal inputs.
inline __m256d log_pd(__m256d x) {
  static constexpr double P[] = {1.01875663804580931796E-4, 4.97494994976747001425E-1,
                                 4.70579119878881725854E0,  1.44989225341610930846E1,
                                 1.79368678507819816313E1,  7.70838733755885391666E0};
  static constexpr double Q[] = {1.12873587189167450590E1, 4.52279145837532221105E1,
                                 8.29875266912776603211E1, 7.11544750618563894466E1,
                                 2.31251620126765340583E1};
  const __m256i bits = _mm256_castpd_si256(x);
  const __m256i exp_bits = _mm256_srli_epi64(bits, 52);
  // frexp: mantissa in [0.5, 1)
  const __m256i mant_bits = _mm256_or_si256(
      _mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL)),
      _mm256_set1_epi64x(0x3FE0000000000000LL));
  __m256d m = _mm256_castsi256_pd(mant_bits);
  // exponent as double: (bits >> 52) - 1022, converted via the magic-number trick
  const __m256d magic = set1(4503599627370496.0);  // 2^52
  __m256d e = _mm256_sub_pd(
      _mm256_castsi256_pd(_mm256_or_si256(exp_bits, _mm256_castpd_si256(magic))), magic);
  e = _mm256_sub_pd(e, set1(1022.0));
  const __m256d small = _mm256_cmp_pd(m, set1(0.70710678118654752440), _CMP_LT_OQ);
  e = _mm256_sub_pd(e, _mm256_and_pd(small, set1(1.0)));
  const __m256d xm = _mm256_sub_pd(_mm256_add_pd(m, _mm256_and_pd(small, m)), set1(1.0));
  const __m256d z = _mm256_mul_pd(xm, xm);
  __m256d y = _mm256_mul_pd(xm, _mm256_div_pd(_mm256_mul_pd(z, polevl(xm, P)), p1evl(xm, Q)));
  y = _mm256_fnmadd_pd(e, set1(2.121944400546905827679e-4), y);
  y = _mm256_fnmadd_pd(set1(0.5), z, y);
  __m256d out = _mm256_add_pd(xm, y);
  return _mm256_fmadd_pd(e, set1(0.693359375), out);
}

inline __m256d abs_pd(__m256d x) { return _mm256_andnot_pd(set1(-0.0), x); }

// log Phi(t) and phi(t)/Phi(t). With x = -t/sqrt(2): for x >= 1 the erfc
// rational form factors out exp(-x^2) so the lower tail never underflows.
inline void log_ndtr_mills_pd(__m256d t, __m256d& log_cdf, __m256d& mills) {
  static constexpr double P[] = {2.46196981473530512524E-10, 5.64189564831068821977E-1,
                                 7.46321056442269912687E0,   4.86371970985681366614E1,
                                 1.96520832956077098242E2,   5.26445194995477358631E2,
                                 9.34528527171957607540E2,   1.02755188689515710272E3,
                                 5.57535335369399327526E2};
  static constexpr double Q[] = {1.32281951154744992508E1, 8.67072140885989742329E1,
                                 3.54937778887819891062E2, 9.75708501743205489753E2,
                                 1.82390916687909736289E3, 2.24633760818710981792E3,
                                 1.65666309194161350182E3, 5.57535340817727675546E2};
  static constexpr double R[] = {5.64189583547755073984E-1, 1.27536670759978104416E0,
                                 5.01905042251180477414E0,  6.16021097993053585195E0,
                                 7.40974269950448939160E0,  2.97886665372100240670E0};
  static constexpr double S[] = {2.26052863220117276590E0, 9.39603524938001434673E0,
                                 1.20489539808096656605E1, 1.70814450747565897222E1,
                                 9.60896809063285067018E0, 3.36907645100081516050E0};
  static constexpr double T[] = {9.60497373987051638749E0, 9.00260197203842689217E1,
                                 2.23200534594684319226E3, 7.00332514112805075473E3,
                                 5.55923013010394962768E4};
  static constexpr double U[] = {3.35617141647503099647E1, 5.21357949780152679795E2,
                                 4.59432382970980127987E3, 2.26290000613890934246E4,
                                 4.92673942608635921086E4};
  const __m256d one = set1(1.0);
  const __m256d x = _mm256_mul_pd(t, set1(-0.70710678118654752440));
  const __m256d ax = abs_pd(x);
  const __m256d x2 = _mm256_mul_pd(x, x);

  // erfc(|x|) / exp(-x^2) for |x| >= 1
  const __m256d mid = _mm256_div_pd(polevl(ax, P), p1evl(ax, Q));
  const __m256d far = _mm256_div_pd(polevl(ax, R), p1evl(ax, S));
  const __m256d tail_ratio = _mm256_blendv_pd(mid, far, _mm256_cmp_pd(ax, set1(8.0), _CMP_GE_OQ));
  const __m256d gauss = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), x2));  // exp(-x^2)

  // central region: erf(x) directly
  const __m256d erf_x = _mm256_div_pd(_mm256_mul_pd(x, polevl(x2, T)), p1evl(x2, U));
  const __m256d cdf_center = _mm256_mul_pd(set1(0.5), _mm256_sub_pd(one, erf_x));
  // upper region (x <= -1): Phi = 1 - erfc(|x|)/2
  const __m256d cdf_upper = _mm256_fnmadd_pd(set1(0.5), _mm256_mul_pd(gauss, tail_ratio), one);

  const __m256d is_lower = _mm256_cmp_pd(x, one, _CMP_GE_OQ);
  const __m256d is_upper = _mm256_cmp_pd(x, set1(-1.0), _CMP_LE_OQ);

  const __m256d cdf = _mm256_blendv_pd(cdf_center, cdf_upper, is_upper);
  const __m256d log_arg = _mm256_blendv_pd(cdf, tail_ratio, is_lower);
  const __m256d log_shift =
      _mm256_and_pd(is_lower, _mm256_sub_pd(set1(-0.69314718055994530942), x2));
  log_cdf = _mm256_add_pd(log_pd(log_arg), log_shift);

  const __m256d pdf = _mm256_mul_pd(gauss, set1(0.39894228040143267794));
  const __m256d mills_body = _mm256_div_pd(pdf, cdf);
  const __m256d mills_tail = _mm256_div_pd(set1(0.79788456080286535588), tail_ratio);
  mills = _mm256_blendv_pd(mills_body, mills_tail, is_lower);
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = set1(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Loads up to four cells, padding the tail with a benign cell.
struct Lanes {
  __m256d y, mu, var;
};

inline Lanes load_cells(const CellBatch& b, std::size_t c, std::size_t width) {
  if (width == 4) {
    return {_mm256_loadu_pd(b.y + c), _mm256_loadu_pd(b.mu + c), _mm256_loadu_pd(b.var + c)};
  }
  alignas(32) double yy[4] = {0, 0, 0, 0};
  alignas(32) double mm[4] = {0, 0, 0, 0};
  alignas(32) double vv[4] = {0, 0, 0, 0};
  for (std::size_t k = 0; k < width; ++k) {
    yy[k] = b.y[c + k];
    mm[k] = b.mu[c + k];
    vv[k] = b.var[c + k];
  }
  return {_mm256_load_pd(yy), _mm256_load_pd(mm), _mm256_load_pd(vv)};
}

inline void store_cells(const CellBatch& b, std::size_t c, std::size_t width, __m256d ll,
                        __m256d g1, __m256d g2) {
  if (width == 4) {
    _mm256_storeu_pd(b.loglik + c, ll);
    _mm256_storeu_pd(b.d_mu + c, g1);
    _mm256_storeu_pd(b.d_var + c, g2);
    return;
  }
  alignas(32) double a[4], d1[4], d2[4];
  _mm256_store_pd(a, ll);
  _mm256_store_pd(d1, g1);
  _mm256_store_pd(d2, g2);
  for (std::size_t k = 0; k < width; ++k) {
    b.loglik[c + k] = a[k];
    b.d_mu[c + k] = d1[k];
    b.d_var[c + k] = d2[k];
  }
}

inline __m256d sign_of_response(__m256d y) {
  return _mm256_blendv_pd(set1(-1.0), set1(1.0), _mm256_cmp_pd(y, set1(0.5), _CMP_GT_OQ));
}

inline __m256d var_derivative(__m256d sign, __m256d sd, __m256d g2, __m256d g3) {
  const __m256d quad = _mm256_div_pd(_mm256_mul_pd(sign, g3), _mm256_add_pd(sd, sd));
  const __m256d wide = _mm256_cmp_pd(sd, set1(kQuadratureMinSd), _CMP_GT_OQ);
  return _mm256_blendv_pd(_mm256_mul_pd(set1(0.5), g2), quad, wide);
}

void probit_avx2(const CellBatch& batch) {
  const auto& rule = normal_quadrature();
  for (std::size_t c = 0; c < batch.count; c += 4) {
    const std::size_t width = std::min<std::size_t>(4, batch.count - c);
    const Lanes in = load_cells(batch, c, width);
    const __m256d sign = sign_of_response(in.y);
    const __m256d sd = _mm256_sqrt_pd(in.var);
    __m256d ll = _mm256_setzero_pd();
    __m256d g1 = _mm256_setzero_pd();
    __m256d g2 = _mm256_setzero_pd();
    __m256d g3 = _mm256_setzero_pd();
    for (std::size_t q = 0; q < kHermiteNodes; ++q) {
      const __m256d w = set1(rule.weights[q]);
      const __m256d t = _mm256_mul_pd(sign, _mm256_fmadd_pd(sd, set1(rule.nodes[q]), in.mu));
      __m256d lc, r;
      log_ndtr_mills_pd(t, lc, r);
      ll = _mm256_fmadd_pd(w, lc, ll);
      g1 = _mm256_fmadd_pd(w, r, g1);
      g2 = _mm256_fnmadd_pd(w, _mm256_mul_pd(r, _mm256_add_pd(t, r)), g2);
      g3 = _mm256_fmadd_pd(set1(rule.weights[q] * rule.nodes[q]), r, g3);
    }
    store_cells(batch, c, width, ll, _mm256_mul_pd(sign, g1), var_derivative(sign, sd, g2, g3));
  }
}

void logit_avx2(const CellBatch& batch) {
  const auto& rule = normal_quadrature();
  const __m256d one = set1(1.0);
  for (std::size_t c = 0; c < batch.count; c += 4) {
    const std::size_t width = std::min<std::size_t>(4, batch.count - c);
    const Lanes in = load_cells(batch, c, width);
    const __m256d sign = sign_of_response(in.y);
    const __m256d sd = _mm256_sqrt_pd(in.var);
    __m256d ll = _mm256_setzero_pd();
    __m256d g1 = _mm256_setzero_pd();
    __m256d g2 = _mm256_setzero_pd();
    __m256d g3 = _mm256_setzero_pd();
    for (std::size_t q = 0; q < kHermiteNodes; ++q) {
      const __m256d w = set1(rule.weights[q]);
      const __m256d t = _mm256_mul_pd(sign, _mm256_fmadd_pd(sd, set1(rule.nodes[q]), in.mu));
      const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), abs_pd(t)));
      const __m256d onep = _mm256_add_pd(one, e);
      const __m256d lc = _mm256_sub_pd(_mm256_min_pd(t, _mm256_setzero_pd()), log_pd(onep));
      const __m256d nonneg = _mm256_cmp_pd(t, _mm256_setzero_pd(), _CMP_GE_OQ);
      const __m256d upper = _mm256_div_pd(_mm256_blendv_pd(one, e, nonneg), onep);
      ll = _mm256_fmadd_pd(w, lc, ll);
      g1 = _mm256_fmadd_pd(w, upper, g1);
      g2 = _mm256_fnmadd_pd(w, _mm256_mul_pd(upper, _mm256_sub_pd(one, upper)), g2);
      g3 = _mm256_fmadd_pd(set1(rule.weights[q] * rule.nodes[q]), upper, g3);
    }
    store_cells(batch, c, width, ll, _mm256_mul_pd(sign, g1), var_derivative(sign, sd, g2, g3));
  }
}

void poisson_avx2(const CellBatch& batch) {
  for (std::size_t c = 0; c < batch.count; c += 4) {
    const std::size_t width = std::min<std::size_t>(4, batch.count - c);
    const Lanes in = load_cells(batch, c, width);
    const __m256d rate = exp_pd(_mm256_fmadd_pd(set1(0.5), in.var, in.mu));
    const __m256d ll = _mm256_fmsub_pd(in.y, in.mu, rate);
    store_cells(batch, c, width, ll, _mm256_sub_pd(in.y, rate), _mm256_mul_pd(set1(-0.5), rate));
  }
}

}  // namespace

const KernelTable* avx2_table_if_built() {
  static const KernelTable table{Isa::avx2, dot_avx2, axpy_avx2, probit_avx2, logit_avx2,
                                 poisson_avx2};
  return &table;
}

}  // namespace phylova::simd

#else

namespace phylova::simd {
const KernelTable* avx2_table_if_built() { return nullptr; }
}  // namespace phylova::simd

#endif
