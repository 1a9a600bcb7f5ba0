#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference and,
// where the build and the CPU allow it, an AVX2/FMA variant. The variant is
// chosen once per process (see active_kernels) so results never depend on the
// thread count.

#include <cstddef>

namespace phylova::simd {

enum class Isa { scalar, avx2 };

const char* isa_name(Isa isa);

/// A batch of independent observation cells. For each cell c the kernel
/// writes E[log f(y_c | eta)], d/dmu and d/dvar of that expectation, with
/// eta ~ N(mu_c, var_c).
struct CellBatch {
  const double* y = nullptr;
  const double* mu = nullptr;
  const double* var = nullptr;
  std::size_t count = 0;
  double* loglik = nullptr;
  double* d_mu = nullptr;
  double* d_var = nullptr;
};

using CellKernel = void (*)(const CellBatch&);

/// Bernoulli d/dvar is the derivative of the quadrature sum itself,
/// sum_q w_q l'(mu + sd z_q) z_q / (2 sd). Below this sd it switches to the
/// limit 0.5 * sum_q w_q l''(.) to avoid cancellation.
inline constexpr double kQuadratureMinSd = 1e-4;

struct KernelTable {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // Bernoulli cells through 20-node Gauss-Hermite quadrature.
  CellKernel probit;
  CellKernel logit;
  // Poisson cells without the -log(y!) constant: y*mu - exp(mu + var/2).
  CellKernel poisson;
};

const KernelTable& scalar_kernels();

/// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

/// Best available table; PHYLOVA_SIMD=scalar in the environment forces the
/// scalar reference.
const KernelTable& active_kernels();

// Scalar building blocks shared with the reference implementation.

/// log Phi(t) and the inverse Mills ratio phi(t)/Phi(t), accurate in both tails.
void log_ndtr_mills(double t, double& log_cdf, double& mills);

}  // namespace phylova::simd
