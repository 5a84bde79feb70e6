#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "llmroute/kernels.hpp"

namespace llmroute::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {
namespace {
// Below these sizes the fork/join costs more than the loop.
constexpr std::size_t kMinColumns = 128;
constexpr std::size_t kMinElements = 1 << 15;
constexpr std::size_t kMinEntries = 256;

// Columns are handed out in contiguous blocks so each thread still walks
// weight rows sequentially; per-element accumulation order matches serial.
constexpr std::size_t kColumnBlock = 64;

std::ptrdiff_t column_blocks(std::size_t cols) {
  return static_cast<std::ptrdiff_t>((cols + kColumnBlock - 1) / kColumnBlock);
}
}  // namespace

void affine_sparse(std::span<const double> weights, std::size_t cols,
                   std::span<const double> bias, SparseRow x, std::span<double> out) {
  const auto blocks = column_blocks(cols);
#pragma omp parallel for schedule(static) if (cols >= kMinColumns)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kColumnBlock;
    const std::size_t hi = std::min(cols, lo + kColumnBlock);
    for (std::size_t j = lo; j < hi; ++j) out[j] = bias[j];
    for (std::size_t k = 0; k < x.indices.size(); ++k) {
      const double v = x.values[k];
      const double* row = weights.data() + static_cast<std::size_t>(x.indices[k]) * cols;
      for (std::size_t j = lo; j < hi; ++j) out[j] += v * row[j];
    }
  }
}

void affine_dense(std::span<const double> weights, std::size_t cols,
                  std::span<const double> bias, std::span<const double> x,
                  std::span<double> out) {
  const auto blocks = column_blocks(cols);
#pragma omp parallel for schedule(static) if (cols >= kMinColumns)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kColumnBlock;
    const std::size_t hi = std::min(cols, lo + kColumnBlock);
    for (std::size_t j = lo; j < hi; ++j) out[j] = bias[j];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double* row = weights.data() + i * cols;
      for (std::size_t j = lo; j < hi; ++j) out[j] += v * row[j];
    }
  }
}

void accumulate_outer_sparse(std::span<double> grad, std::size_t cols,
                             std::span<const SparseRow> xs, std::span<const double> deltas) {
  const auto blocks = column_blocks(cols);
#pragma omp parallel for schedule(static) if (cols >= kMinColumns)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kColumnBlock;
    const std::size_t hi = std::min(cols, lo + kColumnBlock);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const double* d = deltas.data() + s * cols;
      for (std::size_t k = 0; k < xs[s].indices.size(); ++k) {
        const double v = xs[s].values[k];
        double* row = grad.data() + static_cast<std::size_t>(xs[s].indices[k]) * cols;
        for (std::size_t j = lo; j < hi; ++j) row[j] += v * d[j];
      }
    }
  }
}

void accumulate_outer_dense(std::span<double> grad, std::size_t rows, std::size_t cols,
                            std::span<const double> hs, std::span<const double> deltas,
                            std::size_t batch) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kMinElements / 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double* row = grad.data() + static_cast<std::size_t>(i) * cols;
    for (std::size_t s = 0; s < batch; ++s) {
      const double h = hs[s * rows + i];
      const double* d = deltas.data() + s * cols;
      for (std::size_t j = 0; j < cols; ++j) row[j] += h * d[j];
    }
  }
}

void adamw_update(std::span<double> params, std::span<const double> grads,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::uint64_t step, const AdamWHyper& hyper) {
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  const auto n = static_cast<std::ptrdiff_t>(params.size());
#pragma omp parallel for schedule(static) if (params.size() >= kMinElements)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double g = grads[i];
    first_moment[i] = hyper.beta1 * first_moment[i] + (1.0 - hyper.beta1) * g;
    second_moment[i] = hyper.beta2 * second_moment[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = first_moment[i] / c1;
    const double v_hat = second_moment[i] / c2;
    params[i] -= hyper.learning_rate *
                 (m_hat / (std::sqrt(v_hat) + hyper.epsilon) + hyper.weight_decay * params[i]);
  }
}

NearestResult nearest_cosine(std::span<const double> entries, std::span<const double> norms,
                             std::size_t dim, std::span<const double> query) {
  double qn = 0.0;
  for (double q : query) qn += q * q;
  qn = std::sqrt(qn);
  if (norms.empty()) return {0, 0.0};

  NearestResult best{0, -2.0};
  const auto count = static_cast<std::ptrdiff_t>(norms.size());
#pragma omp parallel if (norms.size() >= kMinEntries)
  {
    NearestResult local{0, -2.0};
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t e = 0; e < count; ++e) {
      double sim = 0.0;
      if (qn > 0.0 && norms[e] > 0.0) {
        const double* row = entries.data() + static_cast<std::size_t>(e) * dim;
        double dot = 0.0;
        for (std::size_t c = 0; c < dim; ++c) dot += row[c] * query[c];
        sim = dot / (qn * norms[e]);
      }
      if (sim > local.similarity) local = {static_cast<std::size_t>(e), sim};
    }
#pragma omp critical(llmroute_nearest_merge)
    {
      if (local.similarity > best.similarity ||
          (local.similarity == best.similarity && local.index < best.index)) {
        best = local;
      }
    }
  }
  return best;
}

}  // namespace parallel
}  // namespace llmroute::kernels
