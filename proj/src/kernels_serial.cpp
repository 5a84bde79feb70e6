#include <cmath>

#include "llmroute/kernels.hpp"

namespace llmroute::kernels::serial {

void affine_sparse(std::span<const double> weights, std::size_t cols,
                   std::span<const double> bias, SparseRow x, std::span<double> out) {
  for (std::size_t j = 0; j < cols; ++j) out[j] = bias[j];
  for (std::size_t k = 0; k < x.indices.size(); ++k) {
    const double v = x.values[k];
    const double* row = weights.data() + static_cast<std::size_t>(x.indices[k]) * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += v * row[j];
  }
}

void affine_dense(std::span<const double> weights, std::size_t cols,
                  std::span<const double> bias, std::span<const double> x,
                  std::span<double> out) {
  for (std::size_t j = 0; j < cols; ++j) out[j] = bias[j];
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double* row = weights.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += v * row[j];
  }
}

void accumulate_outer_sparse(std::span<double> grad, std::size_t cols,
                             std::span<const SparseRow> xs, std::span<const double> deltas) {
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const double* d = deltas.data() + s * cols;
    for (std::size_t k = 0; k < xs[s].indices.size(); ++k) {
      const double v = xs[s].values[k];
      double* row = grad.data() + static_cast<std::size_t>(xs[s].indices[k]) * cols;
      for (std::size_t j = 0; j < cols; ++j) row[j] += v * d[j];
    }
  }
}

void accumulate_outer_dense(std::span<double> grad, std::size_t rows, std::size_t cols,
                            std::span<const double> hs, std::span<const double> deltas,
                            std::size_t batch) {
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double h = hs[s * rows + i];
      for (std::size_t j = 0; j < cols; ++j) grad[i * cols + j] += h * deltas[s * cols + j];
    }
  }
}

void adamw_update(std::span<double> params, std::span<const double> grads,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::uint64_t step, const AdamWHyper& hyper) {
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
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
  NearestResult best{0, -2.0};
  for (std::size_t e = 0; e < norms.size(); ++e) {
    double sim = 0.0;
    if (qn > 0.0 && norms[e] > 0.0) {
      const double* row = entries.data() + e * dim;
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += row[c] * query[c];
      sim = dot / (qn * norms[e]);
    }
    if (sim > best.similarity) best = {e, sim};
  }
  if (norms.empty()) best.similarity = 0.0;
  return best;
}

}  // namespace llmroute::kernels::serial
