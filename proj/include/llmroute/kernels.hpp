// kernels.hpp - dense/sparse numeric kernels used by training and routing.
//
// Every kernel has a straightforward serial reference and an OpenMP
// version with the same signature. The parallel versions split work along
// an output dimension so each output element is accumulated in the same
// order as the serial one; results are bit-identical regardless of thread
// count.
//
// Matrices are row-major: element (r, c) of a rows x cols matrix is
// data[r * cols + c].

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace llmroute::kernels {

// Sparse input as parallel index/value arrays.
struct SparseRow {
  std::span<const std::uint32_t> indices;
  std::span<const double> values;
};

struct AdamWHyper {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

// Nearest entry by cosine; ties resolve to the smallest index. Zero-norm
// entries score 0.
struct NearestResult {
  std::size_t index = 0;
  double similarity = 0.0;
};

int max_threads();

namespace serial {

// out[j] = bias[j] + sum_i x[i] * weights[i, j]; weights has `cols` columns.
void affine_sparse(std::span<const double> weights, std::size_t cols,
                   std::span<const double> bias, SparseRow x, std::span<double> out);

void affine_dense(std::span<const double> weights, std::size_t cols,
                  std::span<const double> bias, std::span<const double> x,
                  std::span<double> out);

// grad[i, j] += sum_s xs[s][i] * deltas[s, j]; deltas is batch x cols.
void accumulate_outer_sparse(std::span<double> grad, std::size_t cols,
                             std::span<const SparseRow> xs, std::span<const double> deltas);

// grad[i, j] += sum_s hs[s, i] * deltas[s, j]; hs is batch x rows.
void accumulate_outer_dense(std::span<double> grad, std::size_t rows, std::size_t cols,
                            std::span<const double> hs, std::span<const double> deltas,
                            std::size_t batch);

// Bias-corrected adaptive-moment step plus decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * p)
void adamw_update(std::span<double> params, std::span<const double> grads,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::uint64_t step, const AdamWHyper& hyper);

NearestResult nearest_cosine(std::span<const double> entries, std::span<const double> norms,
                             std::size_t dim, std::span<const double> query);

}  // namespace serial

namespace parallel {

void affine_sparse(std::span<const double> weights, std::size_t cols,
                   std::span<const double> bias, SparseRow x, std::span<double> out);
void affine_dense(std::span<const double> weights, std::size_t cols,
                  std::span<const double> bias, std::span<const double> x,
                  std::span<double> out);
void accumulate_outer_sparse(std::span<double> grad, std::size_t cols,
                             std::span<const SparseRow> xs, std::span<const double> deltas);
void accumulate_outer_dense(std::span<double> grad, std::size_t rows, std::size_t cols,
                            std::span<const double> hs, std::span<const double> deltas,
                            std::size_t batch);
void adamw_update(std::span<double> params, std::span<const double> grads,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::uint64_t step, const AdamWHyper& hyper);
NearestResult nearest_cosine(std::span<const double> entries, std::span<const double> norms,
                             std::size_t dim, std::span<const double> query);

}  // namespace parallel

}  // namespace llmroute::kernels
