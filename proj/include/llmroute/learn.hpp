// learn.hpp - trainable routing classifiers.
//
//   mlp : y = softmax(W2^T relu(W1^T x + b1) + b2)
//   head: y = softmax(W^T h + b), h a frozen sentence embedding
//
// Both are trained on temperature-softmax soft labels with a per-sample
// weighted cross-entropy, reduced over a batch as sum(w * loss) / sum(w),
// and optimized with Adam plus decoupled weight decay.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "llmroute/common.hpp"
#include "llmroute/embed.hpp"

namespace llmroute::learn {

enum class ModelKind { kMlp, kHead };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

// Weight matrices are row-major with shape fan_in x fan_out.
struct MlpParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> w1, b1, w2, b2;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct HeadParams {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> w, b;

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

using ModelParams = std::variant<MlpParams, HeadParams>;

ModelKind kind_of(const ModelParams& params);
std::size_t input_dim(const ModelParams& params);
std::size_t num_classes(const ModelParams& params);
std::vector<std::span<double>> tensors(ModelParams& params);
std::vector<std::span<const double>> tensors(const ModelParams& params);
// Same shape, all zeros.
ModelParams zeros_like(const ModelParams& params);

// Uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
MlpParams mlp_init(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                   std::uint64_t seed);
// All zeros: at lr 5e-5 random starting logits never wash out, and the
// head is convex in its weights anyway.
HeadParams head_init(std::size_t input_dim, std::size_t num_classes);

struct ForwardResult {
  std::vector<double> pre_hidden;  // mlp only
  std::vector<double> hidden;      // mlp only
  std::vector<double> logits;
  std::vector<double> probs;
};

ForwardResult forward(const ModelParams& params, const embed::SparseVector& x);

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

constexpr double kProbabilityFloor = 1e-12;

// -weight * sum_k target_k * ln(max(y_k, 1e-12))
double soft_cross_entropy(std::span<const double> y, std::span<const double> target,
                          double weight);

struct Sample {
  embed::SparseVector x;
  std::vector<double> target;
  double weight = 1.0;
};

using Batch = std::span<const Sample* const>;

// Weighted mean loss sum(w * ce) / sum(w); zero when the weights sum to 0.
double batch_loss(const ModelParams& params, Batch batch);

struct GradientResult {
  ModelParams grads;
  double loss = 0.0;
};

// Gradient of batch_loss. Weight decay is not included.
GradientResult gradients(const ModelParams& params, Batch batch);

struct TrainConfig {
  double learning_rate = 5e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 5;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t hidden_dim = 256;  // mlp only

  static TrainConfig mlp_defaults();
  static TrainConfig head_defaults();
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ModelParams& params);
};

// Throws Error(kTraining) on a non-finite gradient.
void optimizer_step(OptimizerState& state, ModelParams& params, const ModelParams& grads,
                    const TrainConfig& config);

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_trace;  // weighted mean loss per epoch
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, std::vector<double> trace)
      : Error(ErrorKind::kTraining, "learn", message), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

TrainResult train_classifier(std::span<const Sample> samples, ModelKind kind,
                             std::size_t input_dim, std::size_t num_classes,
                             const TrainConfig& config);

struct ModelFile {
  ModelParams params;
  TrainConfig config;
  std::vector<std::string> experts;
};

void save_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model(const std::filesystem::path& path);

}  // namespace llmroute::learn
