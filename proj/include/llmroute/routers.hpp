// routers.hpp - routing decision functions behind one interface: random,
// 1-nearest-neighbor over sentence embeddings, and the learned classifiers
// (BoW MLP and embedding head).
//
// Routers are immutable after construction apart from the random router's
// generator, which is guarded by a mutex. The expert list is kept sorted, so
// "first maximum" is also the lexicographic tie-break.

#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "llmroute/dataprep.hpp"
#include "llmroute/embed.hpp"
#include "llmroute/learn.hpp"

namespace llmroute::routers {

struct RoutingDecision {
  std::string query_id;
  std::string chosen_expert;
  std::vector<double> scores;  // aligned with Router::experts()
  std::string method;
  double decision_latency_seconds = 0.0;
  bool degenerate = false;  // zero-norm input representation
  std::optional<std::string> neighbor_id;  // 1NN only
};

// The expert picked by argmax + lexicographic tie-break over `scores`.
std::string expert_from_scores(std::span<const std::string> experts,
                               std::span<const double> scores);

// Text -> model input. Implementations are immutable.
class FeatureEncoder {
 public:
  virtual ~FeatureEncoder() = default;
  virtual embed::SparseVector encode(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
};

class VectorizerEncoder final : public FeatureEncoder {
 public:
  explicit VectorizerEncoder(std::shared_ptr<const embed::VectorizerModel> model)
      : model_(std::move(model)) {}
  embed::SparseVector encode(std::string_view text) const override;
  std::size_t dimension() const override { return model_->dimension(); }
  const embed::VectorizerModel& model() const { return *model_; }

 private:
  std::shared_ptr<const embed::VectorizerModel> model_;
};

class EmbeddingEncoder final : public FeatureEncoder {
 public:
  explicit EmbeddingEncoder(std::shared_ptr<const embed::EmbeddingProvider> provider)
      : provider_(std::move(provider)) {}
  embed::SparseVector encode(std::string_view text) const override;
  std::size_t dimension() const override { return provider_->dimension(); }

 private:
  std::shared_ptr<const embed::EmbeddingProvider> provider_;
};

class Router {
 public:
  explicit Router(std::vector<std::string> experts);
  virtual ~Router() = default;

  virtual std::string method() const = 0;
  const std::vector<std::string>& experts() const { return experts_; }

  // Times the decision only; expert execution is not included.
  RoutingDecision route(std::string_view query_id, std::string_view text) const;

 protected:
  virtual void decide(std::string_view text, RoutingDecision& decision) const = 0;

 private:
  std::vector<std::string> experts_;
};

class RandomRouter final : public Router {
 public:
  RandomRouter(std::vector<std::string> experts, std::uint64_t seed);
  std::string method() const override { return "random"; }
  std::uint64_t seed() const { return seed_; }

 protected:
  void decide(std::string_view text, RoutingDecision& decision) const override;

 private:
  std::uint64_t seed_;
  mutable std::mutex mutex_;
  mutable Rng rng_;
};

struct KnnIndex {
  std::size_t dimension = 0;
  std::vector<std::string> query_ids;  // sorted ascending
  std::vector<std::string> labels;     // best expert per training query
  std::vector<double> embeddings;      // row-major, one row per entry
  std::vector<double> norms;

  std::size_t size() const { return query_ids.size(); }
};

KnnIndex build_knn(std::span<const dataprep::Query> train, std::span<const std::string> labels,
                   const embed::EmbeddingProvider& provider);
// Same, from precomputed vectors (used by tests and reload).
KnnIndex build_knn(std::vector<std::string> query_ids, std::vector<std::string> labels,
                   std::span<const embed::DenseVector> embeddings);

struct Neighbor {
  std::size_t index = 0;
  double similarity = 0.0;
  bool degenerate = false;
};

// Maximal cosine similarity; ties resolve to the smallest query id.
Neighbor nearest_neighbor(const KnnIndex& index, std::span<const double> query);

class KnnRouter final : public Router {
 public:
  KnnRouter(std::vector<std::string> experts, std::shared_ptr<const KnnIndex> index,
            std::shared_ptr<const embed::EmbeddingProvider> provider);
  std::string method() const override { return "knn"; }
  const KnnIndex& index() const { return *index_; }

 protected:
  void decide(std::string_view text, RoutingDecision& decision) const override;

 private:
  std::shared_ptr<const KnnIndex> index_;
  std::shared_ptr<const embed::EmbeddingProvider> provider_;
};

class LearnedRouter final : public Router {
 public:
  LearnedRouter(std::string method, std::vector<std::string> experts, learn::ModelParams params,
                std::shared_ptr<const FeatureEncoder> encoder);
  std::string method() const override { return method_; }
  const learn::ModelParams& params() const { return params_; }

 protected:
  void decide(std::string_view text, RoutingDecision& decision) const override;

 private:
  std::string method_;
  learn::ModelParams params_;
  std::shared_ptr<const FeatureEncoder> encoder_;
};

// Training samples for a classifier: encoded prompt, soft label, weight.
std::vector<learn::Sample> encode_training_set(const dataprep::SplitDataset& dataset,
                                               const FeatureEncoder& encoder);

// Embedding provider from a config object:
//   {"kind": "stub", "dimension": 256, "seed": 42}
//   {"kind": "remote", "base_url": ..., "path": ..., "model": ..., "dimension": ...}
std::shared_ptr<const embed::EmbeddingProvider> make_provider(const nlohmann::json& config);

// Router artifacts live in one directory with a manifest.json naming the
// method, expert set, vector source and model files.
void save_random_router(const std::filesystem::path& dir, const RandomRouter& router);
void save_knn_router(const std::filesystem::path& dir, const KnnRouter& router,
                     const nlohmann::json& provider_config);
void save_learned_router(const std::filesystem::path& dir, const LearnedRouter& router,
                         const learn::TrainConfig& config, const nlohmann::json& vector_source,
                         const embed::VectorizerModel* vectorizer);

std::unique_ptr<Router> load_router(const std::filesystem::path& manifest_path);

}  // namespace llmroute::routers
