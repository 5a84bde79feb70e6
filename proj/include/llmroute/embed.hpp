// embed.hpp - tokenization, Bag-of-Words / TF-IDF vectorization, embedding
// providers and cosine similarity.
//
// Vectorizer models and vocabularies are immutable once fitted and may be
// shared between threads. Providers expose a synchronous embed() call.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "llmroute/common.hpp"

namespace llmroute::embed {

// Lowercases and splits on every non-alphanumeric code point (UTF-8 aware).
std::vector<std::string> tokenize(std::string_view text);

using DenseVector = std::vector<double>;

// Sorted (index, value) pairs over a fixed dimension.
struct SparseVector {
  std::size_t dimension = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  // True when nothing was in vocabulary.
  bool zero() const { return indices.empty(); }
  std::size_t nnz() const { return indices.size(); }
  double l2_norm() const;
  DenseVector to_dense() const;

  static SparseVector from_dense(std::span<const double> dense);
};

enum class VectorizerKind { kBow, kTfidf };

std::string to_string(VectorizerKind kind);
VectorizerKind vectorizer_kind_from_string(std::string_view s);

struct VectorizerSettings {
  VectorizerKind kind = VectorizerKind::kBow;
  std::size_t min_frequency = 1;
  std::size_t max_size = 30000;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, std::size_t min_frequency,
             std::size_t max_size);

  std::optional<std::uint32_t> find(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t index) const { return tokens_[index]; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t min_frequency() const { return min_frequency_; }
  std::size_t max_size() const { return max_size_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.min_frequency_ == b.min_frequency_ &&
           a.max_size_ == b.max_size_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::size_t min_frequency_ = 1;
  std::size_t max_size_ = 0;
};

struct VectorizerModel {
  VectorizerKind kind = VectorizerKind::kBow;
  Vocabulary vocabulary;
  std::size_t documents = 0;
  std::vector<std::size_t> document_frequency;  // parallel to vocabulary
  std::vector<double> idf;                      // empty for bow

  std::size_t dimension() const { return vocabulary.size(); }

  friend bool operator==(const VectorizerModel&, const VectorizerModel&) = default;
};

VectorizerModel fit_vectorizer(std::span<const std::string> corpus,
                               const VectorizerSettings& settings);

// bow: raw counts. tfidf: count * idf, L2-normalized. OOV tokens dropped.
SparseVector vectorize(std::string_view text, const VectorizerModel& model);

void write_vectorizer(std::ostream& out, const VectorizerModel& model);
VectorizerModel read_vectorizer(std::istream& in);
void save_vectorizer(const VectorizerModel& model, const std::filesystem::path& path);
VectorizerModel load_vectorizer(const std::filesystem::path& path);

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // a zero-norm operand; value is 0
};

CosineResult cosine(std::span<const double> a, std::span<const double> b);
CosineResult cosine(const SparseVector& a, const SparseVector& b);

// Provider failure with retry metadata.
class EmbeddingError : public Error {
 public:
  EmbeddingError(const std::string& message, bool retryable, int attempts)
      : Error(ErrorKind::kData, "embed", message),
        retryable_(retryable),
        attempts_(attempts) {}
  bool retryable() const { return retryable_; }
  int attempts() const { return attempts_; }

 private:
  bool retryable_;
  int attempts_;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string model_name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual DenseVector embed(std::string_view text) const = 0;
};

// Offline provider: each token hashes to a fixed pseudo-random direction,
// token vectors are mean-pooled in sorted token order and L2-normalized.
// Equal token multisets therefore give bit-identical vectors.
class StubEmbedder final : public EmbeddingProvider {
 public:
  explicit StubEmbedder(std::size_t dimension = 256, std::uint64_t seed = 42);

  std::string model_name() const override;
  std::size_t dimension() const override { return dimension_; }
  DenseVector embed(std::string_view text) const override;

  void token_vector(std::string_view token, std::span<double> out) const;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

struct RemoteEmbedderOptions {
  std::string base_url;  // e.g. http://127.0.0.1:8081
  std::string path = "/v1/embed";
  std::string model;
  std::size_t dimension = 0;
  double timeout_seconds = 10.0;
  int max_attempts = 3;
};

// Wire contract: POST {"model", "text"} -> {"embedding": [numbers]}.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  explicit RemoteEmbedder(RemoteEmbedderOptions options);

  std::string model_name() const override { return options_.model; }
  std::size_t dimension() const override { return options_.dimension; }
  DenseVector embed(std::string_view text) const override;

 private:
  RemoteEmbedderOptions options_;
};

// Calls the provider and checks the advertised dimension.
DenseVector embed(std::string_view text, const EmbeddingProvider& provider);

}  // namespace llmroute::embed
