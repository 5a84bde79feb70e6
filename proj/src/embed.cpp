#include "llmroute/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace llmroute::embed {

double SparseVector::l2_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

DenseVector SparseVector::to_dense() const {
  DenseVector out(dimension, 0.0);
  for (std::size_t k = 0; k < indices.size(); ++k) out[indices[k]] = values[k];
  return out;
}

SparseVector SparseVector::from_dense(std::span<const double> dense) {
  SparseVector out;
  out.dimension = dense.size();
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] != 0.0) {
      out.indices.push_back(static_cast<std::uint32_t>(i));
      out.values.push_back(dense[i]);
    }
  }
  return out;
}

std::string to_string(VectorizerKind kind) {
  return kind == VectorizerKind::kBow ? "bow" : "tfidf";
}

VectorizerKind vectorizer_kind_from_string(std::string_view s) {
  if (s == "bow") return VectorizerKind::kBow;
  if (s == "tfidf") return VectorizerKind::kTfidf;
  throw config_error("embed", "unknown vectorizer kind '" + std::string(s) + "'");
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t min_frequency,
                       std::size_t max_size)
    : tokens_(std::move(tokens)), min_frequency_(min_frequency), max_size_(max_size) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<std::uint32_t>(i));
    if (!inserted) throw data_error("embed", "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

VectorizerModel fit_vectorizer(std::span<const std::string> corpus,
                               const VectorizerSettings& settings) {
  if (corpus.empty()) throw data_error("embed", "cannot fit a vectorizer on an empty corpus");
  if (settings.max_size == 0) throw config_error("embed", "vocabulary max_size must be >= 1");

  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // token -> (freq, df)
  for (const auto& doc : corpus) {
    auto tokens = tokenize(doc);
    std::sort(tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      auto& c = counts[tokens[i]];
      ++c.first;
      if (i == 0 || tokens[i] != tokens[i - 1]) ++c.second;
    }
  }

  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked;
  for (auto& [tok, c] : counts) {
    if (c.first >= settings.min_frequency) ranked.emplace_back(tok, c);
  }
  // Frequency descending, then token ascending; std::map order makes the
  // stable sort break ties lexicographically.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second.first > b.second.first;
  });
  if (ranked.size() > settings.max_size) ranked.resize(settings.max_size);

  VectorizerModel model;
  model.kind = settings.kind;
  model.documents = corpus.size();
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, c] : ranked) {
    tokens.push_back(tok);
    model.document_frequency.push_back(c.second);
  }
  model.vocabulary = Vocabulary(std::move(tokens), settings.min_frequency, settings.max_size);
  if (settings.kind == VectorizerKind::kTfidf) {
    const double n = static_cast<double>(model.documents);
    model.idf.reserve(model.document_frequency.size());
    for (std::size_t df : model.document_frequency) {
      model.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(df))) + 1.0);
    }
  }
  return model;
}

SparseVector vectorize(std::string_view text, const VectorizerModel& model) {
  std::map<std::uint32_t, double> counts;
  for (const auto& tok : tokenize(text)) {
    if (auto idx = model.vocabulary.find(tok)) counts[*idx] += 1.0;
  }
  SparseVector out;
  out.dimension = model.dimension();
  out.indices.reserve(counts.size());
  out.values.reserve(counts.size());
  for (auto [idx, c] : counts) {
    out.indices.push_back(idx);
    out.values.push_back(model.kind == VectorizerKind::kTfidf ? c * model.idf[idx] : c);
  }
  if (model.kind == VectorizerKind::kTfidf && !out.zero()) {
    const double norm = out.l2_norm();
    for (double& v : out.values) v /= norm;
  }
  return out;
}

namespace {

constexpr std::string_view kVectorizerMagic = "llmroute-vectorizer";
constexpr int kVectorizerVersion = 1;

std::string format_exact(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double parse_exact(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw data_error("embed", "bad number '" + s + "'");
  return v;
}

template <typename T>
T expect_field(std::istream& in, std::string_view key) {
  std::string name;
  T value{};
  if (!(in >> name >> value) || name != key) {
    throw data_error("embed", "vectorizer file: expected field '" + std::string(key) + "'");
  }
  return value;
}

}  // namespace

void write_vectorizer(std::ostream& out, const VectorizerModel& model) {
  out << kVectorizerMagic << ' ' << kVectorizerVersion << '\n';
  out << "kind " << to_string(model.kind) << '\n';
  out << "min_frequency " << model.vocabulary.min_frequency() << '\n';
  out << "max_size " << model.vocabulary.max_size() << '\n';
  out << "documents " << model.documents << '\n';
  out << "vocabulary " << model.vocabulary.size() << '\n';
  for (std::size_t i = 0; i < model.vocabulary.size(); ++i) {
    out << model.vocabulary.token(i) << ' ' << model.document_frequency[i] << ' '
        << (model.idf.empty() ? std::string("-") : format_exact(model.idf[i])) << '\n';
  }
}

VectorizerModel read_vectorizer(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kVectorizerMagic) {
    throw data_error("embed", "not a vectorizer file");
  }
  if (version != kVectorizerVersion) {
    throw data_error("embed", "unsupported vectorizer version " + std::to_string(version));
  }
  VectorizerModel model;
  model.kind = vectorizer_kind_from_string(expect_field<std::string>(in, "kind"));
  const auto min_freq = expect_field<std::size_t>(in, "min_frequency");
  const auto max_size = expect_field<std::size_t>(in, "max_size");
  model.documents = expect_field<std::size_t>(in, "documents");
  const auto size = expect_field<std::size_t>(in, "vocabulary");
  std::vector<std::string> tokens(size);
  model.document_frequency.resize(size);
  if (model.kind == VectorizerKind::kTfidf) model.idf.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    std::string idf;
    if (!(in >> tokens[i] >> model.document_frequency[i] >> idf)) {
      throw data_error("embed", "vectorizer file truncated at entry " + std::to_string(i));
    }
    if (model.kind == VectorizerKind::kTfidf) model.idf[i] = parse_exact(idf);
  }
  model.vocabulary = Vocabulary(std::move(tokens), min_freq, max_size);
  return model;
}

void save_vectorizer(const VectorizerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("embed", "cannot write " + path.string());
  write_vectorizer(out, model);
}

VectorizerModel load_vectorizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("embed", "cannot read " + path.string());
  return read_vectorizer(in);
}

CosineResult cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw data_error("embed", "cosine: dimension mismatch " + std::to_string(a.size()) +
                                  " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return {std::clamp(c, -1.0, 1.0), false};
}

CosineResult cosine(const SparseVector& a, const SparseVector& b) {
  if (a.dimension != b.dimension) throw data_error("embed", "cosine: dimension mismatch");
  double dot = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.indices.size() && j < b.indices.size()) {
    if (a.indices[i] == b.indices[j]) {
      dot += a.values[i++] * b.values[j++];
    } else if (a.indices[i] < b.indices[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const double na = a.l2_norm(), nb = b.l2_norm();
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  return {std::clamp(dot / (na * nb), -1.0, 1.0), false};
}

StubEmbedder::StubEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension == 0) throw config_error("embed", "stub embedder dimension must be >= 1");
}

std::string StubEmbedder::model_name() const {
  return "stub-hash-" + std::to_string(dimension_) + "-" + std::to_string(seed_);
}

void StubEmbedder::token_vector(std::string_view token, std::span<double> out) const {
  const std::uint64_t base = mix_seed(seed_, token);
  constexpr double kScale = 1.7320508075688772;  // sqrt(3): unit variance
  for (std::size_t c = 0; c < out.size(); ++c) {
    const std::uint64_t bits = splitmix64(base + c);
    const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
    out[c] = (2.0 * u - 1.0) * kScale;
  }
}

DenseVector StubEmbedder::embed(std::string_view text) const {
  auto tokens = tokenize(text);
  std::sort(tokens.begin(), tokens.end());
  DenseVector sum(dimension_, 0.0);
  if (tokens.empty()) return sum;
  DenseVector tv(dimension_);
  for (const auto& tok : tokens) {
    token_vector(tok, tv);
    for (std::size_t c = 0; c < dimension_; ++c) sum[c] += tv[c];
  }
  double norm = 0.0;
  for (double v : sum) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : sum) v /= norm;
  }
  return sum;
}

DenseVector embed(std::string_view text, const EmbeddingProvider& provider) {
  DenseVector v = provider.embed(text);
  if (v.size() != provider.dimension()) {
    throw EmbeddingError("provider '" + provider.model_name() + "' returned dimension " +
                             std::to_string(v.size()) + ", expected " +
                             std::to_string(provider.dimension()),
                         false, 1);
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw EmbeddingError("provider returned a non-finite value", false, 1);
  }
  return v;
}

}  // namespace llmroute::embed
