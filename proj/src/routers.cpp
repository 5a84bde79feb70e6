#include "llmroute/routers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "llmroute/kernels.hpp"

namespace llmroute::routers {

using nlohmann::json;

std::string expert_from_scores(std::span<const std::string> experts,
                               std::span<const double> scores) {
  if (experts.empty() || experts.size() != scores.size()) {
    throw data_error("routers", "score vector does not match the expert set");
  }
  return experts[argmax_first(scores)];
}

embed::SparseVector VectorizerEncoder::encode(std::string_view text) const {
  return embed::vectorize(text, *model_);
}

embed::SparseVector EmbeddingEncoder::encode(std::string_view text) const {
  const auto dense = embed::embed(text, *provider_);
  return embed::SparseVector::from_dense(dense);
}

Router::Router(std::vector<std::string> experts) : experts_(std::move(experts)) {
  if (experts_.empty()) throw config_error("routers", "router needs a non-empty expert set");
  std::sort(experts_.begin(), experts_.end());
  if (std::adjacent_find(experts_.begin(), experts_.end()) != experts_.end()) {
    throw config_error("routers", "duplicate expert names");
  }
}

RoutingDecision Router::route(std::string_view query_id, std::string_view text) const {
  RoutingDecision d;
  d.query_id = std::string(query_id);
  d.method = method();
  const auto start = std::chrono::steady_clock::now();
  decide(text, d);
  const auto stop = std::chrono::steady_clock::now();
  d.decision_latency_seconds =
      std::max(std::chrono::duration<double>(stop - start).count(), 1e-9);
  d.chosen_expert = expert_from_scores(experts_, d.scores);
  return d;
}

RandomRouter::RandomRouter(std::vector<std::string> experts, std::uint64_t seed)
    : Router(std::move(experts)), seed_(seed), rng_(seed) {}

void RandomRouter::decide(std::string_view, RoutingDecision& d) const {
  std::size_t pick;
  {
    std::lock_guard lock(mutex_);
    pick = rng_.index(experts().size());
  }
  // Uniform scores with the drawn expert nudged to the top so the decision
  // stays reproducible from its own score vector.
  const double e = static_cast<double>(experts().size());
  d.scores.assign(experts().size(), 1.0 / e);
  d.scores[pick] = std::nextafter(1.0 / e, 1.0);
}

KnnIndex build_knn(std::vector<std::string> query_ids, std::vector<std::string> labels,
                   std::span<const embed::DenseVector> embeddings) {
  if (query_ids.empty()) throw data_error("routers", "cannot build a 1NN index from an empty set");
  if (query_ids.size() != labels.size() || query_ids.size() != embeddings.size()) {
    throw data_error("routers", "1NN index: ids, labels and embeddings differ in length");
  }
  std::vector<std::size_t> order(query_ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return query_ids[a] < query_ids[b]; });

  KnnIndex index;
  index.dimension = embeddings[0].size();
  for (std::size_t i : order) {
    const auto& v = embeddings[i];
    if (v.size() != index.dimension) throw data_error("routers", "1NN index: ragged embeddings");
    index.query_ids.push_back(std::move(query_ids[i]));
    index.labels.push_back(std::move(labels[i]));
    index.embeddings.insert(index.embeddings.end(), v.begin(), v.end());
    double n = 0.0;
    for (double x : v) n += x * x;
    index.norms.push_back(std::sqrt(n));
  }
  return index;
}

KnnIndex build_knn(std::span<const dataprep::Query> train, std::span<const std::string> labels,
                   const embed::EmbeddingProvider& provider) {
  if (train.size() != labels.size()) throw data_error("routers", "1NN: one label per query needed");
  std::vector<std::string> ids;
  std::vector<embed::DenseVector> vecs;
  for (const auto& q : train) {
    ids.push_back(q.id);
    vecs.push_back(embed::embed(q.text, provider));
  }
  return build_knn(std::move(ids), std::vector<std::string>(labels.begin(), labels.end()), vecs);
}

Neighbor nearest_neighbor(const KnnIndex& index, std::span<const double> query) {
  if (index.size() == 0) throw data_error("routers", "empty 1NN index");
  if (query.size() != index.dimension) throw data_error("routers", "1NN query dimension mismatch");
  double qn = 0.0;
  for (double q : query) qn += q * q;
  if (qn == 0.0) return {0, 0.0, true};
  const auto r =
      kernels::parallel::nearest_cosine(index.embeddings, index.norms, index.dimension, query);
  return {r.index, r.similarity, false};
}

KnnRouter::KnnRouter(std::vector<std::string> experts, std::shared_ptr<const KnnIndex> index,
                     std::shared_ptr<const embed::EmbeddingProvider> provider)
    : Router(std::move(experts)), index_(std::move(index)), provider_(std::move(provider)) {
  if (!index_ || index_->size() == 0) throw config_error("routers", "1NN router needs an index");
  if (provider_->dimension() != index_->dimension) {
    throw config_error("routers", "1NN provider dimension differs from the index");
  }
  for (const auto& label : index_->labels) {
    if (!std::binary_search(this->experts().begin(), this->experts().end(), label)) {
      throw config_error("routers", "1NN label '" + label + "' is not in the expert set");
    }
  }
}

void KnnRouter::decide(std::string_view text, RoutingDecision& d) const {
  const auto q = embed::embed(text, *provider_);
  const Neighbor nb = nearest_neighbor(*index_, q);
  d.degenerate = nb.degenerate;
  d.neighbor_id = index_->query_ids[nb.index];
  // One-hot vote of the single neighbor.
  d.scores.assign(experts().size(), 0.0);
  const auto& label = index_->labels[nb.index];
  const auto it = std::lower_bound(experts().begin(), experts().end(), label);
  d.scores[static_cast<std::size_t>(it - experts().begin())] = 1.0;
}

LearnedRouter::LearnedRouter(std::string method, std::vector<std::string> experts,
                             learn::ModelParams params,
                             std::shared_ptr<const FeatureEncoder> encoder)
    : Router(std::move(experts)),
      method_(std::move(method)),
      params_(std::move(params)),
      encoder_(std::move(encoder)) {
  if (learn::num_classes(params_) != this->experts().size()) {
    throw config_error("routers", "model class count differs from the expert set");
  }
  if (learn::input_dim(params_) != encoder_->dimension()) {
    throw config_error("routers", "vector source dimension " +
                                      std::to_string(encoder_->dimension()) +
                                      " does not match model input " +
                                      std::to_string(learn::input_dim(params_)));
  }
}

void LearnedRouter::decide(std::string_view text, RoutingDecision& d) const {
  const auto x = encoder_->encode(text);
  d.degenerate = x.zero();
  d.scores = learn::forward(params_, x).probs;
}

std::vector<learn::Sample> encode_training_set(const dataprep::SplitDataset& dataset,
                                               const FeatureEncoder& encoder) {
  std::vector<learn::Sample> samples;
  samples.reserve(dataset.train.size());
  for (const auto& ex : dataset.train) {
    samples.push_back({encoder.encode(ex.query.text), ex.target, ex.weight});
  }
  return samples;
}

std::shared_ptr<const embed::EmbeddingProvider> make_provider(const json& config) {
  const std::string kind = config.value("kind", std::string("stub"));
  if (kind == "stub") {
    return std::make_shared<embed::StubEmbedder>(config.value("dimension", std::size_t{256}),
                                                 config.value("seed", std::uint64_t{42}));
  }
  if (kind == "remote") {
    embed::RemoteEmbedderOptions o;
    o.base_url = config.at("base_url").get<std::string>();
    o.path = config.value("path", o.path);
    o.model = config.value("model", std::string());
    o.dimension = config.at("dimension").get<std::size_t>();
    o.timeout_seconds = config.value("timeout_seconds", o.timeout_seconds);
    o.max_attempts = config.value("max_attempts", o.max_attempts);
    return std::make_shared<embed::RemoteEmbedder>(o);
  }
  throw config_error("routers", "unknown embedding provider kind '" + kind + "'");
}

namespace {

constexpr int kManifestVersion = 1;

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("routers", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("routers", "cannot read " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw config_error("routers", path.string() + " is not valid JSON");
  return j;
}

json base_manifest(const Router& r) {
  return json{{"format_version", kManifestVersion}, {"method", r.method()}, {"experts", r.experts()}};
}

}  // namespace

void save_random_router(const std::filesystem::path& dir, const RandomRouter& router) {
  std::filesystem::create_directories(dir);
  json m = base_manifest(router);
  m["seed"] = router.seed();
  write_json(dir / "manifest.json", m);
}

void save_knn_router(const std::filesystem::path& dir, const KnnRouter& router,
                     const json& provider_config) {
  std::filesystem::create_directories(dir);
  const auto& idx = router.index();
  std::ofstream out(dir / "knn_index.jsonl", std::ios::binary);
  if (!out) throw data_error("routers", "cannot write 1NN index");
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::vector<double> row(idx.embeddings.begin() + static_cast<std::ptrdiff_t>(i * idx.dimension),
                            idx.embeddings.begin() + static_cast<std::ptrdiff_t>((i + 1) * idx.dimension));
    out << json{{"query_id", idx.query_ids[i]}, {"label", idx.labels[i]}, {"embedding", row}}.dump()
        << '\n';
  }
  json m = base_manifest(router);
  m["vector_source"] = {{"kind", "embedding"}, {"provider", provider_config}};
  m["index"] = "knn_index.jsonl";
  write_json(dir / "manifest.json", m);
}

void save_learned_router(const std::filesystem::path& dir, const LearnedRouter& router,
                         const learn::TrainConfig& config, const json& vector_source,
                         const embed::VectorizerModel* vectorizer) {
  std::filesystem::create_directories(dir);
  json m = base_manifest(router);
  json source = vector_source;
  if (vectorizer) {
    embed::save_vectorizer(*vectorizer, dir / "vectorizer.txt");
    source["file"] = "vectorizer.txt";
  }
  m["vector_source"] = source;
  m["model"] = "model.bin";
  learn::save_model(dir / "model.bin", {router.params(), config, router.experts()});
  write_json(dir / "manifest.json", m);
}

std::unique_ptr<Router> load_router(const std::filesystem::path& manifest_path) {
  const json m = read_json(manifest_path);
  const auto dir = manifest_path.parent_path();
  try {
    if (m.at("format_version").get<int>() != kManifestVersion) {
      throw config_error("routers", "unsupported router manifest version");
    }
    const auto method = m.at("method").get<std::string>();
    auto experts = m.at("experts").get<std::vector<std::string>>();
    if (method == "random") {
      return std::make_unique<RandomRouter>(std::move(experts), m.value("seed", std::uint64_t{42}));
    }
    const json& source = m.at("vector_source");
    if (method == "knn") {
      auto provider = make_provider(source.at("provider"));
      std::ifstream in(dir / m.at("index").get<std::string>());
      if (!in) throw config_error("routers", "missing 1NN index file");
      std::vector<std::string> ids, labels;
      std::vector<embed::DenseVector> vecs;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = json::parse(line);
        ids.push_back(row.at("query_id").get<std::string>());
        labels.push_back(row.at("label").get<std::string>());
        vecs.push_back(row.at("embedding").get<embed::DenseVector>());
      }
      auto index = std::make_shared<const KnnIndex>(build_knn(std::move(ids), std::move(labels), vecs));
      return std::make_unique<KnnRouter>(std::move(experts), std::move(index), std::move(provider));
    }
    auto model = learn::load_model(dir / m.at("model").get<std::string>());
    const std::string source_kind = source.at("kind").get<std::string>();
    std::shared_ptr<const FeatureEncoder> encoder;
    if (source_kind == "embedding") {
      encoder = std::make_shared<EmbeddingEncoder>(make_provider(source.at("provider")));
    } else {
      auto vec = std::make_shared<const embed::VectorizerModel>(
          embed::load_vectorizer(dir / source.at("file").get<std::string>()));
      encoder = std::make_shared<VectorizerEncoder>(std::move(vec));
    }
    if (model.experts != experts) throw config_error("routers", "model and manifest expert sets differ");
    return std::make_unique<LearnedRouter>(method, std::move(experts), std::move(model.params),
                                           std::move(encoder));
  } catch (const json::exception& e) {
    throw config_error("routers", manifest_path.string() + ": " + e.what());
  }
}

}  // namespace llmroute::routers
