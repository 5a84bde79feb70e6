#include "llmroute/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "llmroute/routers.hpp"

namespace llmroute::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kAllMethods = {"random", "knn", "mlp", "head"};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw config_error("cli", "unknown key '" + key + "' in " + where);
  }
}

learn::TrainConfig train_config_from_json(const json& j, learn::TrainConfig c) {
  reject_unknown(j, {"learning_rate", "weight_decay", "batch_size", "epochs", "seed", "beta1",
                     "beta2", "epsilon", "hidden_dim"},
                 "train block");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cli", "cannot write " + path.string());
  out << text;
  if (!out.flush()) throw data_error("cli", "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cli", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path router_manifest(const RunConfig& c, const std::string& method) {
  return c.out / "routers" / method / "manifest.json";
}

}  // namespace

void RunConfig::validate() const {
  if (!(temperature > 0.0)) throw config_error("cli", "temperature must be > 0");
  if (trials < 1) throw config_error("cli", "trials must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw config_error("cli", "train_fraction must lie in (0, 1)");
  }
  if (methods.empty()) throw config_error("cli", "no router method selected");
  for (const auto& m : methods) {
    if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end()) {
      throw config_error("cli", "unknown method '" + m + "'");
    }
  }
  for (const auto& src : corpora) {
    if (!fs::exists(src.path)) throw config_error("cli", "corpus not found: " + src.path.string());
  }
  if (!fleet.empty() && !fs::exists(fleet)) throw config_error("cli", "fleet not found: " + fleet.string());
  mlp.validate();
  head.validate();
}

std::vector<std::string> expand_methods(const std::string& method) {
  if (method == "all") return kAllMethods;
  if (std::find(kAllMethods.begin(), kAllMethods.end(), method) == kAllMethods.end()) {
    throw config_error("cli", "unknown method '" + method + "'");
  }
  return {method};
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw config_error("cli", "run config must be a JSON object");
  reject_unknown(j, {"seed", "out", "corpora", "synthetic", "fleet", "remote_experts", "embedding",
                     "train_fraction", "temperature", "label_metric", "vectorizer", "train",
                     "trials", "methods", "pricing", "serve"},
                 "run config");
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("out")) c.out = resolve(base_dir, j["out"].get<std::string>());
    if (j.contains("corpora")) {
      for (const auto& e : j["corpora"]) {
        c.corpora.push_back({resolve(base_dir, e.at("path").get<std::string>()),
                             e.at("tag").get<std::string>()});
      }
    }
    if (j.contains("synthetic")) {
      const auto& s = j["synthetic"];
      reject_unknown(s, {"total", "counts", "query_words", "reference_words", "query_domain_share",
                         "reference_domain_share"},
                     "synthetic");
      if (s.contains("counts")) {
        c.synthetic.counts = s["counts"].get<std::map<std::string, std::size_t>>();
      } else if (s.contains("total")) {
        c.synthetic = simx::canonical_corpus_spec(s["total"].get<std::size_t>());
      }
      c.synthetic.query_words = s.value("query_words", c.synthetic.query_words);
      c.synthetic.reference_words = s.value("reference_words", c.synthetic.reference_words);
      c.synthetic.query_domain_share = s.value("query_domain_share", c.synthetic.query_domain_share);
      c.synthetic.reference_domain_share =
          s.value("reference_domain_share", c.synthetic.reference_domain_share);
    }
    if (j.contains("fleet")) c.fleet = resolve(base_dir, j["fleet"].get<std::string>());
    if (j.contains("remote_experts")) {
      for (const auto& e : j["remote_experts"]) {
        auto x = gateway::parse_endpoint_config(e);
        x.kind = gateway::AdaptorKind::kRemote;
        x.validate();
        c.remote_experts.push_back(std::move(x));
      }
    }
    if (j.contains("embedding")) c.embedding = j["embedding"];
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("label_metric")) {
      c.label_metric = dataprep::label_metric_from_string(j["label_metric"].get<std::string>());
    }
    if (j.contains("vectorizer")) {
      const auto& v = j["vectorizer"];
      reject_unknown(v, {"kind", "min_frequency", "max_size"}, "vectorizer");
      c.vectorizer.kind = embed::vectorizer_kind_from_string(v.value("kind", std::string("bow")));
      c.vectorizer.min_frequency = v.value("min_frequency", c.vectorizer.min_frequency);
      c.vectorizer.max_size = v.value("max_size", c.vectorizer.max_size);
    }
    c.mlp.seed = c.seed;
    c.head.seed = c.seed;
    if (j.contains("train")) {
      reject_unknown(j["train"], {"mlp", "head"}, "train");
      if (j["train"].contains("mlp")) c.mlp = train_config_from_json(j["train"]["mlp"], c.mlp);
      if (j["train"].contains("head")) c.head = train_config_from_json(j["train"]["head"], c.head);
    }
    c.trials = j.value("trials", c.trials);
    if (j.contains("methods")) {
      const auto& m = j["methods"];
      c.methods = m.is_string() ? expand_methods(m.get<std::string>())
                                : m.get<std::vector<std::string>>();
    }
    if (j.contains("pricing")) c.pricing = j["pricing"];
    if (j.contains("serve")) c.serve = j["serve"];
  } catch (const json::exception& e) {
    throw config_error("cli", std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  const auto j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw config_error("cli", path.string() + " is not valid JSON");
  return parse_run_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) {
    c.seed = *o.seed;
    c.mlp.seed = *o.seed;
    c.head.seed = *o.seed;
  }
  if (o.method) c.methods = expand_methods(*o.method);
  if (o.temperature) c.temperature = *o.temperature;
  if (o.trials) c.trials = *o.trials;
  if (o.out) c.out = *o.out;
}

std::vector<simx::SimExpertConfig> fleet_for(const RunConfig& c) {
  if (c.fleet.empty()) return simx::canonical_fleet(c.seed);
  return simx::parse_sim_fleet(read_text(c.fleet));
}

eval::PricingTable pricing_for(const RunConfig& c, const std::vector<simx::SimExpertConfig>& fleet) {
  auto table = eval::PricingTable::from_json(c.pricing);
  for (const auto& e : fleet) {
    if (!c.pricing.contains("experts") || !c.pricing["experts"].contains(e.expert_name)) {
      table.assign(e.expert_name, e.pricing_family);
    }
  }
  for (const auto& e : c.remote_experts) table.assign(e.expert_name, e.pricing_family);
  return table;
}

std::vector<dataprep::Query> load_corpus_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw config_error("cli", "no corpus at " + dir.string() + "; run prepare first");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<dataprep::Query> out;
  for (const auto& f : files) {
    auto r = dataprep::ingest_dataset(f, f.stem().string());
    if (!r.skipped.empty()) throw data_error("cli", "corrupt corpus file " + f.string());
    out.insert(out.end(), r.queries.begin(), r.queries.end());
  }
  return out;
}

PrepareSummary prepare(const RunConfig& c) {
  c.validate();
  fs::create_directories(c.out);
  const auto fleet = fleet_for(c);
  write_text(c.out / "fleet.json", simx::fleet_to_json(fleet) + "\n");

  json skipped = json::array();
  std::vector<dataprep::Query> queries;
  if (c.corpora.empty()) {
    queries = simx::generate_corpus(c.synthetic, c.seed);
  } else {
    for (const auto& src : c.corpora) {
      auto r = dataprep::ingest_dataset(src.path, src.tag);
      for (const auto& s : r.skipped) {
        skipped.push_back({{"dataset", src.tag}, {"line", s.line}, {"reason", s.reason}});
      }
      queries.insert(queries.end(), r.queries.begin(), r.queries.end());
    }
  }
  if (queries.empty()) throw data_error("dataprep", "no usable queries");
  {
    std::set<std::string> ids;
    for (const auto& q : queries) {
      if (!ids.insert(q.id).second) throw data_error("dataprep", "query id '" + q.id + "' occurs in two datasets");
    }
  }

  const auto corpus_dir = c.out / "corpus";
  fs::remove_all(corpus_dir);
  fs::create_directories(corpus_dir);
  std::map<std::string, std::vector<dataprep::Query>> per_tag;
  for (const auto& q : queries) per_tag[q.dataset_tag].push_back(q);
  for (const auto& [tag, qs] : per_tag) dataprep::write_corpus(corpus_dir / (tag + ".jsonl"), qs);

  dataprep::AdaptorMap adaptors;
  for (const auto& cfg : fleet) adaptors[cfg.expert_name] = std::make_shared<simx::SimulatedExpert>(cfg);
  std::map<std::string, std::string> templates;
  for (const auto& e : c.remote_experts) {
    if (adaptors.contains(e.expert_name)) throw config_error("cli", "expert '" + e.expert_name + "' defined twice");
    adaptors[e.expert_name] = std::make_shared<gateway::RemoteAdaptor>(e);
    templates[e.expert_name] = e.prompt_template;
  }
  dataprep::BuildOptions options;
  for (const auto& e : c.remote_experts) options.generation[e.expert_name] = e.params;
  options.prompt_builder = [templates](const std::string& expert, const dataprep::Query& q) {
    const auto it = templates.find(expert);
    return it == templates.end() ? q.text : gateway::render_prompt(it->second, q.text);
  };
  const auto embedder = routers::make_provider(c.embedding);
  const auto build = dataprep::build_prediction_dataset(queries, adaptors, *embedder, options);
  dataprep::write_predictions(c.out / "predictions.jsonl", build.records);

  std::vector<std::string> experts;
  for (const auto& [name, a] : adaptors) experts.push_back(name);
  const auto table = dataprep::group_by_query(build.records);
  const auto labels = dataprep::build_soft_labels(table, experts, c.temperature, c.label_metric);
  dataprep::write_soft_labels(c.out / "soft_labels.jsonl", labels);

  const auto split = dataprep::stratified_split(queries, c.train_fraction, c.seed);
  dataprep::write_split(c.out / "split.json", split, c.train_fraction, c.seed);

  json failures = json::array();
  for (const auto& f : build.failures) {
    failures.push_back({{"query_id", f.query_id}, {"expert", f.expert_name}, {"message", f.message}});
  }
  PrepareSummary s{queries.size(), build.records.size(), skipped.size(), build.failures.size(),
                   split.train.size(), split.test.size()};
  const json summary = {{"queries", s.queries},
                        {"records", s.records},
                        {"experts", experts},
                        {"skipped", skipped},
                        {"failures", failures},
                        {"incomplete_queries", build.incomplete_queries},
                        {"train", s.train},
                        {"test", s.test},
                        {"seed", c.seed},
                        {"temperature", c.temperature}};
  write_text(c.out / "prepare_summary.json", summary.dump(2) + "\n");
  return s;
}

dataprep::SplitDataset load_dataset(const RunConfig& c) {
  const auto queries = load_corpus_dir(c.out / "corpus");
  if (!fs::exists(c.out / "split.json") || !fs::exists(c.out / "predictions.jsonl")) {
    throw config_error("cli", "missing split or predictions under " + c.out.string() + "; run prepare first");
  }
  const auto split = dataprep::read_split(c.out / "split.json", queries);
  const auto records = dataprep::read_predictions(c.out / "predictions.jsonl");
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.expert_name);
  const std::vector<std::string> experts(names.begin(), names.end());
  return dataprep::assemble_dataset(split, dataprep::group_by_query(records), experts,
                                    {c.temperature, c.label_metric});
}

std::vector<TrainSummary> train(const RunConfig& c) {
  c.validate();
  const auto dataset = load_dataset(c);
  if (dataset.train.empty()) throw data_error("learn", "empty training split");
  std::vector<TrainSummary> out;
  for (const auto& method : c.methods) {
    const auto dir = c.out / "routers" / method;
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainSummary summary{method, {}};
    if (method == "random") {
      routers::save_random_router(dir, routers::RandomRouter(dataset.experts, c.seed));
    } else if (method == "knn") {
      const auto provider = routers::make_provider(c.embedding);
      std::vector<dataprep::Query> queries;
      std::vector<std::string> labels;
      for (const auto& ex : dataset.train) {
        queries.push_back(ex.query);
        labels.push_back(ex.best_expert);
      }
      auto index = std::make_shared<const routers::KnnIndex>(routers::build_knn(queries, labels, *provider));
      routers::save_knn_router(dir, routers::KnnRouter(dataset.experts, index, provider), c.embedding);
    } else {
      std::shared_ptr<const routers::FeatureEncoder> encoder;
      std::shared_ptr<const embed::VectorizerModel> vectorizer;
      json source;
      learn::TrainConfig tc = method == "mlp" ? c.mlp : c.head;
      learn::ModelKind kind = method == "mlp" ? learn::ModelKind::kMlp : learn::ModelKind::kHead;
      if (method == "mlp") {
        std::vector<std::string> texts;
        for (const auto& ex : dataset.train) texts.push_back(ex.query.text);
        vectorizer = std::make_shared<const embed::VectorizerModel>(embed::fit_vectorizer(texts, c.vectorizer));
        encoder = std::make_shared<routers::VectorizerEncoder>(vectorizer);
        source = {{"kind", embed::to_string(c.vectorizer.kind)}};
      } else {
        encoder = std::make_shared<routers::EmbeddingEncoder>(routers::make_provider(c.embedding));
        source = {{"kind", "embedding"}, {"provider", c.embedding}};
      }
      const auto samples = routers::encode_training_set(dataset, *encoder);
      auto result = learn::train_classifier(samples, kind, encoder->dimension(), dataset.experts.size(), tc);
      summary.loss_trace = result.loss_trace;
      routers::LearnedRouter router(method, dataset.experts, std::move(result.params), encoder);
      routers::save_learned_router(dir, router, tc, source, vectorizer.get());
      write_text(dir / "loss_trace.json",
                 json{{"method", method}, {"epoch_loss", summary.loss_trace}}.dump(2) + "\n");
    }
    out.push_back(std::move(summary));
  }
  return out;
}

eval::Report evaluate(const RunConfig& c) {
  c.validate();
  const auto dataset = load_dataset(c);
  std::vector<simx::SimExpertConfig> fleet;
  if (fs::exists(c.out / "fleet.json")) fleet = simx::parse_sim_fleet(read_text(c.out / "fleet.json"));
  const auto pricing = pricing_for(c, fleet);

  std::vector<std::unique_ptr<routers::Router>> loaded;
  bool include_random = false;
  for (const auto& method : c.methods) {
    if (method == "random") {
      include_random = true;
      continue;
    }
    const auto manifest = router_manifest(c, method);
    if (!fs::exists(manifest)) {
      throw config_error("cli", "no trained '" + method + "' router at " + manifest.string());
    }
    loaded.push_back(routers::load_router(manifest));
  }
  std::vector<const routers::Router*> ptrs;
  for (const auto& r : loaded) ptrs.push_back(r.get());

  eval::EvaluationOptions options;
  options.include_random = include_random;
  options.trials = c.trials;
  options.seed = c.seed;
  auto report = eval::evaluate(dataset, pricing, ptrs, options);
  fs::create_directories(c.out / "reports");
  eval::emit_report(report, c.out / "reports" / "report.json", eval::ReportFormat::kStructured);
  eval::emit_report(report, c.out / "reports" / "report.tsv", eval::ReportFormat::kTabular);
  return report;
}

eval::Report simulate(const RunConfig& config) {
  RunConfig c = config;
  c.corpora.clear();
  c.remote_experts.clear();
  prepare(c);
  train(c);
  return evaluate(c);
}

gateway::GatewayConfig serve_config(const RunConfig& c) {
  if (c.serve.contains("experts")) return gateway::parse_gateway_config(c.serve, c.base_dir);

  reject_unknown(c.serve, {"host", "port", "default_method", "locality_policy", "local_experts",
                           "fallback", "timeout_seconds", "templates"},
                 "serve");
  const auto fleet_path = c.out / "fleet.json";
  if (!fs::exists(fleet_path)) throw config_error("cli", "no fleet at " + fleet_path.string() + "; run prepare first");
  const auto fleet = simx::parse_sim_fleet(read_text(fleet_path));
  const auto local = c.serve.value("local_experts", std::vector<std::string>{});
  const auto templates = c.serve.value("templates", std::map<std::string, std::string>{});

  json g;
  g["fleet"] = fleet_path.string();
  g["experts"] = json::array();
  for (const auto& e : fleet) {
    const bool is_local = std::find(local.begin(), local.end(), e.expert_name) != local.end();
    const auto t = templates.find(e.expert_name);
    g["experts"].push_back({{"name", e.expert_name},
                            {"kind", "simulated"},
                            {"locality", is_local ? "local" : "cloud"},
                            {"template", t == templates.end() ? std::string(gateway::kPlaceholder) : t->second},
                            {"pricing_family", e.pricing_family}});
  }
  for (const auto& e : c.remote_experts) {
    g["experts"].push_back({{"name", e.expert_name},
                            {"kind", "remote"},
                            {"locality", e.locality == Locality::kLocal ? "local" : "cloud"},
                            {"template", e.prompt_template},
                            {"generation", {{"max_tokens", e.params.max_tokens},
                                            {"temperature", e.params.temperature},
                                            {"top_p", e.params.top_p}}},
                            {"pricing_family", e.pricing_family},
                            {"base_url", e.base_url},
                            {"path", e.path},
                            {"model", e.model}});
  }
  g["routers"] = json::object();
  for (const auto& m : kAllMethods) {
    if (fs::exists(router_manifest(c, m))) g["routers"][m] = router_manifest(c, m).string();
  }
  if (g["routers"].empty()) throw config_error("cli", "no trained routers under " + (c.out / "routers").string());
  std::string method = c.serve.value("default_method", std::string());
  if (method.empty()) {
    for (const char* preferred : {"head", "mlp", "knn", "random"}) {
      if (g["routers"].contains(preferred)) {
        method = preferred;
        break;
      }
    }
  }
  g["default_method"] = method;
  g["locality_policy"] = c.serve.value("locality_policy", false);
  g["timeout_seconds"] = c.serve.value("timeout_seconds", 60.0);
  if (c.serve.contains("fallback")) g["fallback"] = c.serve["fallback"];
  g["pricing"] = c.pricing;
  g["listen"] = {{"host", c.serve.value("host", std::string("127.0.0.1"))},
                 {"port", c.serve.value("port", 8080)}};
  return gateway::parse_gateway_config(g, c.out);
}

}  // namespace llmroute::pipeline
