#include "llmroute/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "json.hpp"

namespace llmroute::dataprep {

using nlohmann::json;

void PredictionRecord::validate() const {
  if (query_id.empty() || expert_name.empty()) {
    throw data_error("dataprep", "prediction record without query_id/expert_name");
  }
  if (!(inference_seconds > 0.0)) {
    throw data_error("dataprep", "record " + query_id + "/" + expert_name +
                                     ": inference_seconds must be > 0");
  }
  if (!(bert_sim >= -1.0 && bert_sim <= 1.0)) {
    throw data_error("dataprep", "record " + query_id + "/" + expert_name +
                                     ": bert_sim outside [-1, 1]");
  }
  if (nll && !(*nll >= 0.0)) {
    throw data_error("dataprep", "record " + query_id + "/" + expert_name + ": nll < 0");
  }
  if (input_tokens < 0 || output_tokens < 0) {
    throw data_error("dataprep", "record " + query_id + "/" + expert_name +
                                     ": negative token count");
  }
}

IngestResult ingest_dataset(const std::filesystem::path& path, const std::string& dataset_tag) {
  if (dataset_tag.empty()) throw config_error("dataprep", "dataset_tag must be non-empty");
  std::ifstream in(path);
  if (!in) throw data_error("dataprep", "cannot open corpus " + path.string());

  IngestResult result;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto doc = json::parse(line, nullptr, false);
    auto skip = [&](std::string reason) {
      result.skipped.push_back({line_no, std::move(reason)});
    };
    if (doc.is_discarded() || !doc.is_object()) {
      skip("not a JSON object");
      continue;
    }
    const auto text_field = [&](const char* key) -> const json* {
      auto it = doc.find(key);
      return (it != doc.end() && it->is_string()) ? &*it : nullptr;
    };
    const json* id = text_field("id");
    const json* instruction = text_field("instruction");
    const json* reference = text_field("reference");
    if (!id || !instruction || !reference) {
      skip("missing id/instruction/reference string field");
      continue;
    }
    Query q{id->get<std::string>(), instruction->get<std::string>(),
            reference->get<std::string>(), dataset_tag};
    if (q.id.empty() || q.text.empty()) {
      skip("empty id or instruction");
      continue;
    }
    if (!seen.insert(q.id).second) {
      skip("duplicate id '" + q.id + "'");
      continue;
    }
    result.queries.push_back(std::move(q));
  }
  return result;
}

void write_corpus(const std::filesystem::path& path, std::span<const Query> queries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("dataprep", "cannot write " + path.string());
  for (const auto& q : queries) {
    out << json{{"id", q.id}, {"instruction", q.text}, {"reference", q.reference}}.dump()
        << '\n';
  }
}

namespace {

json record_to_json(const PredictionRecord& r) {
  return json{{"query_id", r.query_id},
              {"expert_name", r.expert_name},
              {"nll", r.nll ? json(*r.nll) : json(nullptr)},
              {"bert_sim", r.bert_sim},
              {"inference_seconds", r.inference_seconds},
              {"input_tokens", r.input_tokens},
              {"output_tokens", r.output_tokens},
              {"response_text", r.response_text}};
}

PredictionRecord record_from_json(const json& j) {
  PredictionRecord r;
  r.query_id = j.at("query_id").get<std::string>();
  r.expert_name = j.at("expert_name").get<std::string>();
  if (!j.at("nll").is_null()) r.nll = j.at("nll").get<double>();
  r.bert_sim = j.at("bert_sim").get<double>();
  r.inference_seconds = j.at("inference_seconds").get<double>();
  r.input_tokens = j.at("input_tokens").get<long>();
  r.output_tokens = j.at("output_tokens").get<long>();
  r.response_text = j.at("response_text").get<std::string>();
  r.validate();
  return r;
}

}  // namespace

void write_predictions(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("dataprep", "cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("dataprep", "cannot open " + path.string());
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw data_error("dataprep", path.string() + ":" + std::to_string(line_no) + ": " +
                                       e.what());
    }
  }
  return records;
}

PredictionBuild build_prediction_dataset(std::span<const Query> queries,
                                         const AdaptorMap& adaptors,
                                         const embed::EmbeddingProvider& embedder,
                                         const BuildOptions& options) {
  if (adaptors.empty()) throw config_error("dataprep", "no expert adaptors configured");

  struct Outcome {
    std::optional<ExpertReply> reply;
    std::string error;
  };

  PredictionBuild build;
  for (const auto& query : queries) {
    auto run = [&](const std::string& name, ExpertAdaptor& adaptor) -> Outcome {
      ExpertRequest req;
      req.prompt = options.prompt_builder ? options.prompt_builder(name, query) : query.text;
      if (auto it = options.generation.find(name); it != options.generation.end()) {
        req.params = it->second;
      }
      req.timeout_seconds = options.timeout_seconds;
      req.query_id = query.id;
      req.dataset_tag = query.dataset_tag;
      req.reference = query.reference;
      try {
        return {adaptor.execute(req), {}};
      } catch (const std::exception& e) {
        return {std::nullopt, e.what()};
      }
    };

    std::vector<Outcome> outcomes;
    outcomes.reserve(adaptors.size());
    if (options.concurrent_experts && adaptors.size() > 1) {
      std::vector<std::future<Outcome>> pending;
      for (const auto& [name, adaptor] : adaptors) {
        pending.push_back(std::async(std::launch::async, run, std::cref(name), std::ref(*adaptor)));
      }
      for (auto& f : pending) outcomes.push_back(f.get());
    } else {
      for (const auto& [name, adaptor] : adaptors) outcomes.push_back(run(name, *adaptor));
    }

    const embed::DenseVector ref_vec = embed::embed(query.reference, embedder);
    std::size_t k = 0;
    for (const auto& [name, adaptor] : adaptors) {
      Outcome& out = outcomes[k++];
      if (out.reply && !(out.reply->elapsed_seconds > 0.0)) {
        out.error = "non-positive elapsed time";
        out.reply.reset();
      }
      if (!out.reply) {
        build.failures.push_back({query.id, name, out.error});
        build.incomplete_queries.insert(query.id);
        continue;
      }
      const ExpertReply& reply = *out.reply;
      PredictionRecord rec;
      rec.query_id = query.id;
      rec.expert_name = name;
      rec.nll = reply.mean_nll();
      rec.bert_sim = embed::cosine(ref_vec, embed::embed(reply.response_text, embedder)).value;
      rec.inference_seconds = reply.elapsed_seconds;
      rec.input_tokens = std::max(1L, reply.input_tokens);
      rec.output_tokens = std::max(0L, reply.output_tokens);
      rec.response_text = reply.response_text;
      build.records.push_back(std::move(rec));
    }
  }
  std::sort(build.records.begin(), build.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.query_id, a.expert_name) < std::tie(b.query_id, b.expert_name);
  });
  return build;
}

std::vector<double> soft_labels(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw data_error("dataprep", "soft_labels: empty score vector");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw config_error("dataprep", "soft_labels: temperature must be a positive finite value");
  }
  double hi = scores[0];
  for (double s : scores) {
    if (!std::isfinite(s)) throw data_error("dataprep", "soft_labels: non-finite score");
    hi = std::max(hi, s);
  }
  std::vector<double> probs(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    probs[i] = std::exp((scores[i] - hi) / temperature);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

LabelMetric label_metric_from_string(const std::string& s) {
  if (s == "bert_sim") return LabelMetric::kBertSim;
  if (s == "neg_nll" || s == "nll") return LabelMetric::kNegatedNll;
  throw config_error("dataprep", "unknown label metric '" + s + "'");
}

std::vector<double> SoftLabelRow::as_vector(std::span<const std::string> experts) const {
  std::vector<double> v;
  v.reserve(experts.size());
  for (const auto& e : experts) {
    auto it = probs.find(e);
    if (it == probs.end()) {
      throw data_error("dataprep", "soft label for " + query_id + " lacks expert " + e);
    }
    v.push_back(it->second);
  }
  return v;
}

RecordTable group_by_query(std::span<const PredictionRecord> records) {
  RecordTable table;
  for (const auto& r : records) {
    if (!table[r.query_id].emplace(r.expert_name, r).second) {
      throw data_error("dataprep", "duplicate record for " + r.query_id + "/" + r.expert_name);
    }
  }
  return table;
}

namespace {

std::optional<std::vector<double>> metric_vector(
    const std::map<std::string, PredictionRecord>& by_expert,
    std::span<const std::string> experts, LabelMetric metric) {
  std::vector<double> scores;
  scores.reserve(experts.size());
  for (const auto& e : experts) {
    auto it = by_expert.find(e);
    if (it == by_expert.end()) return std::nullopt;
    if (metric == LabelMetric::kBertSim) {
      scores.push_back(it->second.bert_sim);
    } else {
      if (!it->second.nll) return std::nullopt;
      scores.push_back(-*it->second.nll);
    }
  }
  return scores;
}

}  // namespace

std::vector<SoftLabelRow> build_soft_labels(const RecordTable& table,
                                            std::span<const std::string> experts,
                                            double temperature, LabelMetric metric) {
  std::vector<SoftLabelRow> rows;
  for (const auto& [qid, by_expert] : table) {
    auto scores = metric_vector(by_expert, experts, metric);
    if (!scores) continue;
    auto probs = soft_labels(*scores, temperature);
    SoftLabelRow row{qid, {}};
    for (std::size_t i = 0; i < experts.size(); ++i) row.probs[experts[i]] = probs[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_soft_labels(const std::filesystem::path& path, std::span<const SoftLabelRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("dataprep", "cannot write " + path.string());
  for (const auto& r : rows) out << json{{"query_id", r.query_id}, {"probs", r.probs}}.dump() << '\n';
}

std::vector<SoftLabelRow> read_soft_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("dataprep", "cannot open " + path.string());
  std::vector<SoftLabelRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    rows.push_back({j.at("query_id").get<std::string>(),
                    j.at("probs").get<std::map<std::string, double>>()});
  }
  return rows;
}

QuerySplit stratified_split(std::span<const Query> queries, double train_fraction,
                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw config_error("dataprep", "train_fraction must lie in (0, 1)");
  }
  std::map<std::string, std::vector<Query>> by_tag;
  for (const auto& q : queries) by_tag[q.dataset_tag].push_back(q);

  QuerySplit split;
  for (auto& [tag, group] : by_tag) {
    const std::size_t n = group.size();
    if (n < 2) {
      throw data_error("dataprep", "dataset '" + tag + "' has " + std::to_string(n) +
                                       " record(s); at least 2 are needed to stratify");
    }
    std::sort(group.begin(), group.end(), [](const Query& a, const Query& b) { return a.id < b.id; });
    Rng rng(mix_seed(seed, tag));
    rng.shuffle(std::span<Query>(group));
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      (i < n_train ? split.train : split.test).push_back(std::move(group[i]));
    }
  }
  auto by_id = [](const Query& a, const Query& b) { return a.id < b.id; };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  return split;
}

SampleWeights sample_weights(const std::map<std::string, std::size_t>& class_counts) {
  if (class_counts.empty()) throw data_error("dataprep", "sample_weights: no classes");
  double total = 0.0;
  for (const auto& [name, count] : class_counts) {
    if (count == 0) throw data_error("dataprep", "sample_weights: class '" + name + "' is empty");
    total += static_cast<double>(count);
  }
  SampleWeights w;
  double raw_sum = 0.0;
  for (const auto& [name, count] : class_counts) {
    const double raw = total / static_cast<double>(count);
    w.per_class[name] = raw;
    raw_sum += raw;
  }
  for (auto& [name, value] : w.per_class) value /= raw_sum;
  return w;
}

std::string best_expert_label(std::span<const PredictionRecord> records) {
  if (records.empty()) throw data_error("dataprep", "best_expert_label: no records");
  const PredictionRecord* best = &records[0];
  for (const auto& r : records) {
    if (r.bert_sim > best->bert_sim ||
        (r.bert_sim == best->bert_sim && r.expert_name < best->expert_name)) {
      best = &r;
    }
  }
  return best->expert_name;
}

std::string best_expert_label(const std::map<std::string, PredictionRecord>& by_expert) {
  std::vector<PredictionRecord> records;
  records.reserve(by_expert.size());
  for (const auto& [name, r] : by_expert) records.push_back(r);
  return best_expert_label(records);
}

SplitDataset assemble_dataset(const QuerySplit& split, const RecordTable& table,
                              std::span<const std::string> experts,
                              const DatasetOptions& options) {
  SplitDataset ds;
  ds.experts.assign(experts.begin(), experts.end());
  std::sort(ds.experts.begin(), ds.experts.end());
  if (ds.experts.empty()) throw config_error("dataprep", "empty expert set");

  auto complete = [&](const Query& q) -> const std::map<std::string, PredictionRecord>* {
    auto it = table.find(q.id);
    if (it == table.end()) return nullptr;
    for (const auto& e : ds.experts) {
      if (!it->second.contains(e)) return nullptr;
    }
    return &it->second;
  };

  std::map<std::string, std::size_t> class_counts;
  for (const auto& q : split.train) {
    const auto* recs = complete(q);
    std::optional<std::vector<double>> scores;
    if (recs) scores = metric_vector(*recs, ds.experts, options.metric);
    if (!scores) {
      ds.excluded.push_back(q.id);
      continue;
    }
    TrainExample ex{q, soft_labels(*scores, options.temperature), best_expert_label(*recs), 1.0};
    ++class_counts[ex.best_expert];
    ds.train.push_back(std::move(ex));
  }
  for (const auto& q : split.test) {
    const auto* recs = complete(q);
    if (!recs) {
      ds.excluded.push_back(q.id);
      continue;
    }
    ds.test.push_back({q, *recs, best_expert_label(*recs)});
  }
  if (!class_counts.empty()) {
    ds.weights = sample_weights(class_counts);
    for (auto& ex : ds.train) ex.weight = ds.weights.per_class.at(ex.best_expert);
  }
  return ds;
}

void write_split(const std::filesystem::path& path, const QuerySplit& split,
                 double train_fraction, std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  j["train_fraction"] = train_fraction;
  j["train"] = json::array();
  j["test"] = json::array();
  for (const auto& q : split.train) j["train"].push_back(q.id);
  for (const auto& q : split.test) j["test"].push_back(q.id);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("dataprep", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

QuerySplit read_split(const std::filesystem::path& path, std::span<const Query> queries) {
  std::ifstream in(path);
  if (!in) throw data_error("dataprep", "cannot open " + path.string());
  const json j = json::parse(in);
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) by_id[q.id] = &q;
  QuerySplit split;
  auto collect = [&](const char* key, std::vector<Query>& out) {
    for (const auto& id : j.at(key)) {
      auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) {
        throw data_error("dataprep", "split references unknown query '" + id.get<std::string>() + "'");
      }
      out.push_back(*it->second);
    }
  };
  collect("train", split.train);
  collect("test", split.test);
  return split;
}

}  // namespace llmroute::dataprep
