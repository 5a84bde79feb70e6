// dataprep.hpp - corpus ingestion, the expert prediction dataset, soft labels,
// stratified splitting and class weighting.

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "llmroute/adaptor.hpp"
#include "llmroute/embed.hpp"

namespace llmroute::dataprep {

struct Query {
  std::string id;
  std::string text;
  std::string reference;
  std::string dataset_tag;

  friend bool operator==(const Query&, const Query&) = default;
};

// One (query, expert) observation.
struct PredictionRecord {
  std::string query_id;
  std::string expert_name;
  std::optional<double> nll;  // absent when the expert reported no log-probs
  double bert_sim = 0.0;
  double inference_seconds = 0.0;
  long input_tokens = 0;
  long output_tokens = 0;
  std::string response_text;

  void validate() const;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct SkippedLine {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct IngestResult {
  std::vector<Query> queries;
  std::vector<SkippedLine> skipped;
};

// One JSON object per line with "id", "instruction", "reference".
IngestResult ingest_dataset(const std::filesystem::path& path, const std::string& dataset_tag);
void write_corpus(const std::filesystem::path& path, std::span<const Query> queries);

void write_predictions(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

struct ExpertFailure {
  std::string query_id;
  std::string expert_name;
  std::string message;
};

struct PredictionBuild {
  std::vector<PredictionRecord> records;  // sorted by (query_id, expert_name)
  std::vector<ExpertFailure> failures;
  std::set<std::string> incomplete_queries;  // at least one expert failed
};

struct BuildOptions {
  bool concurrent_experts = true;
  double timeout_seconds = 60.0;
  std::map<std::string, GenerationParams> generation;  // per expert; default otherwise
  // Renders the prompt sent to an expert; identity when unset.
  std::function<std::string(const std::string& expert, const Query&)> prompt_builder;
};

using AdaptorMap = std::map<std::string, std::shared_ptr<ExpertAdaptor>>;

PredictionBuild build_prediction_dataset(std::span<const Query> queries,
                                         const AdaptorMap& adaptors,
                                         const embed::EmbeddingProvider& embedder,
                                         const BuildOptions& options = {});

// Temperature softmax. Sums to 1 and preserves the argmax of `scores`.
std::vector<double> soft_labels(std::span<const double> scores, double temperature);

enum class LabelMetric { kBertSim, kNegatedNll };

LabelMetric label_metric_from_string(const std::string& s);

struct SoftLabelRow {
  std::string query_id;
  std::map<std::string, double> probs;

  std::vector<double> as_vector(std::span<const std::string> experts) const;
};

// Records grouped per query, then per expert.
using RecordTable = std::map<std::string, std::map<std::string, PredictionRecord>>;
RecordTable group_by_query(std::span<const PredictionRecord> records);

// Rows for every query that has a record from each expert in `experts`.
std::vector<SoftLabelRow> build_soft_labels(const RecordTable& table,
                                            std::span<const std::string> experts,
                                            double temperature,
                                            LabelMetric metric = LabelMetric::kBertSim);

void write_soft_labels(const std::filesystem::path& path, std::span<const SoftLabelRow> rows);
std::vector<SoftLabelRow> read_soft_labels(const std::filesystem::path& path);

struct QuerySplit {
  std::vector<Query> train;
  std::vector<Query> test;
};

// Splits independently within each dataset_tag; round(fraction * n) train
// records per tag, kept inside [1, n - 1].
QuerySplit stratified_split(std::span<const Query> queries, double train_fraction,
                            std::uint64_t seed);

struct SampleWeights {
  std::map<std::string, double> per_class;
};

// w_i = total / count_i, then normalized to sum to 1.
SampleWeights sample_weights(const std::map<std::string, std::size_t>& class_counts);

// Expert with the highest bert_sim; ties go to the smallest name.
std::string best_expert_label(std::span<const PredictionRecord> records);
std::string best_expert_label(const std::map<std::string, PredictionRecord>& by_expert);

struct TrainExample {
  Query query;
  std::vector<double> target;  // soft label over the sorted expert list
  std::string best_expert;
  double weight = 1.0;
};

struct TestExample {
  Query query;
  std::map<std::string, PredictionRecord> records;
  std::string best_expert;
};

struct SplitDataset {
  std::vector<std::string> experts;  // sorted
  std::vector<TrainExample> train;
  std::vector<TestExample> test;
  SampleWeights weights;
  std::vector<std::string> excluded;  // queries dropped for missing records
};

struct DatasetOptions {
  double temperature = 10.0;
  LabelMetric metric = LabelMetric::kBertSim;
};

SplitDataset assemble_dataset(const QuerySplit& split, const RecordTable& table,
                              std::span<const std::string> experts,
                              const DatasetOptions& options = {});

void write_split(const std::filesystem::path& path, const QuerySplit& split,
                 double train_fraction, std::uint64_t seed);
// Resolves the ids stored by write_split against a loaded corpus.
QuerySplit read_split(const std::filesystem::path& path, std::span<const Query> queries);

}  // namespace llmroute::dataprep
