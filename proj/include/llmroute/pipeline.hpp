// pipeline.hpp - the prepare / train / evaluate / simulate stages behind the
// command-line tool, bound to one run configuration.
//
// Artifact directory layout:
//   fleet.json                       simulated experts used for the run
//   corpus/<tag>.jsonl               ingested queries, one file per dataset
//   predictions.jsonl                one record per (query, expert)
//   soft_labels.jsonl, split.json, prepare_summary.json
//   routers/<method>/manifest.json   plus model / index / vectorizer files
//   routers/<method>/loss_trace.json learned routers only
//   reports/report.json, reports/report.tsv

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "llmroute/dataprep.hpp"
#include "llmroute/embed.hpp"
#include "llmroute/eval.hpp"
#include "llmroute/gateway.hpp"
#include "llmroute/learn.hpp"
#include "llmroute/simx.hpp"

namespace llmroute::pipeline {

struct CorpusSource {
  std::filesystem::path path;
  std::string tag;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path out = "artifacts";
  std::vector<CorpusSource> corpora;  // empty: synthetic corpus
  simx::CorpusSpec synthetic = simx::canonical_corpus_spec();
  std::filesystem::path fleet;  // empty: canonical fleet
  std::vector<gateway::ExpertEndpointConfig> remote_experts;
  nlohmann::json embedding = {{"kind", "stub"}, {"dimension", 256}, {"seed", 42}};
  double train_fraction = 0.8;
  double temperature = 10.0;
  dataprep::LabelMetric label_metric = dataprep::LabelMetric::kBertSim;
  embed::VectorizerSettings vectorizer;
  learn::TrainConfig mlp = learn::TrainConfig::mlp_defaults();
  learn::TrainConfig head = learn::TrainConfig::head_defaults();
  std::size_t trials = 10;
  std::vector<std::string> methods = {"random", "knn", "mlp", "head"};
  nlohmann::json pricing = nlohmann::json::object();
  nlohmann::json serve = nlohmann::json::object();
  std::filesystem::path base_dir = ".";  // resolves paths inside `serve`

  void validate() const;
};

// Keys mirror the fields above; unknown keys are rejected. Relative paths
// resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<double> temperature;
  std::optional<std::size_t> trials;
  std::optional<std::filesystem::path> out;
};

// Flags win over file values; --seed reseeds the split, corpus, fleet,
// training and random protocol.
void apply_overrides(RunConfig& config, const Overrides& overrides);

// "all" -> random, knn, mlp, head.
std::vector<std::string> expand_methods(const std::string& method);

struct PrepareSummary {
  std::size_t queries = 0;
  std::size_t records = 0;
  std::size_t skipped_lines = 0;
  std::size_t failures = 0;
  std::size_t train = 0;
  std::size_t test = 0;
};

struct TrainSummary {
  std::string method;
  std::vector<double> loss_trace;
};

PrepareSummary prepare(const RunConfig& config);
std::vector<TrainSummary> train(const RunConfig& config);
eval::Report evaluate(const RunConfig& config);
// prepare, train and evaluate in one go.
eval::Report simulate(const RunConfig& config);

// Gateway config for `serve` from the run's artifacts, unless the run config
// carries an explicit "serve" gateway block.
gateway::GatewayConfig serve_config(const RunConfig& config);

// Helpers shared with tests.
std::vector<simx::SimExpertConfig> fleet_for(const RunConfig& config);
eval::PricingTable pricing_for(const RunConfig& config,
                               const std::vector<simx::SimExpertConfig>& fleet);
std::vector<dataprep::Query> load_corpus_dir(const std::filesystem::path& dir);
dataprep::SplitDataset load_dataset(const RunConfig& config);

}  // namespace llmroute::pipeline
