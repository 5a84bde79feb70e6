// simx.hpp - deterministic simulated experts and synthetic corpora.
//
// A simulated expert answers a query by copying a share of the reference
// answer's tokens proportional to its affinity for the query's dataset and
// filling the rest with noise tokens. Latency, output length and per-token
// log-probabilities are drawn from seeded models. Every draw depends only
// on (expert seed, expert name, query id), so replies are reproducible
// across processes and safe to produce concurrently.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "llmroute/adaptor.hpp"
#include "llmroute/dataprep.hpp"

namespace llmroute::simx {

struct LatencyModel {
  double base_seconds = 1.0;
  double jitter = 0.0;  // sigma of the multiplicative lognormal factor

  friend bool operator==(const LatencyModel&, const LatencyModel&) = default;
};

struct TokensModel {
  double mean = 100.0;
  double spread = 0.0;  // standard deviation

  friend bool operator==(const TokensModel&, const TokensModel&) = default;
};

struct SimExpertConfig {
  std::string expert_name;
  std::map<std::string, double> affinity;  // dataset_tag -> quality in [0, 1]
  double affinity_floor = 0.1;             // used for unknown tags
  LatencyModel latency;
  TokensModel tokens;
  std::string pricing_family;
  std::uint64_t seed = 42;
  double nll_scale = 6.0;  // mean token NLL is (1 - affinity) * nll_scale
  bool realtime = false;   // sleep for the simulated latency

  void validate() const;
  double affinity_for(const std::string& tag) const;

  friend bool operator==(const SimExpertConfig&, const SimExpertConfig&) = default;
};

ExpertReply simulate_reply(const SimExpertConfig& config, const dataprep::Query& query,
                           const GenerationParams& params = {});

class SimulatedExpert final : public ExpertAdaptor {
 public:
  explicit SimulatedExpert(SimExpertConfig config);

  const std::string& name() const override { return config_.expert_name; }
  const std::string& pricing_family() const override { return config_.pricing_family; }
  const SimExpertConfig& config() const { return config_; }

  // Missing evaluation context falls back to: query id = hash of the
  // prompt, reference = the prompt, dataset tag unknown (affinity floor).
  ExpertReply execute(const ExpertRequest& request) override;

  std::uint64_t calls() const { return calls_.load(); }

 private:
  SimExpertConfig config_;
  std::atomic<std::uint64_t> calls_{0};
};

struct SimFleetEntry {
  SimExpertConfig config;
  std::shared_ptr<SimulatedExpert> adaptor;
};

std::vector<SimExpertConfig> parse_sim_fleet(const std::string& json_text);
std::vector<SimFleetEntry> load_sim_fleet(const std::filesystem::path& path);
std::string fleet_to_json(const std::vector<SimExpertConfig>& fleet);
dataprep::AdaptorMap adaptor_map(const std::vector<SimFleetEntry>& fleet);

// Seven experts over the arc / gsm8k / mbpp / pubmedqa tags: two biomedical,
// one code, one math and three general models, the cheapest and fastest of
// which ("fox-sim") is the strongest on general questions.
std::vector<SimExpertConfig> canonical_fleet(std::uint64_t seed = 42);

// Expert name -> pricing family for a fleet.
std::map<std::string, std::string> pricing_families(const std::vector<SimExpertConfig>& fleet);

// Synthetic instruction corpus: queries and references drawn from a
// per-dataset lexicon, so the dataset (and thus the best expert) is
// recoverable from the prompt text.
struct CorpusSpec {
  std::map<std::string, std::size_t> counts;  // dataset_tag -> records
  std::size_t query_words = 16;
  std::size_t reference_words = 32;
  // Probability that a word comes from the dataset lexicon rather than the
  // shared pool of function and neutral filler words.
  double query_domain_share = 0.85;
  double reference_domain_share = 0.75;
};

std::vector<std::string> synthetic_tags();
CorpusSpec canonical_corpus_spec(std::size_t total = 2000);
std::vector<dataprep::Query> generate_corpus(const CorpusSpec& spec, std::uint64_t seed);

}  // namespace llmroute::simx
