// eval.hpp - cost / throughput / quality metrics per expert and per router,
// the no-routing and oracle baselines, the random-routing protocol, query
// allocation counts and report rendering.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "llmroute/dataprep.hpp"
#include "llmroute/routers.hpp"

namespace llmroute::eval {

// Integer picodollars. A token priced at $0.14 per million costs 140000 pd,
// so per-token prices with up to six decimals per million are exact.
using Money = std::int64_t;
inline constexpr Money kPicodollarsPerDollar = 1'000'000'000'000;

Money money_from_dollars(double usd);
double to_dollars(Money m);
// Exact decimal rendering rounded half-up to `decimals` places, e.g. "0.159860".
std::string format_dollars(Money m, int decimals = 6);

struct PricingEntry {
  std::string model_family;
  Money input_per_token = 0;   // picodollars
  Money output_per_token = 0;  // picodollars

  // Prices in dollars per million tokens.
  static PricingEntry per_million(std::string family, double input_usd, double output_usd);
  double input_per_million() const;
  double output_per_million() const;
};

// (T_in / 1e6) * c_in + (T_out / 1e6) * c_out, exact in picodollars.
Money query_cost(long input_tokens, long output_tokens, const PricingEntry& pricing);

// Family prices plus the expert -> family assignment.
class PricingTable {
 public:
  void add_family(PricingEntry entry);
  void assign(const std::string& expert, const std::string& family);

  const PricingEntry& family(const std::string& name) const;
  const PricingEntry& for_expert(const std::string& expert) const;
  bool has_expert(const std::string& expert) const { return experts_.contains(expert); }
  const std::map<std::string, std::string>& expert_families() const { return experts_; }

  // DeepSeek-8B, Fox-1.6B, Llama-8B, Mistral-8B and Qwen-7B, no experts assigned.
  static PricingTable defaults();

  nlohmann::json to_json() const;
  // {"families": {"Fox-1.6B": {"input": 0.2, "output": 0.2}, ...},
  //  "experts": {"fox-sim": "Fox-1.6B", ...}}; families default to defaults().
  static PricingTable from_json(const nlohmann::json& j);

 private:
  std::map<std::string, PricingEntry> families_;
  std::map<std::string, std::string> experts_;
};

struct MethodMetrics {
  Money total_cost = 0;
  double mean_throughput = 0.0;  // mean of per-query output_tokens / seconds
  double mean_bertsim = 0.0;
  std::optional<double> mean_nll;  // absent when no record carried log-probs
};

// Metrics over one record per answered query. Sums run in query_id order.
MethodMetrics summarize(std::span<const dataprep::PredictionRecord> records,
                        const PricingTable& pricing);

// Componentwise mean of the expert tuples.
MethodMetrics zero_router(std::span<const MethodMetrics> experts);
// Min cost, max throughput, max BERTSim, min NLL over the rows.
MethodMetrics optimal_bounds(std::span<const MethodMetrics> rows);

// query_id -> chosen expert.
using Assignment = std::map<std::string, std::string>;

// The chosen expert's record for every test query.
std::vector<dataprep::PredictionRecord> outcomes(std::span<const dataprep::TestExample> test,
                                                 const Assignment& assignment);

Assignment route_test_set(const routers::Router& router,
                          std::span<const dataprep::TestExample> test);
// Every query sent to its best-BERTSim expert.
Assignment oracle_assignment(std::span<const dataprep::TestExample> test);
Assignment constant_assignment(std::span<const dataprep::TestExample> test,
                               const std::string& expert);

// Share of test queries routed to their best-BERTSim expert.
double selection_accuracy(std::span<const dataprep::TestExample> test, const Assignment& assignment);

// Mean over test queries of the best BERTSim any expert reached.
double oracle_bertsim(std::span<const dataprep::TestExample> test);

struct DatasetBreakdown {
  std::map<std::string, double> bertsim;  // dataset_tag -> mean
  std::map<std::string, double> nll;      // tags with log-probs only
};

DatasetBreakdown breakdown(std::span<const dataprep::TestExample> test,
                           const Assignment& assignment);
// Per tag: mean of per-query best BERTSim and of per-query lowest NLL.
DatasetBreakdown optimal_breakdown(std::span<const dataprep::TestExample> test);

struct RandomProtocolResult {
  MethodMetrics mean;  // over trials
  std::vector<MethodMetrics> trials;
  DatasetBreakdown breakdown;  // per-tag means over trials
  Assignment first_trial;
};

// Each trial routes every test query to a uniformly drawn expert.
RandomProtocolResult random_protocol(std::span<const dataprep::TestExample> test,
                                     std::span<const std::string> experts,
                                     const PricingTable& pricing, std::size_t trials,
                                     std::uint64_t seed);

struct Decision {
  std::string method;
  std::string query_id;
  std::string expert;
};

// method -> (expert -> count); every expert listed, zeros included.
using QueryCountMatrix = std::map<std::string, std::map<std::string, std::size_t>>;

QueryCountMatrix query_counts(std::span<const Decision> decisions,
                              std::span<const std::string> experts, std::size_t test_size);
std::vector<Decision> decisions_of(const std::string& method, const Assignment& assignment);

// Most frequent expert of one method's row; ties go to the smallest name.
std::string modal_expert(const std::map<std::string, std::size_t>& row);

enum class Column { kCost, kThroughput, kBertSim, kNll };

struct MethodRow {
  std::string name;
  std::string kind;  // "expert" or "router"
  MethodMetrics metrics;
};

// Top-3 row names per column (cheapest, fastest, highest BERTSim, lowest
// NLL); rows without NLL are not ranked in that column.
std::map<Column, std::vector<std::string>> rankings(std::span<const MethodRow> rows);

struct Report {
  std::vector<MethodRow> rows;
  std::optional<MethodMetrics> zero_router;
  std::optional<MethodMetrics> optimal;
  std::optional<double> oracle_bertsim;
  QueryCountMatrix counts;
  std::map<std::string, DatasetBreakdown> breakdowns;  // method -> per-tag
  std::map<std::string, double> accuracy;              // router -> selection accuracy
  std::size_t test_size = 0;
};

enum class ReportFormat { kStructured, kTabular };

std::string render_structured(const Report& report);
std::string render_tabular(const Report& report);
void emit_report(const Report& report, const std::filesystem::path& path, ReportFormat format);

struct EvaluationOptions {
  bool include_experts = true;
  bool include_random = true;
  std::size_t trials = 10;
  std::uint64_t seed = 42;
};

// Experts standalone, the random protocol and each router on the test split,
// with baselines, counts, breakdowns and rankings.
Report evaluate(const dataprep::SplitDataset& dataset, const PricingTable& pricing,
                std::span<const routers::Router* const> routers, const EvaluationOptions& options);

}  // namespace llmroute::eval
