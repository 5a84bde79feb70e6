#include "llmroute/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace llmroute::eval {

using nlohmann::json;

Money money_from_dollars(double usd) {
  if (!std::isfinite(usd)) throw data_error("eval", "non-finite dollar amount");
  return static_cast<Money>(std::llround(usd * static_cast<double>(kPicodollarsPerDollar)));
}

double to_dollars(Money m) {
  return static_cast<double>(m) / static_cast<double>(kPicodollarsPerDollar);
}

std::string format_dollars(Money m, int decimals) {
  decimals = std::clamp(decimals, 0, 12);
  Money scale = 1;
  for (int i = 0; i < 12 - decimals; ++i) scale *= 10;
  Money unit = 1;
  for (int i = 0; i < decimals; ++i) unit *= 10;
  const bool negative = m < 0;
  const Money mag = negative ? -m : m;
  const Money q = (mag + scale / 2) / scale;
  std::string out = negative && q != 0 ? "-" : "";
  out += std::to_string(q / unit);
  if (decimals > 0) {
    std::string frac = std::to_string(q % unit);
    out += '.' + std::string(static_cast<std::size_t>(decimals) - frac.size(), '0') + frac;
  }
  return out;
}

PricingEntry PricingEntry::per_million(std::string family, double input_usd, double output_usd) {
  if (!(input_usd >= 0.0) || !(output_usd >= 0.0) || !std::isfinite(input_usd) ||
      !std::isfinite(output_usd)) {
    throw config_error("eval", "prices for '" + family + "' must be finite and >= 0");
  }
  // $ per million tokens == picodollars per token * 1e-6.
  return {std::move(family), static_cast<Money>(std::llround(input_usd * 1e6)),
          static_cast<Money>(std::llround(output_usd * 1e6))};
}

double PricingEntry::input_per_million() const { return static_cast<double>(input_per_token) * 1e-6; }
double PricingEntry::output_per_million() const { return static_cast<double>(output_per_token) * 1e-6; }

Money query_cost(long input_tokens, long output_tokens, const PricingEntry& pricing) {
  if (input_tokens < 0 || output_tokens < 0) throw data_error("eval", "negative token count");
  return static_cast<Money>(input_tokens) * pricing.input_per_token +
         static_cast<Money>(output_tokens) * pricing.output_per_token;
}

void PricingTable::add_family(PricingEntry entry) {
  if (entry.input_per_token < 0 || entry.output_per_token < 0) {
    throw config_error("eval", "negative price for '" + entry.model_family + "'");
  }
  families_[entry.model_family] = std::move(entry);
}

void PricingTable::assign(const std::string& expert, const std::string& family) {
  if (!families_.contains(family)) {
    throw config_error("eval", "expert '" + expert + "' uses unknown family '" + family + "'");
  }
  experts_[expert] = family;
}

const PricingEntry& PricingTable::family(const std::string& name) const {
  const auto it = families_.find(name);
  if (it == families_.end()) throw data_error("eval", "unknown model family '" + name + "'");
  return it->second;
}

const PricingEntry& PricingTable::for_expert(const std::string& expert) const {
  const auto it = experts_.find(expert);
  if (it == experts_.end()) throw data_error("eval", "no pricing family for expert '" + expert + "'");
  return family(it->second);
}

PricingTable PricingTable::defaults() {
  PricingTable t;
  t.add_family(PricingEntry::per_million("DeepSeek-8B", 0.14, 0.28));
  t.add_family(PricingEntry::per_million("Fox-1.6B", 0.20, 0.20));
  t.add_family(PricingEntry::per_million("Llama-8B", 0.20, 0.20));
  t.add_family(PricingEntry::per_million("Mistral-8B", 0.25, 0.25));
  t.add_family(PricingEntry::per_million("Qwen-7B", 0.20, 0.20));
  return t;
}

json PricingTable::to_json() const {
  json families = json::object();
  for (const auto& [name, e] : families_) {
    families[name] = {{"input", e.input_per_million()}, {"output", e.output_per_million()}};
  }
  return {{"families", families}, {"experts", experts_}};
}

PricingTable PricingTable::from_json(const json& j) {
  PricingTable t = defaults();
  try {
    if (j.contains("families")) {
      for (const auto& [name, e] : j.at("families").items()) {
        t.add_family(PricingEntry::per_million(name, e.at("input").get<double>(),
                                               e.at("output").get<double>()));
      }
    }
    if (j.contains("experts")) {
      for (const auto& [expert, family] : j.at("experts").items()) {
        t.assign(expert, family.get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw config_error("eval", std::string("pricing: ") + e.what());
  }
  for (const auto& [expert, family] : t.experts_) {
    if (!t.families_.contains(family)) {
      throw config_error("eval", "expert '" + expert + "' uses unknown family '" + family + "'");
    }
  }
  return t;
}

namespace {

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

Money mean_money(Money sum, std::size_t n) {
  const auto d = static_cast<Money>(n);
  return sum >= 0 ? (sum + d / 2) / d : -((-sum + d / 2) / d);
}

std::vector<const dataprep::TestExample*> by_id(std::span<const dataprep::TestExample> test) {
  std::vector<const dataprep::TestExample*> out;
  for (const auto& t : test) out.push_back(&t);
  std::sort(out.begin(), out.end(),
            [](const auto* a, const auto* b) { return a->query.id < b->query.id; });
  return out;
}

const dataprep::PredictionRecord& record_for(const dataprep::TestExample& t,
                                             const std::string& expert) {
  const auto it = t.records.find(expert);
  if (it == t.records.end()) {
    throw data_error("eval", "no record of expert '" + expert + "' for query " + t.query.id);
  }
  return it->second;
}

}  // namespace

MethodMetrics summarize(std::span<const dataprep::PredictionRecord> records,
                        const PricingTable& pricing) {
  if (records.empty()) throw data_error("eval", "cannot summarize an empty record set");
  std::vector<const dataprep::PredictionRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->query_id < b->query_id; });

  MethodMetrics m;
  double throughput = 0.0, bertsim = 0.0, nll = 0.0;
  std::size_t nll_count = 0;
  for (const auto* r : order) {
    if (!(r->inference_seconds > 0.0)) {
      throw data_error("eval", "record " + r->query_id + "/" + r->expert_name +
                                   " has non-positive inference_seconds");
    }
    m.total_cost += query_cost(r->input_tokens, r->output_tokens, pricing.for_expert(r->expert_name));
    throughput += static_cast<double>(r->output_tokens) / r->inference_seconds;
    bertsim += r->bert_sim;
    if (r->nll) {
      nll += *r->nll;
      ++nll_count;
    }
  }
  const auto n = static_cast<double>(order.size());
  m.mean_throughput = throughput / n;
  m.mean_bertsim = bertsim / n;
  if (nll_count > 0) m.mean_nll = nll / static_cast<double>(nll_count);
  return m;
}

MethodMetrics zero_router(std::span<const MethodMetrics> experts) {
  if (experts.empty()) throw data_error("eval", "zero-router needs at least one expert");
  Money cost = 0;
  std::vector<double> tp, bs, nll;
  for (const auto& e : experts) {
    cost += e.total_cost;
    tp.push_back(e.mean_throughput);
    bs.push_back(e.mean_bertsim);
    if (e.mean_nll) nll.push_back(*e.mean_nll);
  }
  MethodMetrics m;
  m.total_cost = mean_money(cost, experts.size());
  m.mean_throughput = mean_of(tp);
  m.mean_bertsim = mean_of(bs);
  if (!nll.empty()) m.mean_nll = mean_of(nll);
  return m;
}

MethodMetrics optimal_bounds(std::span<const MethodMetrics> rows) {
  if (rows.empty()) throw data_error("eval", "optimal bounds need at least one row");
  MethodMetrics m = rows.front();
  for (const auto& r : rows.subspan(1)) {
    m.total_cost = std::min(m.total_cost, r.total_cost);
    m.mean_throughput = std::max(m.mean_throughput, r.mean_throughput);
    m.mean_bertsim = std::max(m.mean_bertsim, r.mean_bertsim);
    if (r.mean_nll) m.mean_nll = m.mean_nll ? std::min(*m.mean_nll, *r.mean_nll) : *r.mean_nll;
  }
  return m;
}

std::vector<dataprep::PredictionRecord> outcomes(std::span<const dataprep::TestExample> test,
                                                 const Assignment& assignment) {
  std::vector<dataprep::PredictionRecord> out;
  out.reserve(test.size());
  for (const auto* t : by_id(test)) {
    const auto it = assignment.find(t->query.id);
    if (it == assignment.end()) throw data_error("eval", "query " + t->query.id + " was not routed");
    out.push_back(record_for(*t, it->second));
  }
  return out;
}

Assignment route_test_set(const routers::Router& router,
                          std::span<const dataprep::TestExample> test) {
  Assignment a;
  for (const auto* t : by_id(test)) {
    a[t->query.id] = router.route(t->query.id, t->query.text).chosen_expert;
  }
  return a;
}

Assignment oracle_assignment(std::span<const dataprep::TestExample> test) {
  Assignment a;
  for (const auto& t : test) a[t.query.id] = dataprep::best_expert_label(t.records);
  return a;
}

Assignment constant_assignment(std::span<const dataprep::TestExample> test,
                               const std::string& expert) {
  Assignment a;
  for (const auto& t : test) a[t.query.id] = expert;
  return a;
}

double selection_accuracy(std::span<const dataprep::TestExample> test, const Assignment& assignment) {
  if (test.empty()) throw data_error("eval", "empty test set");
  std::size_t hits = 0;
  for (const auto& t : test) {
    const auto it = assignment.find(t.query.id);
    if (it == assignment.end()) throw data_error("eval", "query " + t.query.id + " was not routed");
    hits += it->second == t.best_expert;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

double oracle_bertsim(std::span<const dataprep::TestExample> test) {
  if (test.empty()) throw data_error("eval", "empty test set");
  double sum = 0.0;
  for (const auto* t : by_id(test)) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [name, r] : t->records) best = std::max(best, r.bert_sim);
    sum += best;
  }
  return sum / static_cast<double>(test.size());
}

namespace {

struct TagAccumulator {
  std::map<std::string, std::pair<double, std::size_t>> bertsim, nll;

  void add(const std::string& tag, double bs, std::optional<double> n) {
    auto& b = bertsim[tag];
    b.first += bs;
    ++b.second;
    if (n) {
      auto& x = nll[tag];
      x.first += *n;
      ++x.second;
    }
  }

  DatasetBreakdown finish() const {
    DatasetBreakdown out;
    for (const auto& [tag, v] : bertsim) out.bertsim[tag] = v.first / static_cast<double>(v.second);
    for (const auto& [tag, v] : nll) out.nll[tag] = v.first / static_cast<double>(v.second);
    return out;
  }
};

}  // namespace

DatasetBreakdown breakdown(std::span<const dataprep::TestExample> test,
                           const Assignment& assignment) {
  TagAccumulator acc;
  for (const auto* t : by_id(test)) {
    const auto it = assignment.find(t->query.id);
    if (it == assignment.end()) throw data_error("eval", "query " + t->query.id + " was not routed");
    const auto& r = record_for(*t, it->second);
    acc.add(t->query.dataset_tag, r.bert_sim, r.nll);
  }
  return acc.finish();
}

DatasetBreakdown optimal_breakdown(std::span<const dataprep::TestExample> test) {
  TagAccumulator acc;
  for (const auto* t : by_id(test)) {
    double best = -std::numeric_limits<double>::infinity();
    std::optional<double> lowest;
    for (const auto& [name, r] : t->records) {
      best = std::max(best, r.bert_sim);
      if (r.nll) lowest = lowest ? std::min(*lowest, *r.nll) : *r.nll;
    }
    acc.add(t->query.dataset_tag, best, lowest);
  }
  return acc.finish();
}

RandomProtocolResult random_protocol(std::span<const dataprep::TestExample> test,
                                     std::span<const std::string> experts,
                                     const PricingTable& pricing, std::size_t trials,
                                     std::uint64_t seed) {
  if (trials < 1) throw config_error("eval", "trials must be >= 1");
  if (test.empty()) throw data_error("eval", "empty test set");
  if (experts.empty()) throw data_error("eval", "random protocol needs experts");
  std::vector<std::string> pool(experts.begin(), experts.end());
  std::sort(pool.begin(), pool.end());
  const auto order = by_id(test);

  RandomProtocolResult result;
  std::map<std::string, std::pair<double, std::size_t>> bs_tags, nll_tags;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(seed, "random-trial-" + std::to_string(trial)));
    Assignment a;
    for (const auto* t : order) a[t->query.id] = pool[rng.index(pool.size())];
    result.trials.push_back(summarize(outcomes(test, a), pricing));
    const auto b = breakdown(test, a);
    for (const auto& [tag, v] : b.bertsim) {
      bs_tags[tag].first += v;
      ++bs_tags[tag].second;
    }
    for (const auto& [tag, v] : b.nll) {
      nll_tags[tag].first += v;
      ++nll_tags[tag].second;
    }
    if (trial == 0) result.first_trial = std::move(a);
  }

  Money cost = 0;
  std::vector<double> tp, bs, nll;
  for (const auto& m : result.trials) {
    cost += m.total_cost;
    tp.push_back(m.mean_throughput);
    bs.push_back(m.mean_bertsim);
    if (m.mean_nll) nll.push_back(*m.mean_nll);
  }
  result.mean.total_cost = mean_money(cost, trials);
  result.mean.mean_throughput = mean_of(tp);
  result.mean.mean_bertsim = mean_of(bs);
  if (!nll.empty()) result.mean.mean_nll = mean_of(nll);
  for (const auto& [tag, v] : bs_tags) result.breakdown.bertsim[tag] = v.first / static_cast<double>(v.second);
  for (const auto& [tag, v] : nll_tags) result.breakdown.nll[tag] = v.first / static_cast<double>(v.second);
  return result;
}

QueryCountMatrix query_counts(std::span<const Decision> decisions,
                              std::span<const std::string> experts, std::size_t test_size) {
  QueryCountMatrix m;
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& d : decisions) {
    if (!seen[d.method].insert(d.query_id).second) {
      throw data_error("eval", "duplicate decision for method '" + d.method + "', query " + d.query_id);
    }
    auto& row = m[d.method];
    if (row.empty()) {
      for (const auto& e : experts) row[e] = 0;
    }
    if (!row.contains(d.expert)) throw data_error("eval", "decision names unknown expert '" + d.expert + "'");
    ++row[d.expert];
  }
  for (const auto& [method, ids] : seen) {
    if (ids.size() != test_size) {
      throw data_error("eval", "method '" + method + "' routed " + std::to_string(ids.size()) +
                                   " of " + std::to_string(test_size) + " test queries");
    }
  }
  return m;
}

std::vector<Decision> decisions_of(const std::string& method, const Assignment& assignment) {
  std::vector<Decision> out;
  for (const auto& [q, e] : assignment) out.push_back({method, q, e});
  return out;
}

std::string modal_expert(const std::map<std::string, std::size_t>& row) {
  if (row.empty()) throw data_error("eval", "empty count row");
  auto best = row.begin();
  for (auto it = row.begin(); it != row.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

std::map<Column, std::vector<std::string>> rankings(std::span<const MethodRow> rows) {
  std::map<Column, std::vector<std::string>> out;
  auto rank = [&](Column col, auto value, bool lower_better) {
    std::vector<std::pair<double, std::size_t>> v;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (auto x = value(rows[i].metrics)) v.emplace_back(*x, i);
    }
    std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
      return lower_better ? a.first < b.first : a.first > b.first;
    });
    auto& names = out[col];
    for (std::size_t i = 0; i < v.size() && i < 3; ++i) names.push_back(rows[v[i].second].name);
  };
  rank(Column::kCost, [](const MethodMetrics& m) { return std::optional<double>(static_cast<double>(m.total_cost)); }, true);
  rank(Column::kThroughput, [](const MethodMetrics& m) { return std::optional<double>(m.mean_throughput); }, false);
  rank(Column::kBertSim, [](const MethodMetrics& m) { return std::optional<double>(m.mean_bertsim); }, false);
  rank(Column::kNll, [](const MethodMetrics& m) { return m.mean_nll; }, true);
  return out;
}

namespace {

constexpr const char* kNoData = "no data";

const char* column_name(Column c) {
  switch (c) {
    case Column::kCost: return "total_cost";
    case Column::kThroughput: return "throughput";
    case Column::kBertSim: return "bertsim";
    case Column::kNll: return "nll";
  }
  return "";
}

json metrics_json(const MethodMetrics& m) {
  return {{"total_cost_usd", to_dollars(m.total_cost)},
          {"total_cost_picodollars", m.total_cost},
          {"mean_throughput", m.mean_throughput},
          {"mean_bertsim", m.mean_bertsim},
          {"mean_nll", m.mean_nll ? json(*m.mean_nll) : json(nullptr)}};
}

std::string fixed(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string opt_fixed(const std::optional<double>& x) { return x ? fixed(*x) : "n/a"; }

std::set<std::string> breakdown_tags(const Report& r, bool nll) {
  std::set<std::string> tags;
  for (const auto& [method, b] : r.breakdowns) {
    for (const auto& [tag, v] : nll ? b.nll : b.bertsim) tags.insert(tag);
  }
  return tags;
}

}  // namespace

std::string render_structured(const Report& report) {
  json j;
  json rows = json::array();
  for (const auto& row : report.rows) {
    json r = metrics_json(row.metrics);
    r["method"] = row.name;
    r["kind"] = row.kind;
    rows.push_back(r);
  }
  j["metrics"] = rows.empty() ? json(kNoData) : rows;
  j["baselines"] = {
      {"zero_router", report.zero_router ? metrics_json(*report.zero_router) : json(kNoData)},
      {"optimal", report.optimal ? metrics_json(*report.optimal) : json(kNoData)},
      {"oracle_bertsim", report.oracle_bertsim ? json(*report.oracle_bertsim) : json(kNoData)}};
  j["counts"] = report.counts.empty() ? json(kNoData) : json(report.counts);

  json bs = json::object(), nll = json::object();
  for (const auto& [method, b] : report.breakdowns) {
    if (!b.bertsim.empty()) bs[method] = b.bertsim;
    if (!b.nll.empty()) nll[method] = b.nll;
  }
  j["breakdowns"] = {{"bertsim", bs.empty() ? json(kNoData) : bs},
                     {"nll", nll.empty() ? json(kNoData) : nll}};

  json ranks = json::object();
  for (const auto& [col, names] : rankings(report.rows)) {
    ranks[column_name(col)] = names.empty() ? json(kNoData) : json(names);
  }
  j["rankings"] = report.rows.empty() ? json(kNoData) : ranks;
  j["selection_accuracy"] = report.accuracy.empty() ? json(kNoData) : json(report.accuracy);
  j["test_size"] = report.test_size;
  return j.dump(2) + "\n";
}

std::string render_tabular(const Report& report) {
  std::ostringstream out;
  const auto ranks = rankings(report.rows);
  auto rank_of = [&](Column c, const std::string& name) -> std::string {
    const auto it = ranks.find(c);
    if (it == ranks.end()) return "-";
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (it->second[i] == name) return std::to_string(i + 1);
    }
    return "-";
  };

  out << "# metrics\n";
  if (report.rows.empty()) {
    out << kNoData << '\n';
  } else {
    out << "method\tkind\ttotal_cost\tthroughput\tbertsim\tnll"
           "\tcost_rank\tthroughput_rank\tbertsim_rank\tnll_rank\n";
    for (const auto& row : report.rows) {
      const auto& m = row.metrics;
      out << row.name << '\t' << row.kind << '\t' << format_dollars(m.total_cost) << '\t'
          << fixed(m.mean_throughput) << '\t' << fixed(m.mean_bertsim) << '\t'
          << opt_fixed(m.mean_nll) << '\t' << rank_of(Column::kCost, row.name) << '\t'
          << rank_of(Column::kThroughput, row.name) << '\t' << rank_of(Column::kBertSim, row.name)
          << '\t' << rank_of(Column::kNll, row.name) << '\n';
    }
  }

  out << "\n# baselines\n";
  if (!report.zero_router && !report.optimal && !report.oracle_bertsim) {
    out << kNoData << '\n';
  } else {
    out << "baseline\ttotal_cost\tthroughput\tbertsim\tnll\n";
    auto line = [&](const char* name, const std::optional<MethodMetrics>& m) {
      if (!m) {
        out << name << '\t' << kNoData << '\n';
        return;
      }
      out << name << '\t' << format_dollars(m->total_cost) << '\t' << fixed(m->mean_throughput)
          << '\t' << fixed(m->mean_bertsim) << '\t' << opt_fixed(m->mean_nll) << '\n';
    };
    line("zero-router", report.zero_router);
    line("optimal", report.optimal);
    out << "oracle\t-\t-\t" << (report.oracle_bertsim ? fixed(*report.oracle_bertsim) : kNoData)
        << "\t-\n";
  }

  for (bool nll : {false, true}) {
    out << (nll ? "\n# nll_by_dataset\n" : "\n# bertsim_by_dataset\n");
    const auto tags = breakdown_tags(report, nll);
    if (tags.empty()) {
      out << kNoData << '\n';
      continue;
    }
    out << "method";
    for (const auto& t : tags) out << '\t' << t;
    out << '\n';
    for (const auto& [method, b] : report.breakdowns) {
      const auto& values = nll ? b.nll : b.bertsim;
      out << method;
      for (const auto& t : tags) {
        const auto it = values.find(t);
        out << '\t' << (it == values.end() ? std::string("n/a") : fixed(it->second));
      }
      out << '\n';
    }
  }

  out << "\n# selection_accuracy\n";
  if (report.accuracy.empty()) {
    out << kNoData << '\n';
  } else {
    out << "method\taccuracy\n";
    for (const auto& [method, acc] : report.accuracy) out << method << '\t' << fixed(acc) << '\n';
  }

  out << "\n# query_counts\n";
  if (report.counts.empty()) {
    out << kNoData << '\n';
  } else {
    std::set<std::string> experts;
    for (const auto& [method, row] : report.counts) {
      for (const auto& [e, n] : row) experts.insert(e);
    }
    out << "method";
    for (const auto& e : experts) out << '\t' << e;
    out << '\n';
    for (const auto& [method, row] : report.counts) {
      out << method;
      for (const auto& e : experts) {
        const auto it = row.find(e);
        out << '\t' << (it == row.end() ? 0 : it->second);
      }
      out << '\n';
    }
  }
  return out.str();
}

void emit_report(const Report& report, const std::filesystem::path& path, ReportFormat format) {
  const std::string text =
      format == ReportFormat::kStructured ? render_structured(report) : render_tabular(report);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("eval", "cannot write report " + path.string());
  out << text;
  if (!out.flush()) throw data_error("eval", "failed writing report " + path.string());
}

Report evaluate(const dataprep::SplitDataset& dataset, const PricingTable& pricing,
                std::span<const routers::Router* const> routers, const EvaluationOptions& options) {
  const auto& test = dataset.test;
  if (test.empty()) throw data_error("eval", "empty test set");
  Report report;
  report.test_size = test.size();
  std::vector<Decision> decisions;
  std::vector<MethodMetrics> expert_rows;

  if (options.include_experts) {
    for (const auto& e : dataset.experts) {
      const auto m = summarize(outcomes(test, constant_assignment(test, e)), pricing);
      report.rows.push_back({e, "expert", m});
      expert_rows.push_back(m);
    }
  }
  if (options.include_random) {
    auto r = random_protocol(test, dataset.experts, pricing, options.trials, options.seed);
    report.rows.push_back({"random", "router", r.mean});
    report.breakdowns["random"] = r.breakdown;
    report.accuracy["random"] = selection_accuracy(test, r.first_trial);
    auto d = decisions_of("random", r.first_trial);
    decisions.insert(decisions.end(), d.begin(), d.end());
  }
  std::set<std::string> methods;
  if (options.include_random) methods.insert("random");
  for (const auto* router : routers) {
    if (!methods.insert(router->method()).second) {
      throw config_error("eval", "method '" + router->method() + "' evaluated twice");
    }
    const auto a = route_test_set(*router, test);
    report.rows.push_back({router->method(), "router", summarize(outcomes(test, a), pricing)});
    report.breakdowns[router->method()] = breakdown(test, a);
    report.accuracy[router->method()] = selection_accuracy(test, a);
    auto d = decisions_of(router->method(), a);
    decisions.insert(decisions.end(), d.begin(), d.end());
  }

  const auto oracle = oracle_assignment(test);
  auto d = decisions_of("optimal", oracle);
  decisions.insert(decisions.end(), d.begin(), d.end());
  report.breakdowns["optimal"] = optimal_breakdown(test);
  report.counts = query_counts(decisions, dataset.experts, test.size());
  report.oracle_bertsim = oracle_bertsim(test);

  if (!expert_rows.empty()) report.zero_router = zero_router(expert_rows);
  if (!report.rows.empty()) {
    std::vector<MethodMetrics> all;
    for (const auto& r : report.rows) all.push_back(r.metrics);
    report.optimal = optimal_bounds(all);
  }
  return report;
}

}  // namespace llmroute::eval
