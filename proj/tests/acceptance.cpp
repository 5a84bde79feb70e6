// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fd_oracle.hpp"
#include "httplib.h"
#include "llmroute/dataprep.hpp"
#include "llmroute/eval.hpp"
#include "llmroute/gateway.hpp"
#include "llmroute/learn.hpp"
#include "llmroute/pipeline.hpp"
#include "llmroute/routers.hpp"
#include "test_util.hpp"

using namespace llmroute;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failed checks; the criterion passes when none failed.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string fmt(double x, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << x;
  return os.str();
}

eval::MethodRow row(const std::string& name, const std::string& kind, double cost, double tp, double bs,
                    double nll) {
  return {name, kind, {eval::money_from_dollars(cost), tp, bs, nll}};
}

// Table 2 as published: seven experts then four routers.
std::vector<eval::MethodRow> published_rows() {
  return {row("BioLlama-8B", "expert", 0.195, 155.613, 0.686, 3.408),
          row("BioMistral-8B", "expert", 0.125, 208.399, 0.669, 3.581),
          row("CodeLlama-7B", "expert", 0.156, 102.993, 0.694, 3.299),
          row("Fox-1.6B", "expert", 0.118, 214.925, 0.761, 2.958),
          row("MathDeepSeek-7B", "expert", 0.138, 187.166, 0.746, 3.286),
          row("MistralAI-7B", "expert", 0.223, 89.587, 0.694, 4.205),
          row("Qwen-7B", "expert", 0.164, 114.008, 0.698, 2.326),
          row("Random-Router", "router", 0.143, 209.171, 0.715, 3.316),
          row("1NN-Router", "router", 0.131, 205.715, 0.697, 3.271),
          row("MLP-Router", "router", 0.147, 177.508, 0.773, 3.164),
          row("BERT-Router", "router", 0.122, 213.145, 0.783, 3.091)};
}

std::string criterion1(Check& c) {
  const auto t0 = Clock::now();
  std::vector<eval::MethodMetrics> experts;
  for (const auto& r : published_rows()) {
    if (r.kind == "expert") experts.push_back(r.metrics);
  }
  const auto z = eval::zero_router(experts);
  const double secs = seconds_since(t0);
  const double cost = eval::to_dollars(z.total_cost);
  c.expect(std::abs(cost - 0.161) <= 0.002, "cost " + fmt(cost));
  c.expect(std::abs(z.mean_throughput - 153.242) <= 0.001, "throughput " + fmt(z.mean_throughput));
  c.expect(std::abs(z.mean_bertsim - 0.707) <= 0.001, "bertsim " + fmt(z.mean_bertsim));
  c.expect(z.mean_nll && std::abs(*z.mean_nll - 3.295) <= 0.001, "nll");
  c.expect(secs < 1.0, "runtime " + fmt(secs));
  return "zero-router = ($" + fmt(cost) + ", " + fmt(z.mean_throughput, 4) + ", " + fmt(z.mean_bertsim, 5) +
         ", " + fmt(z.mean_nll.value_or(NAN), 5) + ")";
}

std::string criterion2(Check& c) {
  const auto t0 = Clock::now();
  std::vector<eval::MethodMetrics> all;
  for (const auto& r : published_rows()) all.push_back(r.metrics);
  const auto o = eval::optimal_bounds(all);
  const double secs = seconds_since(t0);
  c.expect(o.total_cost == eval::money_from_dollars(0.118), "cost " + eval::format_dollars(o.total_cost));
  c.expect(o.mean_throughput == 214.925, "throughput");
  c.expect(o.mean_bertsim == 0.783, "bertsim");
  c.expect(o.mean_nll && *o.mean_nll == 2.326, "nll");
  c.expect(secs < 1.0, "runtime");
  return "optimal = ($" + eval::format_dollars(o.total_cost, 3) + ", " + fmt(o.mean_throughput, 3) + ", " +
         fmt(o.mean_bertsim, 3) + ", " + fmt(o.mean_nll.value_or(NAN), 3) + ")";
}

std::string criterion3(Check& c) {
  struct Case {
    const char* family;
    long in, out;
    eval::Money expected;  // worked by hand from the per-million prices
  };
  const Case cases[] = {
      {"DeepSeek-8B", 1000, 2000, 700'000'000},
      {"DeepSeek-8B", 0, 1, 280'000},
      {"Fox-1.6B", 1, 1, 400'000},
      {"Fox-1.6B", 1'000'000, 0, 200'000'000'000},
      {"Llama-8B", 123, 456, 115'800'000},
      {"Mistral-8B", 1000, 1000, 500'000'000},
      {"Mistral-8B", 7, 3, 2'500'000},
      {"Qwen-7B", 50, 75, 25'000'000},
      {"Qwen-7B", 0, 0, 0},
      {"DeepSeek-8B", 1'234'567, 7'654'321, 2'316'049'260'000},
  };
  const auto pricing = eval::PricingTable::defaults();
  int ok = 0;
  for (const auto& k : cases) {
    const auto got = eval::query_cost(k.in, k.out, pricing.family(k.family));
    c.expect(got == k.expected, std::string(k.family) + " " + std::to_string(k.in) + "/" +
                                    std::to_string(k.out) + " -> " + std::to_string(got));
    ok += got == k.expected;
  }
  return std::to_string(ok) + "/10 exact";
}

std::string criterion4(Check& c) {
  Rng rng(2024);
  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.index(9);
    std::vector<double> s(n);
    for (auto& x : s) x = rng.uniform() * 2.0 - 0.5;
    const double temp = 0.1 + rng.uniform() * 20.0;
    const auto p = dataprep::soft_labels(s, temp);
    double sum = 0.0;
    for (double x : p) sum += x;
    if (std::abs(sum - 1.0) > 1e-9) ++violations;
    if (argmax_first(std::span<const double>(p)) != argmax_first(std::span<const double>(s))) ++violations;

    auto shifted = s;
    const double shift = rng.uniform() * 100.0 - 50.0;
    for (auto& x : shifted) x += shift;
    const auto ps = dataprep::soft_labels(shifted, temp);
    for (std::size_t k = 0; k < n; ++k) {
      if (std::abs(ps[k] - p[k]) > 1e-12) ++violations;
    }

    // Raising the temperature never sharpens the distribution.
    const auto flatter = dataprep::soft_labels(s, temp * 2.0);
    const double top = *std::max_element(p.begin(), p.end());
    const double top_flat = *std::max_element(flatter.begin(), flatter.end());
    if (top_flat > top + 1e-12) ++violations;
  }
  c.expect(violations == 0, std::to_string(violations) + " property violations");
  const std::vector<double> pair = {0.8, 0.6};
  const auto p = dataprep::soft_labels(pair, 10.0);
  c.expect(std::abs(p[0] - 0.50500) <= 1e-5 && std::abs(p[1] - 0.49500) <= 1e-5,
           "(0.8, 0.6) -> (" + fmt(p[0]) + ", " + fmt(p[1]) + ")");
  return "1000 vectors, (0.8, 0.6; T=10) -> (" + fmt(p[0], 5) + ", " + fmt(p[1], 5) + ")";
}

std::string criterion5(Check& c) {
  const auto t0 = Clock::now();
  Rng rng(77);
  double worst = 0.0;
  for (int inst = 0; inst < 5; ++inst) {
    std::vector<learn::Sample> samples;
    for (int k = 0; k < 4; ++k) samples.push_back(testutil::random_sample(rng, 9, 4));
    std::vector<const learn::Sample*> batch;
    for (const auto& s : samples) batch.push_back(&s);

    auto mlp = learn::mlp_init(9, 6, 4, 100 + inst);
    for (auto& b : mlp.b1) b = rng.uniform() - 0.5;
    for (auto& b : mlp.b2) b = rng.uniform() - 0.5;
    worst = std::max(worst, testutil::fd_check(learn::ModelParams{mlp}, batch).max_rel_error);

    auto head = learn::head_init(9, 4);
    for (auto& w : head.w) w = rng.uniform() - 0.5;
    for (auto& b : head.b) b = rng.uniform() - 0.5;
    worst = std::max(worst, testutil::fd_check(learn::ModelParams{head}, batch).max_rel_error);
  }
  const double secs = seconds_since(t0);
  c.expect(worst <= 1e-4, "max relative error " + std::to_string(worst));
  c.expect(secs < 10.0, "runtime " + fmt(secs));
  std::ostringstream os;
  os << "5 mlp + 5 head instances, max relative error " << worst << ", " << fmt(secs, 3) << " s";
  return os.str();
}

std::string criterion6(Check& c) {
  Rng rng(606);
  const std::size_t entries = 2000, dim = 32;
  std::vector<std::string> ids, labels;
  std::vector<embed::DenseVector> vecs;
  for (std::size_t i = 0; i < entries; ++i) {
    ids.push_back("q" + std::to_string(100000 + (i * 7919) % entries));
    labels.push_back("e" + std::to_string(rng.index(7)));
    embed::DenseVector v(dim);
    for (auto& x : v) x = rng.uniform() * 2 - 1;
    vecs.push_back(v);
  }
  const auto index = routers::build_knn(ids, labels, vecs);
  std::size_t mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    embed::DenseVector q(dim);
    for (auto& x : q) x = rng.uniform() * 2 - 1;
    // Exhaustive scan: highest cosine, smallest id on ties.
    std::size_t best = 0;
    double best_sim = -2.0;
    double qn = 0.0;
    for (double x : q) qn += x * x;
    for (std::size_t i = 0; i < entries; ++i) {
      double dot = 0.0, n = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        dot += vecs[i][k] * q[k];
        n += vecs[i][k] * vecs[i][k];
      }
      const double s = dot / (std::sqrt(n) * std::sqrt(qn));
      if (s > best_sim || (s == best_sim && ids[i] < ids[best])) {
        best = i;
        best_sim = s;
      }
    }
    const auto nb = routers::nearest_neighbor(index, q);
    if (index.query_ids[nb.index] != ids[best] || index.labels[nb.index] != labels[best]) ++mismatches;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatches");
  return "200 queries x 2000 entries, " + std::to_string(200 - mismatches) + "/200 identical";
}

const eval::MethodRow* find_row(const eval::Report& r, const std::string& name) {
  for (const auto& x : r.rows) {
    if (x.name == name) return &x;
  }
  return nullptr;
}

std::string criterion7(Check& c, const pipeline::RunConfig& run) {
  const auto t0 = Clock::now();
  const auto report = pipeline::simulate(run);
  const double secs = seconds_since(t0);
  c.expect(run.synthetic.counts.size() == 4 && pipeline::fleet_for(run).size() == 7, "fleet/corpus shape");
  c.expect(report.test_size >= 400, "test size " + std::to_string(report.test_size));

  const double acc_mlp = report.accuracy.at("mlp"), acc_head = report.accuracy.at("head");
  c.expect(acc_mlp >= 0.90, "mlp accuracy " + fmt(acc_mlp, 4));
  c.expect(acc_head >= 0.90, "head accuracy " + fmt(acc_head, 4));

  const double opt = *report.oracle_bertsim;
  const double head = find_row(report, "head")->metrics.mean_bertsim;
  const double mlp = find_row(report, "mlp")->metrics.mean_bertsim;
  const double knn = find_row(report, "knn")->metrics.mean_bertsim;
  const double rnd = find_row(report, "random")->metrics.mean_bertsim;
  c.expect(opt >= head && head >= mlp && mlp >= knn && mlp >= rnd,
           "ordering opt " + fmt(opt, 4) + " head " + fmt(head, 4) + " mlp " + fmt(mlp, 4) + " knn " +
               fmt(knn, 4) + " random " + fmt(rnd, 4));
  c.expect(head >= 0.95 * opt && mlp >= 0.95 * opt, "learned routers not within 5% of the oracle");

  const auto oracle_mode = eval::modal_expert(report.counts.at("optimal"));
  c.expect(eval::modal_expert(report.counts.at("mlp")) == oracle_mode, "mlp modal expert");
  c.expect(eval::modal_expert(report.counts.at("head")) == oracle_mode, "head modal expert");
  c.expect(secs < 120.0, "runtime " + fmt(secs));

  return "acc mlp " + fmt(acc_mlp, 4) + " head " + fmt(acc_head, 4) + " random " +
         fmt(report.accuracy.at("random"), 4) + "; BERTSim opt " + fmt(opt, 4) + " >= head " + fmt(head, 4) +
         " >= mlp " + fmt(mlp, 4) + " >= {knn " + fmt(knn, 4) + ", random " + fmt(rnd, 4) + "}; mode " +
         oracle_mode + "; " + fmt(secs, 1) + " s";
}

std::string criterion8(Check& c, const fs::path& out) {
  const auto t0 = Clock::now();
  pipeline::RunConfig run;
  run.out = out;
  // General questions dominate, so the cheap fast generalist should win most.
  run.synthetic.counts = {{"arc", 1400}, {"gsm8k", 200}, {"mbpp", 200}, {"pubmedqa", 200}};
  run.methods = {"head"};
  const auto report = pipeline::simulate(run);
  const double secs = seconds_since(t0);

  const auto fleet = pipeline::fleet_for(run);
  const auto pricing = pipeline::pricing_for(run, fleet);
  std::string cheapest;
  double cheapest_cost = 1e300;
  for (const auto& r : report.rows) {
    if (r.kind == "expert" && r.metrics.total_cost < cheapest_cost) {
      cheapest_cost = static_cast<double>(r.metrics.total_cost);
      cheapest = r.name;
    }
  }
  const auto& oracle_counts = report.counts.at("optimal");
  const double best_share =
      static_cast<double>(oracle_counts.at(cheapest)) / static_cast<double>(report.test_size);
  c.expect(best_share >= 0.60, cheapest + " best on " + fmt(best_share, 3));

  const auto& zero = *report.zero_router;
  const auto& head = find_row(report, "head")->metrics;
  const double cost_ratio = static_cast<double>(head.total_cost) / static_cast<double>(zero.total_cost);
  const double tp_ratio = head.mean_throughput / zero.mean_throughput;
  c.expect(cost_ratio <= 0.8, "cost ratio " + fmt(cost_ratio, 4));
  c.expect(tp_ratio >= 1.2, "throughput ratio " + fmt(tp_ratio, 4));
  c.expect(head.mean_bertsim >= zero.mean_bertsim, "bertsim below the zero-router");
  c.expect(secs < 120.0, "runtime " + fmt(secs));
  return cheapest + " best on " + fmt(best_share * 100, 1) + "% of test queries; head cost " + fmt(cost_ratio, 3) +
         "x, throughput " + fmt(tp_ratio, 3) + "x, BERTSim " + fmt(head.mean_bertsim, 4) + " vs " +
         fmt(zero.mean_bertsim, 4) + "; " + fmt(secs, 1) + " s";
}

std::string criterion9(Check& c, const pipeline::RunConfig& run) {
  auto gw = gateway::build_gateway(pipeline::serve_config(run));
  gateway::GatewayServer server(gw, {"127.0.0.1", 0});
  const int port = server.start();

  const auto ds = pipeline::load_dataset(run);
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < 100; ++i) texts.push_back(ds.test[i % ds.test.size()].query.text);

  std::mutex m;
  std::vector<double> decision_ms;
  std::map<std::string, std::uint64_t> hits;
  eval::Money replayed = 0;
  std::atomic<int> succeeded{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < 100; ++w) {
    pool.emplace_back([&, w] {
      httplib::Client client("127.0.0.1", port);
      client.set_read_timeout(std::chrono::seconds(30));
      auto res = client.Post("/v1/query", json{{"text", texts[w]}}.dump(), "application/json");
      if (!res || res->status != 200) return;
      const auto j = json::parse(res->body);
      std::lock_guard lock(m);
      ++succeeded;
      decision_ms.push_back(j.at("decision_ms").get<double>());
      ++hits[j.at("expert").get<std::string>()];
      replayed += j.at("cost_picodollars").get<eval::Money>();
    });
  }
  for (auto& t : pool) t.join();
  httplib::Client client("127.0.0.1", port);
  auto stats_res = client.Get("/v1/stats");
  server.stop();

  c.expect(succeeded == 100, std::to_string(succeeded.load()) + "/100 succeeded");
  c.expect(stats_res && stats_res->status == 200, "stats endpoint");
  if (!stats_res) return "no stats";
  const auto stats = json::parse(stats_res->body);
  std::uint64_t hit_sum = 0;
  for (const auto& [e, n] : stats.at("hits").items()) {
    hit_sum += n.get<std::uint64_t>();
    const auto it = hits.find(e);
    c.expect(n.get<std::uint64_t>() == (it == hits.end() ? 0 : it->second), "hits for " + e);
  }
  c.expect(stats.at("total_requests") == 100 && hit_sum == 100, "stats conservation");
  c.expect(stats.at("failed_requests") == 0, "failed requests");
  const auto cumulative = stats.at("cumulative_cost_picodollars").get<eval::Money>();
  c.expect(cumulative == replayed, "cumulative cost " + std::to_string(cumulative) + " vs replayed " +
                                       std::to_string(replayed));
  std::sort(decision_ms.begin(), decision_ms.end());
  const double p50 = decision_ms.empty() ? 1e9 : decision_ms[decision_ms.size() / 2];
  c.expect(p50 < 50.0, "p50 decision " + fmt(p50, 3) + " ms");
  return std::to_string(succeeded.load()) + "/100 ok via " + gw->settings().default_method + ", cost " +
         eval::format_dollars(cumulative, 9) + " replayed exactly, p50 decision " + fmt(p50, 3) + " ms";
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = testutil::read_file(e.path());
  }
  return files;
}

std::string criterion10(Check& c, const fs::path& dir) {
  std::map<std::string, std::string> trees[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = dir / ("run" + std::to_string(i));
    const std::string cmd = std::string("\"") + LLMROUTE_CLI + "\" simulate --seed 42 --out \"" + out.string() +
                            "\" > \"" + (dir / ("stdout" + std::to_string(i))).string() + "\"";
    const int rc = std::system(cmd.c_str());
    c.expect(rc == 0, "simulate exit status " + std::to_string(rc));
    trees[i] = read_tree(out);
  }
  c.expect(!trees[0].empty(), "no artifacts");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    const auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != bytes) {
      ++differing;
      c.expect(false, "differs: " + name);
    }
  }
  c.expect(trees[0].size() == trees[1].size(), "file sets differ");
  return std::to_string(trees[0].size()) + " artifact files, " + std::to_string(differing) + " differ";
}

}  // namespace

int main() {
  testutil::TempDir scratch("acceptance");
  pipeline::RunConfig canonical;
  canonical.out = scratch / "canonical";

  const std::vector<std::pair<int, std::function<std::string(Check&)>>> criteria = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, [&](Check& c) { return criterion7(c, canonical); }},
      {8, [&](Check& c) { return criterion8(c, scratch / "trilemma"); }},
      {9, [&](Check& c) { return criterion9(c, canonical); }},
      {10, [&](Check& c) { return criterion10(c, scratch.path()); }},
  };

  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Check c;
    std::string detail;
    try {
      detail = fn(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail;
    for (const auto& f : c.failures) std::cout << " [" << f << "]";
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
