#include <cmath>
#include <set>

#include "doctest.h"
#include "llmroute/dataprep.hpp"
#include "llmroute/simx.hpp"
#include "test_util.hpp"

using namespace llmroute;
using namespace llmroute::dataprep;

namespace {

PredictionRecord rec(std::string q, std::string e, double sim) {
  PredictionRecord r;
  r.query_id = std::move(q);
  r.expert_name = std::move(e);
  r.bert_sim = sim;
  r.inference_seconds = 1.0;
  r.input_tokens = 10;
  r.output_tokens = 20;
  return r;
}

std::vector<Query> tagged(const std::string& tag, int n) {
  std::vector<Query> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({tag + "-" + std::to_string(100 + i), "text " + std::to_string(i), "ref", tag});
  }
  return out;
}

}  // namespace

TEST_SUITE("dataprep") {
  TEST_CASE("ingest well-formed, empty and malformed files") {
    testutil::TempDir dir("ingest");
    testutil::write_file(dir / "ok.jsonl",
                         "{\"id\":\"a\",\"instruction\":\"q1\",\"reference\":\"r1\"}\n"
                         "{\"id\":\"b\",\"instruction\":\"q2\",\"reference\":\"r2\"}\n"
                         "{\"id\":\"c\",\"instruction\":\"q3\",\"reference\":\"r3\"}\n");
    auto ok = ingest_dataset(dir / "ok.jsonl", "arc");
    REQUIRE(ok.queries.size() == 3);
    CHECK(ok.queries[0].id == "a");
    CHECK(ok.queries[2].id == "c");
    CHECK(ok.queries[1].dataset_tag == "arc");
    CHECK(ok.skipped.empty());

    testutil::write_file(dir / "empty.jsonl", "");
    auto empty = ingest_dataset(dir / "empty.jsonl", "arc");
    CHECK(empty.queries.empty());
    CHECK(empty.skipped.empty());

    testutil::write_file(dir / "bad.jsonl",
                         "{\"id\":\"a\",\"instruction\":\"q1\",\"reference\":\"r1\"}\n"
                         "{\"id\":\"b\",\"instruction\":\n"
                         "{\"id\":\"c\",\"instruction\":\"q3\",\"reference\":\"r3\"}\n"
                         "{\"id\":\"d\",\"instruction\":\"q4\",\"reference\":\"r4\"}\n");
    auto bad = ingest_dataset(dir / "bad.jsonl", "arc");
    CHECK(bad.queries.size() == 3);
    REQUIRE(bad.skipped.size() == 1);
    CHECK(bad.skipped[0].line == 2);

    CHECK_THROWS_AS(ingest_dataset(dir / "missing.jsonl", "arc"), Error);
  }

  TEST_CASE("corpus and predictions round-trip") {
    testutil::TempDir dir("roundtrip");
    const auto qs = tagged("gsm8k", 3);
    write_corpus(dir / "c.jsonl", qs);
    CHECK(ingest_dataset(dir / "c.jsonl", "gsm8k").queries == qs);

    std::vector<PredictionRecord> rs = {rec("q1", "a", 0.5), rec("q1", "b", 0.25)};
    rs[0].nll = 1.125;
    rs[1].response_text = "line\nbreak \"quoted\"";
    write_predictions(dir / "p.jsonl", rs);
    CHECK(read_predictions(dir / "p.jsonl") == rs);
  }

  TEST_CASE("records are validated on read") {
    testutil::TempDir dir("validate");
    testutil::write_file(dir / "p.jsonl",
                         "{\"query_id\":\"q\",\"expert_name\":\"a\",\"nll\":null,\"bert_sim\":0.5,"
                         "\"inference_seconds\":0,\"input_tokens\":1,\"output_tokens\":1,"
                         "\"response_text\":\"\"}\n");
    CHECK_THROWS_AS(read_predictions(dir / "p.jsonl"), Error);
  }

  TEST_CASE("soft label examples") {
    const std::vector<double> same = {0.5, 0.5, 0.5};
    for (double p : soft_labels(same, 10.0)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const std::vector<double> two = {0.8, 0.6};
    const auto p = soft_labels(two, 10.0);
    const double oracle = std::exp(0.02) / (1.0 + std::exp(0.02));
    CHECK(std::abs(p[0] - oracle) <= 1e-12);
    CHECK(std::abs(p[0] - 0.50500) <= 1e-5);
    CHECK(std::abs(p[1] - 0.49500) <= 1e-5);

    const std::vector<double> sharp = {0.9, 0.1};
    CHECK(soft_labels(sharp, 0.001)[0] > 0.999999);
  }

  TEST_CASE("soft label errors") {
    const std::vector<double> ok = {1.0};
    CHECK_THROWS_AS(soft_labels(ok, 0.0), Error);
    CHECK_THROWS_AS(soft_labels(ok, -1.0), Error);
    const std::vector<double> bad = {1.0, std::nan("")};
    CHECK_THROWS_AS(soft_labels(bad, 1.0), Error);
    CHECK_THROWS_AS(soft_labels(std::vector<double>{}, 1.0), Error);
  }

  TEST_CASE("negated nll labels favour the lowest nll") {
    RecordTable t;
    auto a = rec("q", "a", 0.9);
    auto b = rec("q", "b", 0.1);
    a.nll = 3.0;
    b.nll = 1.0;
    t["q"]["a"] = a;
    t["q"]["b"] = b;
    const std::vector<std::string> experts = {"a", "b"};
    auto rows = build_soft_labels(t, experts, 1.0, LabelMetric::kNegatedNll);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].probs["b"] > rows[0].probs["a"]);
    auto bs = build_soft_labels(t, experts, 1.0, LabelMetric::kBertSim);
    CHECK(bs[0].probs["a"] > bs[0].probs["b"]);
  }

  TEST_CASE("stratified split arithmetic and determinism") {
    auto one = tagged("arc", 10);
    auto s = stratified_split(one, 0.8, 42);
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);

    auto two = tagged("arc", 10);
    auto more = tagged("mbpp", 10);
    two.insert(two.end(), more.begin(), more.end());
    auto s2 = stratified_split(two, 0.8, 42);
    std::map<std::string, int> train_per_tag;
    for (const auto& q : s2.train) train_per_tag[q.dataset_tag]++;
    CHECK(train_per_tag["arc"] == 8);
    CHECK(train_per_tag["mbpp"] == 8);

    auto again = stratified_split(two, 0.8, 42);
    CHECK(again.train == s2.train);
    CHECK(again.test == s2.test);

    std::set<std::string> train_ids;
    for (const auto& q : s2.train) train_ids.insert(q.id);
    for (const auto& q : s2.test) CHECK_FALSE(train_ids.contains(q.id));

    // Input order must not matter.
    std::reverse(two.begin(), two.end());
    CHECK(stratified_split(two, 0.8, 42).train == s2.train);
  }

  TEST_CASE("stratified split property: per-tag train size within one of 0.8 n") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Query> qs;
      std::map<std::string, int> n;
      for (const char* tag : {"a", "b", "c"}) {
        const int count = 2 + static_cast<int>(rng.index(60));
        n[tag] = count;
        auto part = tagged(tag, count);
        qs.insert(qs.end(), part.begin(), part.end());
      }
      const auto s = stratified_split(qs, 0.8, trial);
      std::map<std::string, int> tr;
      for (const auto& q : s.train) tr[q.dataset_tag]++;
      for (const auto& [tag, count] : n) {
        CHECK(std::abs(tr[tag] - 0.8 * count) <= 1.0);
        CHECK(tr[tag] >= 1);
        CHECK(tr[tag] <= count - 1);
      }
    }
  }

  TEST_CASE("stratified split errors") {
    auto qs = tagged("arc", 1);
    CHECK_THROWS_AS(stratified_split(qs, 0.8, 42), Error);
    auto ok = tagged("arc", 4);
    CHECK_THROWS_AS(stratified_split(ok, 1.0, 42), Error);
    CHECK_THROWS_AS(stratified_split(ok, 0.0, 42), Error);
  }

  TEST_CASE("sample weight examples") {
    auto w = sample_weights({{"a", 10}, {"b", 30}, {"c", 60}});
    CHECK(w.per_class["a"] == doctest::Approx(10.0 / 15.0).epsilon(1e-12));
    CHECK(w.per_class["b"] == doctest::Approx((10.0 / 3.0) / 15.0).epsilon(1e-12));
    CHECK(w.per_class["c"] == doctest::Approx((5.0 / 3.0) / 15.0).epsilon(1e-12));
    auto eq = sample_weights({{"a", 5}, {"b", 5}});
    CHECK(eq.per_class["a"] == doctest::Approx(0.5));
    CHECK(sample_weights({{"a", 7}}).per_class["a"] == doctest::Approx(1.0));
    CHECK_THROWS_AS(sample_weights({{"a", 0}, {"b", 1}}), Error);
  }

  TEST_CASE("sample weight properties") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      std::map<std::string, std::size_t> counts;
      const std::size_t k = 1 + rng.index(7);
      for (std::size_t i = 0; i < k; ++i) counts["e" + std::to_string(i)] = 1 + rng.index(500);
      const auto w = sample_weights(counts);
      double sum = 0;
      for (const auto& [name, x] : w.per_class) {
        CHECK(x > 0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
      for (const auto& [a, ca] : counts) {
        for (const auto& [b, cb] : counts) {
          if (ca < cb) CHECK(w.per_class.at(a) > w.per_class.at(b));
        }
      }
    }
  }

  TEST_CASE("best expert label") {
    std::vector<PredictionRecord> r = {rec("q", "a", 0.7), rec("q", "b", 0.9), rec("q", "c", 0.8)};
    CHECK(best_expert_label(r) == "b");
    std::vector<PredictionRecord> tie = {rec("q", "b", 0.9), rec("q", "a", 0.9)};
    CHECK(best_expert_label(tie) == "a");
    std::vector<PredictionRecord> one = {rec("q", "c", 0.2)};
    CHECK(best_expert_label(one) == "c");
    CHECK_THROWS_AS(best_expert_label(std::vector<PredictionRecord>{}), Error);
  }

  TEST_CASE("build_prediction_dataset cardinality, verbatim reply and timing") {
    simx::SimExpertConfig perfect;
    perfect.expert_name = "perfect";
    perfect.affinity = {{"arc", 1.0}};
    perfect.latency = {0.5, 0.0};
    perfect.tokens = {100, 0};
    perfect.pricing_family = "Fox-1.6B";
    auto weak = perfect;
    weak.expert_name = "weak";
    weak.affinity = {{"arc", 0.3}};
    auto mid = perfect;
    mid.expert_name = "mid";
    mid.affinity = {{"arc", 0.6}};

    AdaptorMap adaptors;
    for (const auto& c : {perfect, weak, mid}) adaptors[c.expert_name] = std::make_shared<simx::SimulatedExpert>(c);
    std::vector<Query> qs = {{"q1", "what is heat", "heat is energy moving between bodies", "arc"},
                             {"q2", "what is mass", "mass measures the amount of matter", "arc"}};
    embed::StubEmbedder stub(256, 42);
    const auto build = build_prediction_dataset(qs, adaptors, stub);
    REQUIRE(build.records.size() == 6);
    CHECK(build.failures.empty());
    for (const auto& r : build.records) {
      // Independent cosine of the same two vectors, bit for bit.
      const auto& q = r.query_id == "q1" ? qs[0] : qs[1];
      CHECK(r.bert_sim == embed::cosine(stub.embed(q.reference), stub.embed(r.response_text)).value);
      if (r.expert_name == "perfect") {
        CHECK(r.bert_sim == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.output_tokens == 100);
        CHECK(r.inference_seconds == doctest::Approx(0.5).epsilon(1e-9));
      }
    }
    CHECK(std::is_sorted(build.records.begin(), build.records.end(), [](const auto& a, const auto& b) {
      return std::tie(a.query_id, a.expert_name) < std::tie(b.query_id, b.expert_name);
    }));

    BuildOptions serial;
    serial.concurrent_experts = false;
    CHECK(build_prediction_dataset(qs, adaptors, stub, serial).records == build.records);
  }

  TEST_CASE("failed expert calls are logged and the query is excluded") {
    struct Broken final : ExpertAdaptor {
      std::string n = "broken", f = "Fox-1.6B";
      const std::string& name() const override { return n; }
      const std::string& pricing_family() const override { return f; }
      ExpertReply execute(const ExpertRequest&) override {
        throw AdaptorError(AdaptorFailure::kTransport, n, "down");
      }
    };
    simx::SimExpertConfig ok;
    ok.expert_name = "ok";
    ok.pricing_family = "Fox-1.6B";
    AdaptorMap adaptors = {{"broken", std::make_shared<Broken>()},
                           {"ok", std::make_shared<simx::SimulatedExpert>(ok)}};
    std::vector<Query> qs = {{"q1", "a b", "c d", "arc"}, {"q2", "e f", "g h", "arc"}};
    embed::StubEmbedder stub;
    const auto build = build_prediction_dataset(qs, adaptors, stub);
    CHECK(build.records.size() == 2);
    CHECK(build.failures.size() == 2);
    CHECK(build.incomplete_queries == std::set<std::string>{"q1", "q2"});

    QuerySplit split{{qs[0]}, {qs[1]}};
    const std::vector<std::string> experts = {"broken", "ok"};
    const auto ds = assemble_dataset(split, group_by_query(build.records), experts);
    CHECK(ds.train.empty());
    CHECK(ds.test.empty());
    CHECK(ds.excluded.size() == 2);
  }

  TEST_CASE("assemble_dataset attaches labels and weights") {
    std::vector<PredictionRecord> rs;
    for (int i = 0; i < 6; ++i) {
      const std::string q = "q" + std::to_string(i);
      rs.push_back(rec(q, "a", i < 4 ? 0.9 : 0.1));
      rs.push_back(rec(q, "b", i < 4 ? 0.2 : 0.8));
    }
    std::vector<Query> train, test;
    for (int i = 0; i < 6; ++i) train.push_back({"q" + std::to_string(i), "t", "r", "x"});
    test.push_back(train.back());
    train.pop_back();
    const std::vector<std::string> experts = {"b", "a"};
    const auto ds = assemble_dataset({train, test}, group_by_query(rs), experts);
    CHECK(ds.experts == std::vector<std::string>{"a", "b"});
    REQUIRE(ds.train.size() == 5);
    CHECK(ds.train[0].best_expert == "a");
    CHECK(ds.train[4].best_expert == "b");
    // 4 of class a, 1 of class b: raw 5/4 and 5, normalized.
    CHECK(ds.train[0].weight == doctest::Approx(1.25 / 6.25));
    CHECK(ds.train[4].weight == doctest::Approx(5.0 / 6.25));
    double s = 0;
    for (double p : ds.train[0].target) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(ds.test.size() == 1);
    CHECK(ds.test[0].best_expert == "b");
  }

  TEST_CASE("split file round-trip") {
    testutil::TempDir dir("split");
    auto qs = tagged("arc", 10);
    auto s = stratified_split(qs, 0.8, 42);
    write_split(dir / "split.json", s, 0.8, 42);
    auto back = read_split(dir / "split.json", qs);
    CHECK(back.train == s.train);
    CHECK(back.test == s.test);
  }
}
