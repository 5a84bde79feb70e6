#include <chrono>
#include <set>

#include "doctest.h"
#include "llmroute/embed.hpp"
#include "llmroute/simx.hpp"
#include "test_util.hpp"

using namespace llmroute;
using namespace llmroute::simx;

namespace {

SimExpertConfig expert(const std::string& name, double arc_affinity) {
  SimExpertConfig c;
  c.expert_name = name;
  c.affinity = {{"arc", arc_affinity}};
  c.pricing_family = "Fox-1.6B";
  c.tokens = {50.0, 5.0};
  c.latency = {0.5, 0.1};
  return c;
}

dataprep::Query arc_query(int i) {
  return {"q" + std::to_string(i), "which gas do plants absorb",
          "plants absorb carbon dioxide from the air through small pores in their leaves during the day "
          "and release oxygen as a product of photosynthesis",
          "arc"};
}

double bertsim(const embed::EmbeddingProvider& e, const std::string& a, const std::string& b) {
  return embed::cosine(e.embed(a), e.embed(b)).value;
}

}  // namespace

TEST_SUITE("simx") {
  TEST_CASE("affinity one echoes the reference verbatim") {
    const auto q = arc_query(1);
    const auto r = simulate_reply(expert("perfect", 1.0), q);
    CHECK(r.response_text == q.reference);
    CHECK(r.output_tokens >= 1);
    CHECK(r.elapsed_seconds > 0);
    REQUIRE(r.token_logprobs);
    CHECK(r.token_logprobs->size() == static_cast<std::size_t>(r.output_tokens));
    CHECK(*r.mean_nll() == 0.0);
  }

  TEST_CASE("affinity zero produces unrelated text") {
    const embed::StubEmbedder stub(384, 42);
    double total = 0;
    for (int i = 0; i < 20; ++i) {
      const auto q = arc_query(i);
      const double s = bertsim(stub, simulate_reply(expert("noise", 0.0), q).response_text, q.reference);
      CHECK(s <= 0.2);
      total += s;
    }
    CHECK(total / 20 <= 0.2);
  }

  TEST_CASE("quality grows with affinity") {
    const embed::StubEmbedder stub(384, 42);
    for (int i = 0; i < 30; ++i) {
      const auto q = arc_query(i);
      double prev = -2.0, prev_nll = 1e9;
      for (double a : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        const auto r = simulate_reply(expert("e", a), q);
        const double s = bertsim(stub, r.response_text, q.reference);
        CHECK(s >= prev - 1e-12);
        prev = s;
        // Same seed stream, so log-probs scale with (1 - a).
        CHECK(*r.mean_nll() <= prev_nll + 1e-12);
        prev_nll = *r.mean_nll();
      }
    }
  }

  TEST_CASE("log-probs are non-positive and match the output length") {
    auto c = expert("e", 0.3);
    for (int i = 0; i < 50; ++i) {
      GenerationParams p;
      p.max_tokens = 40;
      const auto r = simulate_reply(c, arc_query(i), p);
      CHECK(r.output_tokens <= 40);
      REQUIRE(r.token_logprobs);
      CHECK(r.token_logprobs->size() == static_cast<std::size_t>(r.output_tokens));
      for (double lp : *r.token_logprobs) CHECK(lp <= 0.0);
    }
  }

  TEST_CASE("replies depend only on seed, name and query id") {
    const auto c = expert("e", 0.5);
    const auto a = simulate_reply(c, arc_query(3));
    const auto b = simulate_reply(c, arc_query(3));
    CHECK(a.response_text == b.response_text);
    CHECK(a.elapsed_seconds == b.elapsed_seconds);
    CHECK(a.token_logprobs == b.token_logprobs);
    auto other = c;
    other.seed = 7;
    CHECK(simulate_reply(other, arc_query(3)).response_text != a.response_text);
    CHECK(simulate_reply(c, arc_query(4)).elapsed_seconds != a.elapsed_seconds);
  }

  TEST_CASE("unknown tags use the affinity floor") {
    auto c = expert("e", 0.9);
    c.affinity_floor = 0.25;
    CHECK(c.affinity_for("arc") == 0.9);
    CHECK(c.affinity_for("unseen") == 0.25);
  }

  TEST_CASE("adaptor counts calls and falls back without context") {
    SimulatedExpert e(expert("e", 1.0));
    ExpertRequest req;
    req.prompt = "hello world";
    const auto r1 = e.execute(req);
    const auto r2 = e.execute(req);
    CHECK(e.calls() == 2);
    CHECK(r1.response_text == r2.response_text);
    req.query_id = "q1";
    req.dataset_tag = "arc";
    req.reference = "expected answer";
    CHECK(e.execute(req).response_text == "expected answer");
  }

  TEST_CASE("realtime experts sleep for the simulated latency") {
    auto c = expert("slow", 0.5);
    c.latency = {0.05, 0.0};
    c.realtime = true;
    SimulatedExpert e(c);
    ExpertRequest req;
    req.prompt = "x";
    const auto t0 = std::chrono::steady_clock::now();
    e.execute(req);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs >= 0.045);
  }

  TEST_CASE("config validation") {
    auto c = expert("e", 1.5);
    CHECK_THROWS_AS(c.validate(), Error);
    c = expert("", 0.5);
    CHECK_THROWS_AS(c.validate(), Error);
    c = expert("e", 0.5);
    c.latency.base_seconds = 0.0;
    CHECK_THROWS_AS(SimulatedExpert{c}, Error);
  }

  TEST_CASE("fleet parsing and round trip") {
    const auto fleet = canonical_fleet();
    CHECK(fleet.size() == 7);
    const auto back = parse_sim_fleet(fleet_to_json(fleet));
    CHECK(back == fleet);
    const auto families = pricing_families(fleet);
    CHECK(families.at("fox-sim") == "Fox-1.6B");

    CHECK_THROWS_AS(parse_sim_fleet("not json"), Error);
    CHECK_THROWS_AS(parse_sim_fleet("{\"experts\": []}"), Error);
    CHECK_THROWS_AS(parse_sim_fleet("{}"), Error);
    auto dup = fleet;
    dup[1].expert_name = dup[0].expert_name;
    CHECK_THROWS_AS(parse_sim_fleet(fleet_to_json(dup)), Error);

    const auto shipped = load_sim_fleet(std::filesystem::path(LLMROUTE_SOURCE_DIR) / "data" /
                                        "fleet_canonical.json");
    CHECK(shipped.size() == 7);
    CHECK(adaptor_map(shipped).size() == 7);
    CHECK_THROWS_AS(load_sim_fleet("/nonexistent/fleet.json"), Error);
  }

  TEST_CASE("synthetic corpus") {
    const auto spec = canonical_corpus_spec(2000);
    std::size_t total = 0;
    for (const auto& [tag, n] : spec.counts) total += n;
    CHECK(total == 2000);
    const auto a = generate_corpus(spec, 42);
    const auto b = generate_corpus(spec, 42);
    CHECK(a == b);
    CHECK(a.size() == 2000);
    std::set<std::string> ids, tags;
    for (const auto& q : a) {
      ids.insert(q.id);
      tags.insert(q.dataset_tag);
      CHECK(embed::tokenize(q.text).size() == spec.query_words);
      CHECK(!q.reference.empty());
    }
    CHECK(ids.size() == a.size());
    const auto expected = synthetic_tags();
    CHECK(tags == std::set<std::string>(expected.begin(), expected.end()));
    CHECK(generate_corpus(spec, 43) != a);
  }
}
