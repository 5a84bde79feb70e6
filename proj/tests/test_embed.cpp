#include <cmath>
#include <sstream>

#include "doctest.h"
#include "llmroute/embed.hpp"

using namespace llmroute;
using namespace llmroute::embed;

namespace {

double naive_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

}  // namespace

TEST_SUITE("common") {
  TEST_CASE("rng draws are reproducible and in range") {
    Rng a(7), b(7);
    for (int i = 0; i < 1000; ++i) {
      const double u = a.uniform();
      CHECK(u == b.uniform());
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
    Rng c(9);
    std::vector<int> hist(5, 0);
    for (int i = 0; i < 5000; ++i) hist[c.index(5)]++;
    for (int h : hist) CHECK(std::abs(h - 1000) < 150);
  }

  TEST_CASE("argmax picks the first maximum") {
    const std::vector<double> v = {0.1, 0.5, 0.5, 0.2};
    CHECK(argmax_first(v) == 1);
  }

  TEST_CASE("error kinds carry exit codes") {
    CHECK(config_error("x", "m").exit_code() == 2);
    CHECK(data_error("x", "m").exit_code() == 3);
    CHECK(Error(ErrorKind::kTraining, "learn", "m").exit_code() == 4);
    CHECK(Error(ErrorKind::kServing, "gateway", "m").exit_code() == 5);
  }

  TEST_CASE("mix_seed separates keys") {
    CHECK(mix_seed(42, "a") != mix_seed(42, "b"));
    CHECK(mix_seed(42, "a") == mix_seed(42, "a"));
  }
}

TEST_SUITE("embed") {
  TEST_CASE("tokenize") {
    CHECK(tokenize("What is 2+2?") == std::vector<std::string>{"what", "is", "2", "2"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("Hello HELLO hello") == std::vector<std::string>{"hello", "hello", "hello"});
    CHECK(tokenize("  --  ").empty());
  }

  TEST_CASE("tokenize handles non-ascii letters") {
    const auto toks = tokenize("Größe café«naïve»");
    REQUIRE(toks.size() == 3);
    CHECK(toks[1] == "café");
  }

  TEST_CASE("fit_vectorizer counts documents and ranks by frequency") {
    const std::vector<std::string> corpus = {"a b", "a c"};
    const auto m = fit_vectorizer(corpus, {VectorizerKind::kBow, 1, 30000});
    REQUIRE(m.vocabulary.size() == 3);
    CHECK(m.vocabulary.token(0) == "a");
    CHECK(m.document_frequency[0] == 2);
    CHECK(m.vocabulary.find("b").has_value());
    CHECK(m.vocabulary.find("c").has_value());

    const std::vector<std::string> skew = {"a a a b b c"};
    const auto capped = fit_vectorizer(skew, {VectorizerKind::kBow, 1, 2});
    CHECK(capped.vocabulary.tokens() == std::vector<std::string>{"a", "b"});

    const auto freq2 = fit_vectorizer(skew, {VectorizerKind::kBow, 2, 100});
    CHECK(freq2.vocabulary.tokens() == std::vector<std::string>{"a", "b"});
  }

  TEST_CASE("fit_vectorizer rejects an empty corpus") {
    CHECK_THROWS_AS(fit_vectorizer(std::vector<std::string>{}, {}), Error);
  }

  TEST_CASE("idf of a token in every document is 1") {
    const std::vector<std::string> corpus = {"x y", "x z", "x"};
    const auto m = fit_vectorizer(corpus, {VectorizerKind::kTfidf, 1, 100});
    const auto ix = *m.vocabulary.find("x");
    CHECK(m.idf[ix] == doctest::Approx(1.0).epsilon(1e-15));
    const auto iy = *m.vocabulary.find("y");
    CHECK(m.idf[iy] == doctest::Approx(std::log(4.0 / 2.0) + 1.0).epsilon(1e-12));
  }

  TEST_CASE("bow counts and oov handling") {
    const std::vector<std::string> corpus = {"a a b"};
    const auto m = fit_vectorizer(corpus, {});
    const auto v = vectorize("a a b", m);
    REQUIRE(v.nnz() == 2);
    CHECK(v.indices == std::vector<std::uint32_t>{0, 1});
    CHECK(v.values == std::vector<double>{2.0, 1.0});
    const auto oov = vectorize("zzz qqq", m);
    CHECK(oov.zero());
    CHECK(oov.dimension == 2);
  }

  TEST_CASE("bow mass equals in-vocabulary token count") {
    const std::vector<std::string> corpus = {"the cat sat on the mat", "dogs chase the cat"};
    const auto m = fit_vectorizer(corpus, {});
    Rng rng(3);
    const std::vector<std::string> words = {"the", "cat", "sat", "on", "mat", "dogs", "chase", "zebra", "moon"};
    for (int trial = 0; trial < 200; ++trial) {
      std::string text;
      std::size_t in_vocab = 0;
      const std::size_t n = 1 + rng.index(12);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& w = words[rng.index(words.size())];
        text += w + " ";
        in_vocab += m.vocabulary.find(w).has_value();
      }
      const auto v = vectorize(text, m);
      double mass = 0;
      for (double x : v.values) mass += x;
      CHECK(mass == static_cast<double>(in_vocab));
      for (std::size_t i = 1; i < v.indices.size(); ++i) CHECK(v.indices[i - 1] < v.indices[i]);
    }
  }

  TEST_CASE("tfidf vectors have unit norm") {
    const std::vector<std::string> corpus = {"alpha beta", "beta gamma gamma", "delta"};
    const auto m = fit_vectorizer(corpus, {VectorizerKind::kTfidf, 1, 100});
    for (const char* t : {"alpha", "beta gamma", "gamma gamma delta alpha"}) {
      CHECK(vectorize(t, m).l2_norm() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("fit_vectorizer is deterministic and round-trips") {
    const std::vector<std::string> corpus = {"one two three", "two three four", "four five"};
    for (auto kind : {VectorizerKind::kBow, VectorizerKind::kTfidf}) {
      const auto a = fit_vectorizer(corpus, {kind, 1, 100});
      const auto b = fit_vectorizer(corpus, {kind, 1, 100});
      CHECK(a == b);
      std::stringstream ss;
      write_vectorizer(ss, a);
      const auto back = read_vectorizer(ss);
      CHECK(back == a);
      CHECK(vectorize("two four", back).values == vectorize("two four", a).values);
    }
  }

  TEST_CASE("read_vectorizer rejects garbage") {
    std::stringstream ss("not a vectorizer\n");
    CHECK_THROWS_AS(read_vectorizer(ss), Error);
  }

  TEST_CASE("cosine basics") {
    const std::vector<double> a = {1.0, 2.0, 3.0};
    CHECK(cosine(a, a).value == doctest::Approx(1.0).epsilon(1e-12));
    const std::vector<double> e1 = {1, 0}, e2 = {0, 1};
    CHECK(cosine(e1, e2).value == 0.0);
    const std::vector<double> z = {0, 0, 0};
    const auto r = cosine(a, z);
    CHECK(r.degenerate);
    CHECK(r.value == 0.0);
  }

  TEST_CASE("cosine matches a naive oracle and is symmetric and scale invariant") {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
      const auto a = random_vec(rng, 17), b = random_vec(rng, 17);
      const double c = cosine(a, b).value;
      CHECK(std::abs(c - naive_cosine(a, b)) <= 1e-12);
      CHECK(std::abs(c - cosine(b, a).value) <= 1e-12);
      CHECK(c <= 1.0 + 1e-9);
      CHECK(c >= -1.0 - 1e-9);
      auto scaled = a;
      const double k = 0.01 + rng.uniform() * 100.0;
      for (auto& x : scaled) x *= k;
      CHECK(std::abs(cosine(scaled, b).value - c) <= 1e-9);
    }
  }

  TEST_CASE("sparse cosine agrees with dense cosine") {
    Rng rng(12);
    for (int i = 0; i < 100; ++i) {
      auto a = random_vec(rng, 30), b = random_vec(rng, 30);
      for (std::size_t j = 0; j < a.size(); ++j) {
        if (rng.uniform() < 0.5) a[j] = 0;
        if (rng.uniform() < 0.5) b[j] = 0;
      }
      const auto sa = SparseVector::from_dense(a), sb = SparseVector::from_dense(b);
      CHECK(std::abs(cosine(sa, sb).value - cosine(a, b).value) <= 1e-12);
      CHECK(sa.to_dense() == a);
    }
  }

  TEST_CASE("stub embedder contract") {
    StubEmbedder stub(64, 42);
    CHECK(stub.dimension() == 64);
    const auto a = stub.embed("the quick brown fox");
    CHECK(a.size() == 64);
    CHECK(a == stub.embed("the quick brown fox"));
    // Same token multiset, different order and case.
    CHECK(a == stub.embed("Fox brown QUICK the"));
    CHECK(a != stub.embed("the quick brown fox fox"));
    double n = 0;
    for (double x : a) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(stub.embed("").size() == 64);
    CHECK(StubEmbedder(64, 43).embed("fox") != stub.embed("fox"));
  }

  TEST_CASE("disjoint token sets are nearly orthogonal under the stub") {
    StubEmbedder stub(256, 42);
    const auto a = stub.embed("alpha beta gamma delta epsilon zeta eta theta");
    const auto b = stub.embed("one two three four five six seven eight");
    CHECK(std::abs(cosine(a, b).value) < 0.2);
  }

  TEST_CASE("embed checks the advertised dimension") {
    struct Liar final : EmbeddingProvider {
      std::string model_name() const override { return "liar"; }
      std::size_t dimension() const override { return 4; }
      DenseVector embed(std::string_view) const override { return {1, 2, 3}; }
    } liar;
    CHECK_THROWS_AS(llmroute::embed::embed("x", liar), Error);
  }
}
