#include <chrono>
#include <cmath>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "llmroute/embed.hpp"

namespace llmroute::embed {

namespace {

void set_timeouts(httplib::Client& client, double seconds) {
  const auto us = std::chrono::microseconds(static_cast<long long>(seconds * 1e6));
  client.set_connection_timeout(us);
  client.set_read_timeout(us);
  client.set_write_timeout(us);
}

}  // namespace

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) throw config_error("embed", "remote embedder needs a base_url");
  if (options_.dimension == 0) throw config_error("embed", "remote embedder needs a dimension");
  if (options_.max_attempts < 1) options_.max_attempts = 1;
}

DenseVector RemoteEmbedder::embed(std::string_view text) const {
  nlohmann::json body = {{"model", options_.model}, {"text", std::string(text)}};
  const std::string payload = body.dump();
  std::string last_error;
  bool retryable = false;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    httplib::Client client(options_.base_url);
    set_timeouts(client, options_.timeout_seconds);
    auto res = client.Post(options_.path, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      retryable = true;
    } else if (res->status >= 500 || res->status == 429) {
      last_error = "provider status " + std::to_string(res->status);
      retryable = true;
    } else if (res->status != 200) {
      throw EmbeddingError("provider status " + std::to_string(res->status), false, attempt);
    } else {
      auto doc = nlohmann::json::parse(res->body, nullptr, false);
      if (doc.is_discarded() || !doc.contains("embedding") || !doc["embedding"].is_array()) {
        throw EmbeddingError("malformed provider response", false, attempt);
      }
      DenseVector v;
      v.reserve(doc["embedding"].size());
      for (const auto& x : doc["embedding"]) {
        if (!x.is_number()) throw EmbeddingError("non-numeric embedding entry", false, attempt);
        v.push_back(x.get<double>());
      }
      if (v.size() != options_.dimension) {
        throw EmbeddingError("embedding dimension " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(options_.dimension),
                             false, attempt);
      }
      return v;
    }
    if (attempt < options_.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    }
  }
  throw EmbeddingError(last_error, retryable, options_.max_attempts);
}

}  // namespace llmroute::embed
