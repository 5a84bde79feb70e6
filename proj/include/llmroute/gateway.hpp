// gateway.hpp - the serving path: route a query, render the chosen expert's
// prompt, dispatch it through that expert's adaptor and account for it.
//
// Routers and adaptors are shared immutable state; only GatewayStats is
// mutated, under one mutex, after the expert has answered.

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "llmroute/adaptor.hpp"
#include "llmroute/eval.hpp"
#include "llmroute/routers.hpp"
#include "llmroute/simx.hpp"

namespace httplib {
class Server;
}

namespace llmroute::gateway {

inline constexpr std::string_view kPlaceholder = "{query}";

// Throws a config error unless the template holds exactly one placeholder.
void validate_template(std::string_view tmpl);
std::string render_prompt(std::string_view tmpl, std::string_view query_text);

enum class AdaptorKind { kRemote, kSimulated };

struct ExpertEndpointConfig {
  std::string expert_name;
  AdaptorKind kind = AdaptorKind::kSimulated;
  Locality locality = Locality::kCloud;
  std::string prompt_template{kPlaceholder};
  GenerationParams params;
  std::string pricing_family;
  // remote only
  std::string base_url;
  std::string path = "/v1/generate";
  std::string model;

  void validate() const;
};

// Provider wire contract:
//   request  {"model", "prompt", "max_tokens", "temperature", "top_p"}
//   response {"text", "input_tokens", "output_tokens", "logprobs"?}
class RemoteAdaptor final : public ExpertAdaptor {
 public:
  explicit RemoteAdaptor(ExpertEndpointConfig config);
  const std::string& name() const override { return config_.expert_name; }
  const std::string& pricing_family() const override { return config_.pricing_family; }
  ExpertReply execute(const ExpertRequest& request) override;

 private:
  ExpertEndpointConfig config_;
};

enum class FallbackPolicy { kFail, kFallback };

struct Endpoint {
  ExpertEndpointConfig config;
  std::shared_ptr<ExpertAdaptor> adaptor;
};

struct GatewaySettings {
  double timeout_seconds = 60.0;
  FallbackPolicy fallback = FallbackPolicy::kFail;
  std::string fallback_expert;
  // Answer on local experts in-process; only cloud experts count as remote.
  bool locality_policy = false;
  std::string default_method;
  eval::PricingTable pricing = eval::PricingTable::defaults();
};

struct QueryRequest {
  std::string text;
  std::optional<std::string> method;
};

struct QueryResponse {
  std::string expert;         // the expert that answered
  std::string routed_expert;  // the router's choice
  std::string method;
  std::string response;
  std::map<std::string, double> scores;
  eval::Money cost = 0;
  double decision_ms = 0.0;
  double expert_ms = 0.0;
  bool degraded = false;
  std::optional<double> nll;

  nlohmann::json to_json() const;
};

struct GatewayStats {
  std::uint64_t total_requests = 0;  // answered requests
  std::uint64_t failed_requests = 0;
  std::uint64_t degraded_requests = 0;
  std::uint64_t remote_calls = 0;
  std::map<std::string, std::uint64_t> hits;  // every endpoint, zeros included
  eval::Money cumulative_cost = 0;
  double mean_decision_ms = 0.0;  // over the last kLatencyWindow decisions

  static constexpr std::size_t kLatencyWindow = 1024;
  nlohmann::json to_json() const;
};

class Gateway {
 public:
  Gateway(GatewaySettings settings,
          std::map<std::string, std::shared_ptr<const routers::Router>> routers,
          std::vector<Endpoint> endpoints);

  // embed -> classify -> render -> dispatch. Throws AdaptorError when the
  // expert fails and no fallback is configured, config errors for an
  // unknown method.
  QueryResponse handle_query(const QueryRequest& request);

  GatewayStats stats() const;
  const GatewaySettings& settings() const { return settings_; }
  std::vector<std::string> methods() const;

 private:
  bool is_remote(const Endpoint& endpoint) const;
  ExpertReply dispatch(const Endpoint& endpoint, const std::string& text) const;

  GatewaySettings settings_;
  std::map<std::string, std::shared_ptr<const routers::Router>> routers_;
  std::map<std::string, Endpoint> endpoints_;

  mutable std::mutex mutex_;
  GatewayStats stats_;
  std::deque<double> latency_window_;
  double latency_sum_ = 0.0;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

// POST /v1/query, GET /v1/stats, GET /healthz.
class GatewayServer {
 public:
  GatewayServer(std::shared_ptr<Gateway> gateway, ServerOptions options);
  ~GatewayServer();
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

 private:
  void bind();

  std::shared_ptr<Gateway> gateway_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

// Config file:
// {
//   "experts": [{"name", "kind": "simulated"|"remote", "locality": "local"|"cloud",
//                "template", "generation": {...}, "pricing_family",
//                "base_url", "path", "model"}],
//   "fleet": "fleet.json",            // simulated expert definitions
//   "routers": {"mlp": "routers/mlp/manifest.json"},
//   "default_method": "mlp",
//   "timeout_seconds": 60,
//   "fallback": {"policy": "fail"|"fallback", "expert": "..."},
//   "locality_policy": false,
//   "pricing": {...},
//   "listen": {"host": "127.0.0.1", "port": 8080}
// }
// Relative paths resolve against the config file's directory.
struct GatewayConfig {
  GatewaySettings settings;
  std::vector<ExpertEndpointConfig> experts;
  std::filesystem::path fleet;
  std::map<std::string, std::filesystem::path> routers;
  ServerOptions listen;
};

// One entry of the "experts" list.
ExpertEndpointConfig parse_endpoint_config(const nlohmann::json& j);
GatewayConfig parse_gateway_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
GatewayConfig load_gateway_config(const std::filesystem::path& path);
std::shared_ptr<Gateway> build_gateway(const GatewayConfig& config);

}  // namespace llmroute::gateway
