#include "llmroute/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "httplib.h"

namespace llmroute::gateway {

using nlohmann::json;

void validate_template(std::string_view tmpl) {
  const auto first = tmpl.find(kPlaceholder);
  if (first == std::string_view::npos) {
    throw config_error("gateway", "prompt template lacks the {query} placeholder");
  }
  if (tmpl.find(kPlaceholder, first + kPlaceholder.size()) != std::string_view::npos) {
    throw config_error("gateway", "prompt template has more than one {query} placeholder");
  }
}

std::string render_prompt(std::string_view tmpl, std::string_view query_text) {
  validate_template(tmpl);
  const auto at = tmpl.find(kPlaceholder);
  std::string out;
  out.reserve(tmpl.size() + query_text.size());
  out.append(tmpl.substr(0, at));
  out.append(query_text);
  out.append(tmpl.substr(at + kPlaceholder.size()));
  return out;
}

void ExpertEndpointConfig::validate() const {
  if (expert_name.empty()) throw config_error("gateway", "expert endpoint without a name");
  validate_template(prompt_template);
  params.validate();
  if (kind == AdaptorKind::kRemote && base_url.empty()) {
    throw config_error("gateway", "remote expert '" + expert_name + "' needs a base_url");
  }
}

namespace {

void set_timeouts(httplib::Client& client, double seconds) {
  const auto us = std::chrono::microseconds(std::max<long long>(1, static_cast<long long>(seconds * 1e6)));
  client.set_connection_timeout(us);
  client.set_read_timeout(us);
  client.set_write_timeout(us);
}

}  // namespace

RemoteAdaptor::RemoteAdaptor(ExpertEndpointConfig config) : config_(std::move(config)) {
  config_.kind = AdaptorKind::kRemote;
  config_.validate();
}

ExpertReply RemoteAdaptor::execute(const ExpertRequest& request) {
  const json body = {{"model", config_.model},
                     {"prompt", request.prompt},
                     {"max_tokens", request.params.max_tokens},
                     {"temperature", request.params.temperature},
                     {"top_p", request.params.top_p}};
  httplib::Client client(config_.base_url);
  set_timeouts(client, request.timeout_seconds);
  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(config_.path, body.dump(), "application/json");
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout ||
        (err == httplib::Error::Read && elapsed >= request.timeout_seconds)) {
      throw AdaptorError(AdaptorFailure::kTimeout, config_.expert_name,
                         "timed out after " + std::to_string(request.timeout_seconds) + " s");
    }
    throw AdaptorError(AdaptorFailure::kTransport, config_.expert_name, httplib::to_string(err));
  }
  if (res->status != 200) {
    throw AdaptorError(AdaptorFailure::kRejected, config_.expert_name,
                       "provider status " + std::to_string(res->status));
  }
  const auto doc = json::parse(res->body, nullptr, false);
  auto malformed = [&](const std::string& why) {
    return AdaptorError(AdaptorFailure::kMalformed, config_.expert_name, "malformed reply: " + why);
  };
  if (doc.is_discarded() || !doc.is_object()) throw malformed("not a JSON object");
  if (!doc.contains("text") || !doc["text"].is_string()) throw malformed("missing text");
  for (const char* k : {"input_tokens", "output_tokens"}) {
    if (!doc.contains(k) || !doc[k].is_number_integer() || doc[k].get<long>() < 0) {
      throw malformed(std::string("missing or negative ") + k);
    }
  }
  ExpertReply reply;
  reply.response_text = doc["text"].get<std::string>();
  reply.input_tokens = doc["input_tokens"].get<long>();
  reply.output_tokens = doc["output_tokens"].get<long>();
  reply.elapsed_seconds = std::max(elapsed, 1e-9);
  if (doc.contains("logprobs") && !doc["logprobs"].is_null()) {
    if (!doc["logprobs"].is_array()) throw malformed("logprobs is not an array");
    std::vector<double> lp;
    for (const auto& x : doc["logprobs"]) {
      if (!x.is_number() || x.get<double>() > 0.0) throw malformed("log-probability > 0");
      lp.push_back(x.get<double>());
    }
    if (lp.size() != static_cast<std::size_t>(reply.output_tokens)) {
      throw malformed("logprobs count differs from output_tokens");
    }
    reply.token_logprobs = std::move(lp);
  }
  return reply;
}

json QueryResponse::to_json() const {
  return {{"expert", expert},
          {"routed_expert", routed_expert},
          {"method", method},
          {"response", response},
          {"scores", scores},
          {"cost_usd", eval::to_dollars(cost)},
          {"cost_picodollars", cost},
          {"decision_ms", decision_ms},
          {"expert_ms", expert_ms},
          {"degraded", degraded},
          {"nll", nll ? json(*nll) : json(nullptr)}};
}

json GatewayStats::to_json() const {
  return {{"total_requests", total_requests},
          {"failed_requests", failed_requests},
          {"degraded_requests", degraded_requests},
          {"remote_calls", remote_calls},
          {"hits", hits},
          {"cumulative_cost_usd", eval::to_dollars(cumulative_cost)},
          {"cumulative_cost_picodollars", cumulative_cost},
          {"mean_decision_ms", mean_decision_ms}};
}

Gateway::Gateway(GatewaySettings settings,
                 std::map<std::string, std::shared_ptr<const routers::Router>> routers,
                 std::vector<Endpoint> endpoints)
    : settings_(std::move(settings)), routers_(std::move(routers)) {
  if (routers_.empty()) throw config_error("gateway", "no router loaded");
  if (endpoints.empty()) throw config_error("gateway", "no expert endpoints configured");
  if (settings_.default_method.empty()) {
    if (routers_.size() != 1) throw config_error("gateway", "default_method is required");
    settings_.default_method = routers_.begin()->first;
  }
  if (!routers_.contains(settings_.default_method)) {
    throw config_error("gateway", "default method '" + settings_.default_method + "' is not loaded");
  }
  if (!(settings_.timeout_seconds > 0.0)) throw config_error("gateway", "timeout_seconds must be > 0");

  for (auto& e : endpoints) {
    e.config.validate();
    if (!e.adaptor) throw config_error("gateway", "expert '" + e.config.expert_name + "' has no adaptor");
    try {
      settings_.pricing.family(e.config.pricing_family);
    } catch (const Error&) {
      throw config_error("gateway", "expert '" + e.config.expert_name + "' uses unknown pricing family '" +
                                        e.config.pricing_family + "'");
    }
    settings_.pricing.assign(e.config.expert_name, e.config.pricing_family);
    const std::string name = e.config.expert_name;
    if (!endpoints_.emplace(name, std::move(e)).second) {
      throw config_error("gateway", "duplicate expert endpoint '" + name + "'");
    }
  }
  for (const auto& [method, router] : routers_) {
    for (const auto& expert : router->experts()) {
      if (!endpoints_.contains(expert)) {
        throw config_error("gateway", "router '" + method + "' can choose '" + expert +
                                          "', which has no endpoint");
      }
    }
  }
  if (settings_.fallback == FallbackPolicy::kFallback && !endpoints_.contains(settings_.fallback_expert)) {
    throw config_error("gateway", "fallback expert '" + settings_.fallback_expert + "' has no endpoint");
  }
  for (const auto& [name, e] : endpoints_) stats_.hits[name] = 0;
}

std::vector<std::string> Gateway::methods() const {
  std::vector<std::string> out;
  for (const auto& [m, r] : routers_) out.push_back(m);
  return out;
}

bool Gateway::is_remote(const Endpoint& endpoint) const {
  return !(settings_.locality_policy && endpoint.config.locality == Locality::kLocal);
}

ExpertReply Gateway::dispatch(const Endpoint& endpoint, const std::string& text) const {
  ExpertRequest req;
  req.prompt = render_prompt(endpoint.config.prompt_template, text);
  req.params = endpoint.config.params;
  req.timeout_seconds = settings_.timeout_seconds;
  return endpoint.adaptor->execute(req);
}

QueryResponse Gateway::handle_query(const QueryRequest& request) {
  const std::string method = request.method.value_or(settings_.default_method);
  const auto rit = routers_.find(method);
  if (rit == routers_.end()) throw config_error("gateway", "unknown method '" + method + "'");
  const auto& router = *rit->second;

  const auto decision = router.route("request", request.text);
  QueryResponse resp;
  resp.method = method;
  resp.routed_expert = decision.chosen_expert;
  resp.decision_ms = decision.decision_latency_seconds * 1e3;
  for (std::size_t i = 0; i < router.experts().size(); ++i) {
    resp.scores[router.experts()[i]] = decision.scores[i];
  }

  const Endpoint* endpoint = &endpoints_.at(decision.chosen_expert);
  std::uint64_t remote_calls = 0;
  ExpertReply reply;
  try {
    remote_calls += is_remote(*endpoint);
    reply = dispatch(*endpoint, request.text);
  } catch (const AdaptorError&) {
    const bool can_fall_back = settings_.fallback == FallbackPolicy::kFallback &&
                               settings_.fallback_expert != endpoint->config.expert_name;
    if (!can_fall_back) {
      std::lock_guard lock(mutex_);
      ++stats_.failed_requests;
      stats_.remote_calls += remote_calls;
      throw;
    }
    endpoint = &endpoints_.at(settings_.fallback_expert);
    resp.degraded = true;
    try {
      remote_calls += is_remote(*endpoint);
      reply = dispatch(*endpoint, request.text);
    } catch (const AdaptorError&) {
      std::lock_guard lock(mutex_);
      ++stats_.failed_requests;
      stats_.remote_calls += remote_calls;
      throw;
    }
  }

  resp.expert = endpoint->config.expert_name;
  resp.response = std::move(reply.response_text);
  resp.expert_ms = reply.elapsed_seconds * 1e3;
  resp.nll = reply.mean_nll();
  resp.cost = eval::query_cost(reply.input_tokens, reply.output_tokens,
                               settings_.pricing.family(endpoint->config.pricing_family));

  std::lock_guard lock(mutex_);
  ++stats_.total_requests;
  ++stats_.hits[resp.expert];
  stats_.degraded_requests += resp.degraded;
  stats_.remote_calls += remote_calls;
  stats_.cumulative_cost += resp.cost;
  latency_window_.push_back(resp.decision_ms);
  latency_sum_ += resp.decision_ms;
  if (latency_window_.size() > GatewayStats::kLatencyWindow) {
    latency_sum_ -= latency_window_.front();
    latency_window_.pop_front();
  }
  return resp;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(mutex_);
  GatewayStats s = stats_;
  // Recomputed from the window so drift in the running sum cannot build up.
  double sum = 0.0;
  for (double x : latency_window_) sum += x;
  s.mean_decision_ms = latency_window_.empty() ? 0.0 : sum / static_cast<double>(latency_window_.size());
  return s;
}

namespace {

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kServing: return "serving";
  }
  return "unknown";
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

GatewayServer::GatewayServer(std::shared_ptr<Gateway> gateway, ServerOptions options)
    : gateway_(std::move(gateway)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200, {{"status", "ok"}});
  });
  server_->Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200, gateway_->stats().to_json());
  });
  server_->Post("/v1/query", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      reply_json(res, 400, {{"error", "body must be a JSON object with a string 'text'"}, {"kind", "data"}});
      return;
    }
    QueryRequest q;
    q.text = body["text"].get<std::string>();
    if (body.contains("method") && !body["method"].is_null()) {
      if (!body["method"].is_string()) {
        reply_json(res, 400, {{"error", "'method' must be a string"}, {"kind", "data"}});
        return;
      }
      q.method = body["method"].get<std::string>();
    }
    try {
      reply_json(res, 200, gateway_->handle_query(q).to_json());
    } catch (const Error& e) {
      const int status = e.kind() == ErrorKind::kServing ? 502 : 400;
      reply_json(res, status, {{"error", e.what()}, {"kind", kind_name(e.kind())}, {"module", e.module()}});
    } catch (const std::exception& e) {
      reply_json(res, 500, {{"error", e.what()}, {"kind", "internal"}});
    }
  });
}

GatewayServer::~GatewayServer() { stop(); }

void GatewayServer::bind() {
  if (port_ >= 0) return;
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else if (server_->bind_to_port(options_.host, options_.port)) {
    port_ = options_.port;
  }
  if (port_ <= 0) {
    port_ = -1;
    throw Error(ErrorKind::kServing, "gateway",
                "cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
}

int GatewayServer::start() {
  bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void GatewayServer::run() {
  bind();
  server_->listen_after_bind();
}

void GatewayServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

namespace {

AdaptorKind adaptor_kind_from_string(const std::string& s) {
  if (s == "simulated") return AdaptorKind::kSimulated;
  if (s == "remote") return AdaptorKind::kRemote;
  throw config_error("gateway", "unknown adaptor kind '" + s + "'");
}

Locality locality_from_string(const std::string& s) {
  if (s == "local") return Locality::kLocal;
  if (s == "cloud") return Locality::kCloud;
  throw config_error("gateway", "unknown locality '" + s + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw config_error("gateway", where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw config_error("gateway", "unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

ExpertEndpointConfig parse_endpoint_config(const json& e) {
  reject_unknown(e, {"name", "kind", "locality", "template", "generation", "pricing_family", "base_url",
                     "path", "model"},
                 "expert endpoint");
  ExpertEndpointConfig x;
  try {
    x.expert_name = e.at("name").get<std::string>();
    x.kind = adaptor_kind_from_string(e.value("kind", std::string("simulated")));
    x.locality = locality_from_string(e.value("locality", std::string("cloud")));
    x.prompt_template = e.value("template", std::string(kPlaceholder));
    if (e.contains("generation")) {
      const auto& g = e["generation"];
      x.params.max_tokens = g.value("max_tokens", x.params.max_tokens);
      x.params.temperature = g.value("temperature", x.params.temperature);
      x.params.top_p = g.value("top_p", x.params.top_p);
    }
    x.pricing_family = e.value("pricing_family", std::string());
    x.base_url = e.value("base_url", std::string());
    x.path = e.value("path", x.path);
    x.model = e.value("model", std::string());
  } catch (const json::exception& ex) {
    throw config_error("gateway", std::string("expert endpoint: ") + ex.what());
  }
  x.validate();
  return x;
}

GatewayConfig parse_gateway_config(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"experts", "fleet", "routers", "default_method", "timeout_seconds", "fallback",
                     "locality_policy", "pricing", "listen"},
                 "gateway config");
  GatewayConfig c;
  try {
    for (const auto& e : j.at("experts")) c.experts.push_back(parse_endpoint_config(e));
    if (j.contains("fleet")) c.fleet = resolve(base_dir, j["fleet"].get<std::string>());
    for (const auto& [method, path] : j.at("routers").items()) {
      c.routers[method] = resolve(base_dir, path.get<std::string>());
    }
    c.settings.default_method = j.value("default_method", std::string());
    c.settings.timeout_seconds = j.value("timeout_seconds", c.settings.timeout_seconds);
    if (j.contains("fallback")) {
      const std::string policy = j["fallback"].value("policy", std::string("fail"));
      if (policy == "fallback") {
        c.settings.fallback = FallbackPolicy::kFallback;
      } else if (policy != "fail") {
        throw config_error("gateway", "unknown fallback policy '" + policy + "'");
      }
      c.settings.fallback_expert = j["fallback"].value("expert", std::string());
    }
    c.settings.locality_policy = j.value("locality_policy", false);
    if (j.contains("pricing")) c.settings.pricing = eval::PricingTable::from_json(j["pricing"]);
    if (j.contains("listen")) {
      c.listen.host = j["listen"].value("host", c.listen.host);
      c.listen.port = j["listen"].value("port", c.listen.port);
    }
  } catch (const json::exception& e) {
    throw config_error("gateway", std::string("gateway config: ") + e.what());
  }
  return c;
}

GatewayConfig load_gateway_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("gateway", "cannot read " + path.string());
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw config_error("gateway", path.string() + " is not valid JSON");
  return parse_gateway_config(j, path.parent_path());
}

std::shared_ptr<Gateway> build_gateway(const GatewayConfig& config) {
  std::map<std::string, simx::SimFleetEntry> fleet;
  if (!config.fleet.empty()) {
    for (auto& e : simx::load_sim_fleet(config.fleet)) fleet.emplace(e.config.expert_name, std::move(e));
  }
  std::vector<Endpoint> endpoints;
  for (auto cfg : config.experts) {
    std::shared_ptr<ExpertAdaptor> adaptor;
    if (cfg.kind == AdaptorKind::kSimulated) {
      const auto it = fleet.find(cfg.expert_name);
      if (it == fleet.end()) {
        throw config_error("gateway", "simulated expert '" + cfg.expert_name + "' is not in the fleet");
      }
      if (cfg.pricing_family.empty()) cfg.pricing_family = it->second.config.pricing_family;
      adaptor = it->second.adaptor;
    } else {
      adaptor = std::make_shared<RemoteAdaptor>(cfg);
    }
    endpoints.push_back({std::move(cfg), std::move(adaptor)});
  }
  std::map<std::string, std::shared_ptr<const routers::Router>> loaded;
  for (const auto& [method, path] : config.routers) {
    try {
      loaded[method] = routers::load_router(path);
    } catch (const Error& e) {
      throw config_error("gateway", "router '" + method + "' failed to load: " + e.what());
    }
  }
  return std::make_shared<Gateway>(config.settings, std::move(loaded), std::move(endpoints));
}

}  // namespace llmroute::gateway
