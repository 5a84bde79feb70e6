// llmroute - prepare, train, evaluate, serve and simulate from one binary.

#include <csignal>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "llmroute/pipeline.hpp"

namespace {

using llmroute::ErrorKind;
namespace pipeline = llmroute::pipeline;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kServing: return "serving";
  }
  return "internal";
}

int fail(int code, const std::string& kind, const std::string& module, const std::string& message) {
  const nlohmann::json line = {{"error", message}, {"kind", kind}, {"module", module}, {"exit_code", code}};
  std::cerr << line.dump() << std::endl;
  return code;
}

int serve(const pipeline::RunConfig& run, std::optional<int> port) {
  auto cfg = pipeline::serve_config(run);
  if (port) cfg.listen.port = *port;
  auto gateway = llmroute::gateway::build_gateway(cfg);

  // Block the signals before any thread starts, then wait for one here.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  llmroute::gateway::GatewayServer server(gateway, cfg.listen);
  const int bound = server.start();
  std::cout << nlohmann::json{{"listening", cfg.listen.host + ":" + std::to_string(bound)},
                              {"default_method", gateway->settings().default_method},
                              {"methods", gateway->methods()}}
                   .dump()
            << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  std::cout << gateway->stats().to_json().dump() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive LLM query router: prepare, train, evaluate, serve, simulate"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<double> temperature;
  std::optional<std::size_t> trials;
  std::optional<std::string> out;
  std::optional<int> port;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  app.add_option("--seed", seed, "Seed for splitting, training and random routing");
  app.add_option("--method", method, "Router method")
      ->check(CLI::IsMember({"random", "knn", "mlp", "head", "all"}));
  app.add_option("--temperature", temperature, "Soft-label temperature");
  app.add_option("--trials", trials, "Random-router trials");
  app.add_option("--out", out, "Artifact directory");

  auto* prepare = app.add_subcommand("prepare", "Build prediction dataset, soft labels and split");
  auto* train = app.add_subcommand("train", "Train the selected routers");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate routers and write reports");
  auto* serve_cmd = app.add_subcommand("serve", "Run the routing gateway until interrupted");
  serve_cmd->add_option("--port", port, "Listen port (0 picks a free one)");
  auto* simulate = app.add_subcommand("simulate", "End-to-end run on the simulated fleet");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, "config", "cli", e.what());
  }

  try {
    pipeline::RunConfig run = config_path.empty() ? pipeline::RunConfig{}
                                                  : pipeline::load_run_config(config_path);
    pipeline::Overrides o;
    o.seed = seed;
    o.method = method;
    o.temperature = temperature;
    o.trials = trials;
    if (out) o.out = *out;
    pipeline::apply_overrides(run, o);
    run.validate();

    if (prepare->parsed()) {
      const auto s = pipeline::prepare(run);
      std::cout << nlohmann::json{{"queries", s.queries}, {"records", s.records},
                                  {"skipped_lines", s.skipped_lines}, {"failures", s.failures},
                                  {"train", s.train}, {"test", s.test}}
                       .dump()
                << std::endl;
    } else if (train->parsed()) {
      for (const auto& t : pipeline::train(run)) {
        std::cout << nlohmann::json{{"method", t.method}, {"epoch_loss", t.loss_trace}}.dump() << std::endl;
      }
    } else if (evaluate->parsed()) {
      pipeline::evaluate(run);
      std::cout << nlohmann::json{{"report", (run.out / "reports").string()}}.dump() << std::endl;
    } else if (serve_cmd->parsed()) {
      return serve(run, port);
    } else if (simulate->parsed()) {
      pipeline::simulate(run);
      std::cout << nlohmann::json{{"report", (run.out / "reports").string()}}.dump() << std::endl;
    }
  } catch (const llmroute::Error& e) {
    return fail(e.exit_code(), kind_name(e.kind()), e.module(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(3, "data", "cli", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(3, "data", "cli", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", "cli", e.what());
  }
  return 0;
}
