// adaptor.hpp - the expert-adaptor contract shared by the data-preparation
// pass, the gateway and the simulated fleet.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "llmroute/common.hpp"

namespace llmroute {

struct GenerationParams {
  int max_tokens = 512;
  double temperature = 0.7;
  double top_p = 0.95;

  void validate() const;
};

// What an adaptor receives. The optional fields carry evaluation context
// (the dataset tag and ground truth) during offline data preparation;
// simulated experts use them, remote experts ignore them.
struct ExpertRequest {
  std::string prompt;
  GenerationParams params;
  double timeout_seconds = 60.0;
  std::optional<std::string> query_id;
  std::optional<std::string> dataset_tag;
  std::optional<std::string> reference;
};

struct ExpertReply {
  std::string response_text;
  long input_tokens = 0;
  long output_tokens = 0;
  double elapsed_seconds = 0.0;
  // Per generated token, each <= 0; absent when the provider does not
  // report log-probabilities.
  std::optional<std::vector<double>> token_logprobs;

  // Mean negative log-likelihood over generated tokens, when available.
  std::optional<double> mean_nll() const;
};

enum class AdaptorFailure { kTimeout, kMalformed, kTransport, kRejected };

class AdaptorError : public Error {
 public:
  AdaptorError(AdaptorFailure failure, const std::string& expert, const std::string& message)
      : Error(ErrorKind::kServing, "gateway", expert + ": " + message),
        failure_(failure),
        expert_(expert) {}
  AdaptorFailure failure() const { return failure_; }
  const std::string& expert() const { return expert_; }

 private:
  AdaptorFailure failure_;
  std::string expert_;
};

enum class Locality { kLocal, kCloud };

class ExpertAdaptor {
 public:
  virtual ~ExpertAdaptor() = default;
  virtual const std::string& name() const = 0;
  // Pricing family used for cost accounting (e.g. "Llama-8B").
  virtual const std::string& pricing_family() const = 0;
  // Throws AdaptorError on timeout or provider failure. Must be safe to
  // call concurrently.
  virtual ExpertReply execute(const ExpertRequest& request) = 0;
};

}  // namespace llmroute
