#include "llmroute/adaptor.hpp"

namespace llmroute {

void GenerationParams::validate() const {
  if (max_tokens <= 0) throw config_error("gateway", "max_tokens must be > 0");
  if (!(temperature > 0.0)) throw config_error("gateway", "temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw config_error("gateway", "top_p must lie in (0, 1]");
}

std::optional<double> ExpertReply::mean_nll() const {
  if (!token_logprobs || token_logprobs->empty()) return std::nullopt;
  double sum = 0.0;
  for (double lp : *token_logprobs) sum -= lp;
  return sum / static_cast<double>(token_logprobs->size()) + 0.0;
}

}  // namespace llmroute
