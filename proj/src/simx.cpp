#include "llmroute/simx.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace llmroute::simx {

using nlohmann::json;

void SimExpertConfig::validate() const {
  if (expert_name.empty()) throw config_error("simx", "simulated expert without a name");
  for (const auto& [tag, a] : affinity) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw config_error("simx", expert_name + ": affinity for '" + tag + "' outside [0, 1]");
    }
  }
  if (!(affinity_floor >= 0.0 && affinity_floor <= 1.0)) {
    throw config_error("simx", expert_name + ": affinity_floor outside [0, 1]");
  }
  if (!(latency.base_seconds > 0.0)) {
    throw config_error("simx", expert_name + ": base latency must be > 0");
  }
  if (latency.jitter < 0.0 || tokens.spread < 0.0 || tokens.mean < 0.0 || nll_scale < 0.0) {
    throw config_error("simx", expert_name + ": negative model parameter");
  }
}

double SimExpertConfig::affinity_for(const std::string& tag) const {
  auto it = affinity.find(tag);
  return it == affinity.end() ? affinity_floor : it->second;
}

namespace {

std::string noise_token(std::uint64_t bits) {
  static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz";
  std::string tok = "zx";
  for (int i = 0; i < 6; ++i) {
    tok.push_back(kAlphabet[bits % 26]);
    bits /= 26;
  }
  return tok;
}

}  // namespace

ExpertReply simulate_reply(const SimExpertConfig& config, const dataprep::Query& query,
                           const GenerationParams& params) {
  Rng rng(mix_seed(config.seed, config.expert_name + '\x1f' + query.id));
  const double affinity = config.affinity_for(query.dataset_tag);

  // Keep decisions are drawn for every position regardless of affinity, so
  // the kept set only grows as affinity increases.
  const auto ref_tokens = embed::tokenize(query.reference);
  bool all_kept = true;
  std::string response;
  for (const auto& tok : ref_tokens) {
    const double u = rng.uniform();
    const std::uint64_t noise_bits = rng.next();
    const bool keep = u < affinity;
    all_kept = all_kept && keep;
    if (!response.empty()) response.push_back(' ');
    response += keep ? tok : noise_token(noise_bits);
  }

  ExpertReply reply;
  reply.response_text = all_kept ? query.reference : std::move(response);
  reply.input_tokens =
      std::max<long>(1, static_cast<long>(embed::tokenize(query.text).size()));

  const double sigma = config.latency.jitter;
  reply.elapsed_seconds =
      config.latency.base_seconds * std::exp(sigma * rng.normal() - 0.5 * sigma * sigma);

  const double drawn = config.tokens.mean + config.tokens.spread * rng.normal();
  reply.output_tokens =
      std::clamp<long>(std::lround(drawn), 1, std::max(1, params.max_tokens));

  std::vector<double> logprobs(static_cast<std::size_t>(reply.output_tokens));
  const double mean_nll = (1.0 - affinity) * config.nll_scale;
  for (double& lp : logprobs) {
    // Exponential draw with the configured mean.
    lp = -mean_nll * -std::log1p(-rng.uniform()) + 0.0;
    if (lp > 0.0) lp = 0.0;
  }
  reply.token_logprobs = std::move(logprobs);
  return reply;
}

SimulatedExpert::SimulatedExpert(SimExpertConfig config) : config_(std::move(config)) {
  config_.validate();
}

ExpertReply SimulatedExpert::execute(const ExpertRequest& request) {
  ++calls_;
  request.params.validate();
  dataprep::Query q;
  if (request.query_id) {
    q.id = *request.query_id;
  } else {
    char buf[32];
    std::snprintf(buf, sizeof buf, "prompt-%016llx",
                  static_cast<unsigned long long>(fnv1a64(request.prompt)));
    q.id = buf;
  }
  q.text = request.prompt;
  q.reference = request.reference.value_or(request.prompt);
  q.dataset_tag = request.dataset_tag.value_or("");

  ExpertReply reply = simulate_reply(config_, q, request.params);
  if (reply.elapsed_seconds > request.timeout_seconds) {
    if (config_.realtime) {
      std::this_thread::sleep_for(std::chrono::duration<double>(request.timeout_seconds));
    }
    throw AdaptorError(AdaptorFailure::kTimeout, config_.expert_name,
                       "timed out after " + std::to_string(request.timeout_seconds) + " s");
  }
  if (config_.realtime) {
    std::this_thread::sleep_for(std::chrono::duration<double>(reply.elapsed_seconds));
  }
  return reply;
}

namespace {

SimExpertConfig config_from_json(const json& j) {
  SimExpertConfig c;
  c.expert_name = j.at("name").get<std::string>();
  if (j.contains("affinity")) c.affinity = j.at("affinity").get<std::map<std::string, double>>();
  c.affinity_floor = j.value("affinity_floor", c.affinity_floor);
  if (j.contains("latency")) {
    c.latency.base_seconds = j["latency"].value("base_seconds", c.latency.base_seconds);
    c.latency.jitter = j["latency"].value("jitter", c.latency.jitter);
  }
  if (j.contains("tokens")) {
    c.tokens.mean = j["tokens"].value("mean", c.tokens.mean);
    c.tokens.spread = j["tokens"].value("spread", c.tokens.spread);
  }
  c.pricing_family = j.value("pricing_family", std::string());
  c.seed = j.value("seed", c.seed);
  c.nll_scale = j.value("nll_scale", c.nll_scale);
  c.realtime = j.value("realtime", c.realtime);
  c.validate();
  return c;
}

json config_to_json(const SimExpertConfig& c) {
  return json{{"name", c.expert_name},
              {"affinity", c.affinity},
              {"affinity_floor", c.affinity_floor},
              {"latency", {{"base_seconds", c.latency.base_seconds}, {"jitter", c.latency.jitter}}},
              {"tokens", {{"mean", c.tokens.mean}, {"spread", c.tokens.spread}}},
              {"pricing_family", c.pricing_family},
              {"seed", c.seed},
              {"nll_scale", c.nll_scale},
              {"realtime", c.realtime}};
}

}  // namespace

std::vector<SimExpertConfig> parse_sim_fleet(const std::string& json_text) {
  auto doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) throw config_error("simx", "fleet config is not valid JSON");
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("experts")) throw config_error("simx", "fleet config lacks 'experts'");
    list = &doc["experts"];
  }
  if (!list->is_array() || list->empty()) throw config_error("simx", "fleet config has no experts");
  std::vector<SimExpertConfig> fleet;
  std::set<std::string> names;
  for (const auto& entry : *list) {
    SimExpertConfig c;
    try {
      c = config_from_json(entry);
    } catch (const json::exception& e) {
      throw config_error("simx", std::string("bad fleet entry: ") + e.what());
    }
    if (!names.insert(c.expert_name).second) {
      throw config_error("simx", "duplicate expert name '" + c.expert_name + "'");
    }
    fleet.push_back(std::move(c));
  }
  return fleet;
}

std::vector<SimFleetEntry> load_sim_fleet(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("simx", "cannot open fleet config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<SimFleetEntry> out;
  for (auto& c : parse_sim_fleet(ss.str())) {
    auto adaptor = std::make_shared<SimulatedExpert>(c);
    out.push_back({std::move(c), std::move(adaptor)});
  }
  return out;
}

std::string fleet_to_json(const std::vector<SimExpertConfig>& fleet) {
  json doc;
  doc["experts"] = json::array();
  for (const auto& c : fleet) doc["experts"].push_back(config_to_json(c));
  return doc.dump(2);
}

dataprep::AdaptorMap adaptor_map(const std::vector<SimFleetEntry>& fleet) {
  dataprep::AdaptorMap map;
  for (const auto& e : fleet) map.emplace(e.config.expert_name, e.adaptor);
  return map;
}

std::vector<SimExpertConfig> canonical_fleet(std::uint64_t seed) {
  struct Row {
    const char* name;
    const char* family;
    double arc, gsm8k, mbpp, pubmedqa;
    double latency, tokens, spread;
  };
  // Throughput (tokens / latency) and pricing loosely follow the measured
  // expert profile: fox-sim short, fast and cheap; mistralai-sim slow.
  static constexpr Row kRows[] = {
      {"biollama-sim", "Llama-8B", 0.45, 0.30, 0.30, 0.85, 1.20, 180, 15},
      {"biomistral-sim", "Mistral-8B", 0.40, 0.25, 0.25, 0.70, 0.85, 170, 15},
      {"codellama-sim", "Llama-8B", 0.40, 0.40, 0.88, 0.30, 1.90, 200, 15},
      {"fox-sim", "Fox-1.6B", 0.88, 0.50, 0.50, 0.55, 0.35, 75, 10},
      {"mathdeepseek-sim", "DeepSeek-8B", 0.45, 0.88, 0.55, 0.35, 1.00, 190, 15},
      {"mistralai-sim", "Mistral-8B", 0.45, 0.35, 0.35, 0.45, 2.20, 200, 15},
      {"qwen-sim", "Qwen-7B", 0.60, 0.55, 0.55, 0.50, 1.65, 190, 15},
  };
  std::vector<SimExpertConfig> fleet;
  for (const auto& r : kRows) {
    SimExpertConfig c;
    c.expert_name = r.name;
    c.pricing_family = r.family;
    c.affinity = {{"arc", r.arc}, {"gsm8k", r.gsm8k}, {"mbpp", r.mbpp}, {"pubmedqa", r.pubmedqa}};
    c.latency = {r.latency, 0.15};
    c.tokens = {r.tokens, r.spread};
    c.seed = seed;
    fleet.push_back(std::move(c));
  }
  return fleet;
}

std::map<std::string, std::string> pricing_families(const std::vector<SimExpertConfig>& fleet) {
  std::map<std::string, std::string> out;
  for (const auto& c : fleet) out[c.expert_name] = c.pricing_family;
  return out;
}

namespace {

constexpr std::size_t kNeutralWords = 3000;

const std::map<std::string, std::vector<std::string>>& lexicons() {
  static const std::map<std::string, std::vector<std::string>> kLexicons = {
      {"arc",
       {"energy", "force", "gravity", "planet", "orbit", "cell", "organism", "photosynthesis",
        "rock", "mineral", "erosion", "weather", "climate", "magnet", "electricity", "circuit",
        "light", "sound", "wave", "heat", "temperature", "water", "evaporation", "condensation",
        "plant", "animal", "habitat", "ecosystem", "fossil", "earth", "moon", "sun", "star",
        "experiment", "hypothesis", "observation", "density", "mass", "volume", "friction",
        "motion", "chemical", "reaction", "atom", "molecule", "element", "compound", "solid",
        "liquid", "gas"}},
      {"gsm8k",
       {"apples", "dollars", "cents", "total", "each", "per", "hours", "minutes", "twice",
        "half", "percent", "sum", "difference", "product", "ratio", "price", "cost", "sold",
        "bought", "remaining", "students", "class", "miles", "speed", "week", "days", "times",
        "fraction", "equal", "groups", "boxes", "cookies", "pages", "salary", "discount",
        "profit", "average", "number", "left", "more", "fewer", "spent", "earned", "shares",
        "tickets", "pizza", "slices", "marbles", "eggs", "hour"}},
      {"mbpp",
       {"function", "python", "list", "return", "string", "integer", "array", "sort",
        "element", "index", "loop", "dictionary", "tuple", "recursion", "binary", "search",
        "character", "substring", "reverse", "maximum", "minimum", "sum", "count", "given",
        "write", "check", "whether", "palindrome", "prime", "even", "odd", "matrix", "key",
        "value", "set", "stack", "queue", "regex", "lambda", "boolean", "float", "divide",
        "digits", "length", "concatenate", "split", "unique", "duplicate", "nested", "tree"}},
      {"pubmedqa",
       {"patients", "clinical", "study", "treatment", "therapy", "disease", "cancer", "tumor",
        "risk", "outcome", "trial", "randomized", "cohort", "mortality", "diagnosis",
        "symptoms", "surgery", "infection", "dose", "drug", "placebo", "survival", "chronic",
        "acute", "hospital", "children", "adults", "association", "significant", "incidence",
        "prevalence", "biomarker", "gene", "protein", "expression", "receptor", "blood",
        "pressure", "diabetes", "cardiac", "liver", "kidney", "lung", "brain", "imaging",
        "syndrome", "efficacy", "adverse", "women", "elderly"}},
  };
  return kLexicons;
}

// Function words plus a block of made-up neutral words (two and three
// syllable consonant-vowel strings) shared by every dataset.
const std::vector<std::string>& common_words() {
  static const std::vector<std::string> kCommon = [] {
    std::vector<std::string> words = {"the", "a",    "of",   "what",   "which", "is",   "how",
                                      "many", "does", "in",  "to",     "and",   "for",  "with",
                                      "that", "if",   "when", "answer", "this",  "it"};
    static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
    static constexpr std::string_view kVowels = "aeiou";
    std::vector<std::string> syllables;
    for (char c : kConsonants) {
      for (char v : kVowels) syllables.push_back(std::string{c, v});
    }
    for (std::size_t i = 0; i < kNeutralWords; ++i) {
      // Stride through syllable pairs/triples so neighbours differ early.
      std::string w = syllables[(i * 7) % syllables.size()] + syllables[(i * 13 + i / 70) % syllables.size()];
      if (i % 2 == 1) w += syllables[(i * 3) % syllables.size()];
      words.push_back(std::move(w));
    }
    std::sort(words.begin() + 20, words.end());
    words.erase(std::unique(words.begin() + 20, words.end()), words.end());
    return words;
  }();
  return kCommon;
}

std::string draw_text(Rng& rng, const std::vector<std::string>& lexicon, std::size_t words,
                      double domain_share) {
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    const auto& pool = rng.uniform() < domain_share ? lexicon : common_words();
    if (!out.empty()) out.push_back(' ');
    out += pool[rng.index(pool.size())];
  }
  return out;
}

}  // namespace

std::vector<std::string> synthetic_tags() {
  std::vector<std::string> tags;
  for (const auto& [tag, words] : lexicons()) tags.push_back(tag);
  return tags;
}

CorpusSpec canonical_corpus_spec(std::size_t total) {
  CorpusSpec spec;
  const std::size_t general = total * 2 / 5;
  const std::size_t rest = (total - general) / 3;
  spec.counts = {{"arc", total - 3 * rest}, {"gsm8k", rest}, {"mbpp", rest}, {"pubmedqa", rest}};
  return spec;
}

std::vector<dataprep::Query> generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  std::vector<dataprep::Query> out;
  for (const auto& [tag, count] : spec.counts) {
    auto it = lexicons().find(tag);
    if (it == lexicons().end()) throw config_error("simx", "no synthetic lexicon for '" + tag + "'");
    for (std::size_t i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05zu", tag.c_str(), i);
      Rng rng(mix_seed(seed, id));
      dataprep::Query q;
      q.id = id;
      q.dataset_tag = tag;
      q.text = draw_text(rng, it->second, spec.query_words, spec.query_domain_share) + "?";
      q.reference = draw_text(rng, it->second, spec.reference_words, spec.reference_domain_share) + ".";
      out.push_back(std::move(q));
    }
  }
  return out;
}

}  // namespace llmroute::simx
