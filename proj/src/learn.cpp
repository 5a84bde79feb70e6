#include "llmroute/learn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "llmroute/kernels.hpp"

namespace llmroute::learn {

namespace {

kernels::SparseRow row_of(const embed::SparseVector& x) {
  return {x.indices, x.values};
}

template <typename... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <typename... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

Error training_error(const std::string& msg) { return Error(ErrorKind::kTraining, "learn", msg); }

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::kMlp ? "mlp" : "head"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::kMlp;
  if (s == "head") return ModelKind::kHead;
  throw config_error("learn", "unknown model kind '" + s + "'");
}

ModelKind kind_of(const ModelParams& params) {
  return std::holds_alternative<MlpParams>(params) ? ModelKind::kMlp : ModelKind::kHead;
}

std::size_t input_dim(const ModelParams& params) {
  return std::visit([](const auto& p) { return p.input_dim; }, params);
}

std::size_t num_classes(const ModelParams& params) {
  return std::visit([](const auto& p) { return p.num_classes; }, params);
}

std::vector<std::span<double>> tensors(ModelParams& params) {
  return std::visit(Overloaded{
                        [](MlpParams& p) -> std::vector<std::span<double>> {
                          return {p.w1, p.b1, p.w2, p.b2};
                        },
                        [](HeadParams& p) -> std::vector<std::span<double>> { return {p.w, p.b}; },
                    },
                    params);
}

std::vector<std::span<const double>> tensors(const ModelParams& params) {
  return std::visit(Overloaded{
                        [](const MlpParams& p) -> std::vector<std::span<const double>> {
                          return {p.w1, p.b1, p.w2, p.b2};
                        },
                        [](const HeadParams& p) -> std::vector<std::span<const double>> {
                          return {p.w, p.b};
                        },
                    },
                    params);
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  for (auto t : tensors(out)) std::fill(t.begin(), t.end(), 0.0);
  return out;
}

namespace {

void glorot_fill(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  w.resize(fan_in * fan_out);
  for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
}

}  // namespace

MlpParams mlp_init(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                   std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || num_classes == 0) {
    throw config_error("learn", "mlp dimensions must be >= 1");
  }
  Rng rng(seed);
  MlpParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.num_classes = num_classes;
  glorot_fill(p.w1, input_dim, hidden_dim, rng);
  p.b1.assign(hidden_dim, 0.0);
  glorot_fill(p.w2, hidden_dim, num_classes, rng);
  p.b2.assign(num_classes, 0.0);
  return p;
}

HeadParams head_init(std::size_t input_dim, std::size_t num_classes) {
  if (input_dim == 0 || num_classes == 0) throw config_error("learn", "head dimensions must be >= 1");
  HeadParams p;
  p.input_dim = input_dim;
  p.num_classes = num_classes;
  p.w.assign(input_dim * num_classes, 0.0);
  p.b.assign(num_classes, 0.0);
  return p;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double hi = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - hi);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

ForwardResult forward(const ModelParams& params, const embed::SparseVector& x) {
  const std::size_t n = input_dim(params);
  if (x.dimension != n) {
    throw data_error("learn", "input dimension " + std::to_string(x.dimension) +
                                  " does not match model input " + std::to_string(n));
  }
  ForwardResult r;
  if (const auto* p = std::get_if<MlpParams>(&params)) {
    r.pre_hidden.resize(p->hidden_dim);
    kernels::parallel::affine_sparse(p->w1, p->hidden_dim, p->b1, row_of(x), r.pre_hidden);
    r.hidden.resize(p->hidden_dim);
    for (std::size_t j = 0; j < p->hidden_dim; ++j) r.hidden[j] = std::max(0.0, r.pre_hidden[j]);
    r.logits.resize(p->num_classes);
    kernels::parallel::affine_dense(p->w2, p->num_classes, p->b2, r.hidden, r.logits);
  } else {
    const auto& h = std::get<HeadParams>(params);
    r.logits.resize(h.num_classes);
    kernels::parallel::affine_sparse(h.w, h.num_classes, h.b, row_of(x), r.logits);
  }
  r.probs = softmax(r.logits);
  return r;
}

double soft_cross_entropy(std::span<const double> y, std::span<const double> target,
                          double weight) {
  if (y.size() != target.size()) {
    throw data_error("learn", "cross-entropy: prediction has " + std::to_string(y.size()) +
                                  " classes, target " + std::to_string(target.size()));
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    sum += target[k] * std::log(std::max(y[k], kProbabilityFloor));
  }
  return -weight * sum;
}

double batch_loss(const ModelParams& params, Batch batch) {
  double total_w = 0.0, total = 0.0;
  for (const Sample* s : batch) {
    if (s->weight == 0.0) continue;
    const auto fwd = forward(params, s->x);
    total += soft_cross_entropy(fwd.probs, s->target, s->weight);
    total_w += s->weight;
  }
  return total_w > 0.0 ? total / total_w : 0.0;
}

GradientResult gradients(const ModelParams& params, Batch batch) {
  if (batch.empty()) throw data_error("learn", "gradients: empty batch");
  GradientResult out{zeros_like(params), 0.0};
  const std::size_t classes = num_classes(params);

  double total_w = 0.0;
  for (const Sample* s : batch) {
    if (s->target.size() != classes) {
      throw data_error("learn", "target has " + std::to_string(s->target.size()) +
                                    " classes, model " + std::to_string(classes));
    }
    total_w += s->weight;
  }
  if (total_w == 0.0) return out;

  const std::size_t b = batch.size();
  std::vector<ForwardResult> fwd(b);
  // d loss / d logits per sample, pre-scaled by w_s / sum(w).
  std::vector<double> delta_out(b * classes);
  double loss = 0.0;
  for (std::size_t s = 0; s < b; ++s) {
    const Sample& smp = *batch[s];
    fwd[s] = forward(params, smp.x);
    const double scale = smp.weight / total_w;
    const double target_mass = std::accumulate(smp.target.begin(), smp.target.end(), 0.0);
    for (std::size_t k = 0; k < classes; ++k) {
      delta_out[s * classes + k] = scale * (fwd[s].probs[k] * target_mass - smp.target[k]);
    }
    loss += scale * soft_cross_entropy(fwd[s].probs, smp.target, 1.0);
  }
  out.loss = loss;

  std::vector<kernels::SparseRow> rows;
  rows.reserve(b);
  for (const Sample* s : batch) rows.push_back(row_of(s->x));

  if (auto* g = std::get_if<MlpParams>(&out.grads)) {
    const auto& p = std::get<MlpParams>(params);
    const std::size_t m = p.hidden_dim;
    std::vector<double> hidden(b * m);
    for (std::size_t s = 0; s < b; ++s) std::copy(fwd[s].hidden.begin(), fwd[s].hidden.end(), hidden.begin() + s * m);

    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t k = 0; k < classes; ++k) g->b2[k] += delta_out[s * classes + k];
    }
    kernels::parallel::accumulate_outer_dense(g->w2, m, classes, hidden, delta_out, b);

    std::vector<double> delta_hidden(b * m, 0.0);
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t j = 0; j < m; ++j) {
        if (fwd[s].pre_hidden[j] <= 0.0) continue;
        double acc = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
          acc += p.w2[j * classes + k] * delta_out[s * classes + k];
        }
        delta_hidden[s * m + j] = acc;
      }
    }
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t j = 0; j < m; ++j) g->b1[j] += delta_hidden[s * m + j];
    }
    kernels::parallel::accumulate_outer_sparse(g->w1, m, rows, delta_hidden);
  } else {
    auto& hg = std::get<HeadParams>(out.grads);
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t k = 0; k < classes; ++k) hg.b[k] += delta_out[s * classes + k];
    }
    kernels::parallel::accumulate_outer_sparse(hg.w, classes, rows, delta_out);
  }
  return out;
}

TrainConfig TrainConfig::mlp_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::head_defaults() {
  TrainConfig c;
  c.learning_rate = 5e-5;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw config_error("learn", "learning_rate must be > 0");
  if (weight_decay < 0.0) throw config_error("learn", "weight_decay must be >= 0");
  if (epochs < 1) throw config_error("learn", "epochs must be >= 1");
  if (batch_size < 1) throw config_error("learn", "batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw config_error("learn", "betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw config_error("learn", "epsilon must be > 0");
  if (hidden_dim < 1) throw config_error("learn", "hidden_dim must be >= 1");
}

OptimizerState OptimizerState::for_params(const ModelParams& params) {
  OptimizerState st;
  for (auto t : tensors(params)) {
    st.first_moment.emplace_back(t.size(), 0.0);
    st.second_moment.emplace_back(t.size(), 0.0);
  }
  return st;
}

void optimizer_step(OptimizerState& state, ModelParams& params, const ModelParams& grads,
                    const TrainConfig& config) {
  auto p = tensors(params);
  auto g = tensors(grads);
  if (p.size() != g.size() || p.size() != state.first_moment.size()) {
    throw training_error("optimizer: parameter/gradient/state structure mismatch");
  }
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t].size() != g[t].size() || p[t].size() != state.first_moment[t].size()) {
      throw training_error("optimizer: shape mismatch in tensor " + std::to_string(t));
    }
    for (std::size_t i = 0; i < g[t].size(); ++i) {
      if (!std::isfinite(g[t][i])) {
        std::ostringstream msg;
        msg << "non-finite gradient " << g[t][i] << " in tensor " << t << " element " << i
            << " at step " << state.step + 1;
        throw training_error(msg.str());
      }
    }
  }
  ++state.step;
  const kernels::AdamWHyper hyper{config.learning_rate, config.beta1, config.beta2,
                                  config.epsilon, config.weight_decay};
  for (std::size_t t = 0; t < p.size(); ++t) {
    kernels::parallel::adamw_update(p[t], g[t], state.first_moment[t], state.second_moment[t],
                                    state.step, hyper);
  }
}

TrainResult train_classifier(std::span<const Sample> samples, ModelKind kind,
                             std::size_t input_dim, std::size_t num_classes,
                             const TrainConfig& config) {
  config.validate();
  if (samples.empty()) throw data_error("learn", "cannot train on an empty split");

  TrainResult result;
  if (kind == ModelKind::kMlp) {
    result.params = mlp_init(input_dim, config.hidden_dim, num_classes, config.seed);
  } else {
    result.params = head_init(input_dim, num_classes);
  }
  OptimizerState state = OptimizerState::for_params(result.params);

  Rng rng(splitmix64(config.seed));
  std::vector<std::size_t> order(samples.size());
  std::vector<const Sample*> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0, epoch_weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      double batch_weight = 0.0;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&samples[order[i]]);
        batch_weight += samples[order[i]].weight;
      }
      auto grad = gradients(result.params, batch);
      if (!std::isfinite(grad.loss)) {
        result.loss_trace.push_back(grad.loss);
        throw TrainingDiverged("non-finite loss in epoch " + std::to_string(epoch + 1),
                               result.loss_trace);
      }
      epoch_loss += grad.loss * batch_weight;
      epoch_weight += batch_weight;
      try {
        optimizer_step(state, result.params, grad.grads, config);
      } catch (const Error& e) {
        throw TrainingDiverged(e.what(), result.loss_trace);
      }
    }
    result.loss_trace.push_back(epoch_weight > 0.0 ? epoch_loss / epoch_weight : 0.0);
  }
  return result;
}

namespace {

constexpr std::string_view kModelMagic = "llmroute-classifier";
constexpr int kModelVersion = 1;

std::string hex(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double unhex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw data_error("learn", "bad number '" + s + "' in model header");
  return v;
}

void write_block(std::ostream& out, std::span<const double> block) {
  std::vector<unsigned char> bytes(block.size() * 8);
  for (std::size_t i = 0; i < block.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(block[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void read_block(std::istream& in, std::span<double> block) {
  std::vector<unsigned char> bytes(block.size() * 8);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw data_error("learn", "model file truncated");
  }
  for (std::size_t i = 0; i < block.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    block[i] = std::bit_cast<double>(bits);
  }
}

}  // namespace

void save_model(const std::filesystem::path& path, const ModelFile& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("learn", "cannot write " + path.string());
  const auto& c = model.config;
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "kind " << to_string(kind_of(model.params)) << '\n';
  if (const auto* p = std::get_if<MlpParams>(&model.params)) {
    out << "dims " << p->input_dim << ' ' << p->hidden_dim << ' ' << p->num_classes << '\n';
  } else {
    const auto& h = std::get<HeadParams>(model.params);
    out << "dims " << h.input_dim << ' ' << h.num_classes << '\n';
  }
  out << "seed " << c.seed << '\n';
  out << "config " << hex(c.learning_rate) << ' ' << hex(c.weight_decay) << ' ' << c.batch_size
      << ' ' << c.epochs << ' ' << hex(c.beta1) << ' ' << hex(c.beta2) << ' ' << hex(c.epsilon)
      << ' ' << c.hidden_dim << '\n';
  out << "experts " << model.experts.size();
  for (const auto& e : model.experts) out << ' ' << e;
  out << '\n';
  const auto blocks = tensors(model.params);
  out << "blocks " << blocks.size();
  for (auto b : blocks) out << ' ' << b.size();
  out << "\ndata\n";
  for (auto b : blocks) write_block(out, b);
  if (!out) throw data_error("learn", "failed writing " + path.string());
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("learn", "cannot read " + path.string());
  auto expect = [&](std::string_view key) {
    std::string word;
    if (!(in >> word) || word != key) {
      throw data_error("learn", path.string() + ": expected '" + std::string(key) + "'");
    }
  };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kModelMagic) {
    throw data_error("learn", path.string() + " is not a classifier file");
  }
  if (version != kModelVersion) {
    throw data_error("learn", "unsupported classifier version " + std::to_string(version));
  }
  ModelFile mf;
  expect("kind");
  std::string kind;
  in >> kind;
  expect("dims");
  if (model_kind_from_string(kind) == ModelKind::kMlp) {
    MlpParams p;
    in >> p.input_dim >> p.hidden_dim >> p.num_classes;
    p.w1.resize(p.input_dim * p.hidden_dim);
    p.b1.resize(p.hidden_dim);
    p.w2.resize(p.hidden_dim * p.num_classes);
    p.b2.resize(p.num_classes);
    mf.params = std::move(p);
  } else {
    HeadParams h;
    in >> h.input_dim >> h.num_classes;
    h.w.resize(h.input_dim * h.num_classes);
    h.b.resize(h.num_classes);
    mf.params = std::move(h);
  }
  expect("seed");
  in >> mf.config.seed;
  expect("config");
  std::string lr, wd, b1, b2, eps;
  in >> lr >> wd >> mf.config.batch_size >> mf.config.epochs >> b1 >> b2 >> eps >>
      mf.config.hidden_dim;
  mf.config.learning_rate = unhex(lr);
  mf.config.weight_decay = unhex(wd);
  mf.config.beta1 = unhex(b1);
  mf.config.beta2 = unhex(b2);
  mf.config.epsilon = unhex(eps);
  expect("experts");
  std::size_t n_experts = 0;
  in >> n_experts;
  mf.experts.resize(n_experts);
  for (auto& e : mf.experts) in >> e;
  expect("blocks");
  std::size_t n_blocks = 0;
  in >> n_blocks;
  auto blocks = tensors(mf.params);
  if (n_blocks != blocks.size()) throw data_error("learn", "block count mismatch");
  for (auto b : blocks) {
    std::size_t size = 0;
    in >> size;
    if (size != b.size()) throw data_error("learn", "block size mismatch");
  }
  expect("data");
  in.get();  // the newline after "data"
  if (!in) throw data_error("learn", path.string() + ": malformed header");
  for (auto b : blocks) read_block(in, b);
  if (mf.experts.size() != num_classes(mf.params)) {
    throw data_error("learn", "expert list does not match class count");
  }
  return mf;
}

}  // namespace llmroute::learn
