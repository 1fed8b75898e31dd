#pragma once

// Knowledge adapter, language-model backend contract (a deterministic mock
// that can score, and a chat-completions HTTP client that can only
// generate), adapter tuning and answer parsing.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgalign/autodiff.hpp"
#include "kgalign/encoders.hpp"
#include "kgalign/instruction.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/optim.hpp"

namespace kgalign {

// d -> hidden -> out with GELU (tanh form) between; hidden defaults to 4d.
template <class T>
class KnowledgeAdapter {
 public:
  KnowledgeAdapter(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed,
                   std::size_t hidden = 0)
      : in_dim_(in_dim), out_dim_(out_dim) {
    if (in_dim == 0 || out_dim == 0) throw std::invalid_argument("adapter: zero dimension");
    if (hidden == 0) hidden = 4 * in_dim;
    Rng rng = Rng(seed).split(0xada);
    w1_ = Parameter<T>("adapter.w1", detail::gaussian<T>(in_dim, hidden, 1.0 / std::sqrt(double(in_dim)), rng));
    b1_ = Parameter<T>("adapter.b1", Tensor<T>(1, hidden, T(0)));
    w2_ = Parameter<T>("adapter.w2", detail::gaussian<T>(hidden, out_dim, 1.0 / std::sqrt(double(hidden)), rng));
    b2_ = Parameter<T>("adapter.b2", Tensor<T>(1, out_dim, T(0)));
  }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  std::size_t hidden_dim() const { return b1_.value().cols(); }

  std::vector<Parameter<T>*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  std::vector<const Parameter<T>*> parameters() const { return {&w1_, &b1_, &w2_, &b2_}; }

  // One output row per input row.
  Var<T> forward(const Var<T>& x) {
    if (x.cols() != in_dim_) {
      throw ShapeError("adapter: expected " + std::to_string(in_dim_) + "-dim inputs, got " +
                       std::to_string(x.cols()));
    }
    return add_row(matmul(gelu(add_row(matmul(x, leaf(w1_)), leaf(b1_))), leaf(w2_)), leaf(b2_));
  }

  Tensor<T> adapt(const Tensor<T>& node_embs) { return forward(constant(node_embs)).value(); }

  template <class U>
  KnowledgeAdapter<U> cast() const {
    KnowledgeAdapter<U> out(in_dim_, out_dim_, 0, hidden_dim());
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value() = src[i]->value().template cast<U>();
    return out;
  }

 private:
  std::size_t in_dim_, out_dim_;
  Parameter<T> w1_, b1_, w2_, b2_;
};

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoreResult {
  double nll = 0.0;
  // d nll / d slot, one row per slot.
  Tensor<float> slot_grad;
};

struct Generation {
  std::string answer;
  double score = 0.0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual bool supports_scoring() const = 0;
  // Width of one soft-token slot vector.
  virtual std::size_t slot_dim() const = 0;
  virtual ScoreResult score(const Prompt& prompt, const Tensor<float>& slots,
                            std::string_view target) const;
  // At most n answers, best first.
  virtual std::vector<Generation> generate(const Prompt& prompt, const Tensor<float>& slots,
                                           std::size_t n) const = 0;
  // Serialized internal state, for checking that tuning leaves it untouched.
  virtual std::string state_bytes() const { return {}; }
};

struct MockConfig {
  std::size_t slot_dim = 64;
  std::size_t feature_dim = 256;
  // Weight of the prompt's bag-of-words feature next to the slot feature.
  double text_weight = 0.5;
  // Strength of the question gate on the slot feature.
  double gate_weight = 1.0;
  // Multiplies every answer feature, i.e. an inverse temperature.
  double logit_scale = 1.0;
  // Extra pooling weight for slots whose entity the question names.
  double mention_weight = 16.0;
  std::uint64_t seed = 1234;
  // Answers that generate() ranks for link prediction.
  std::vector<std::string> lp_candidates;
  // Oracle mode: prompt text -> gold answer, whose affinity gets `oracle_bonus`.
  std::unordered_map<std::string, std::string> answer_key;
  double oracle_bonus = 1e3;
};

// Stand-in for a frozen language model. Slots map through a fixed random
// projection P (slot_dim x feature_dim); text maps to hashed bag-of-words
// vectors. The question gates the slot feature elementwise with
// m = 1 + gate_weight * q / rms(q), where q hashes the question tokens that
// are not part of a slot entity's name (entities arrive through the slots).
// Slots are pooled with weights alpha_i proportional to
// 1/(i+1) + mention_weight * [slot i's label occurs in the user text], so the
// leading slots and the entities the question names weigh most.
// With f = sum_i alpha_i P^T s_i .* m + w * text(user_text) and
// g_c = logit_scale * text'(c)
// (different hash salt), each answer c has affinity a_c = <f, g_c>, and
// nll(target) = -log softmax_c(a_c) over the task's answers ("True"/"False"
// or lp_candidates). For the two classification answers this is
// softplus(-(a_target - a_other)).
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockConfig cfg);

  std::string name() const override { return cfg_.answer_key.empty() ? "mock" : "mock-oracle"; }
  bool supports_scoring() const override { return true; }
  std::size_t slot_dim() const override { return cfg_.slot_dim; }
  ScoreResult score(const Prompt& prompt, const Tensor<float>& slots,
                    std::string_view target) const override;
  std::vector<Generation> generate(const Prompt& prompt, const Tensor<float>& slots,
                                   std::size_t n) const override;
  std::string state_bytes() const override;

  double affinity(const Prompt& prompt, const Tensor<float>& slots, std::string_view target) const;
  const MockConfig& config() const { return cfg_; }

 private:
  std::vector<double> prompt_feature(const Prompt& prompt, const Tensor<float>& slots) const;
  std::vector<double> gate(const Prompt& prompt) const;

 public:
  // Pooling weights for the first n slots of `prompt`; they sum to 1.
  std::vector<double> slot_weights(const Prompt& prompt, std::size_t n) const;

 private:
  std::vector<double> target_feature(std::string_view target) const;
  const std::vector<std::string>& answers(TaskKind task) const;

  MockConfig cfg_;
  Tensor<float> projection_;
  std::vector<std::vector<double>> tc_features_, lp_features_;
};

struct HttpConfig {
  // e.g. https://host/v1/chat/completions
  std::string endpoint;
  std::string model;
  // Environment variable holding the bearer token; unset means no auth header.
  std::string token_env = "KGALIGN_API_KEY";
  double timeout_seconds = 60.0;
  std::size_t max_retries = 3;
  std::size_t concurrency = 4;
  double backoff_seconds = 0.5;
};

// Generation-only backend speaking chat-completions JSON. Slot markers are
// replaced by the names of their entities, since soft vectors cannot be sent.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig cfg);
  ~HttpBackend() override;

  std::string name() const override { return "http"; }
  bool supports_scoring() const override { return false; }
  std::size_t slot_dim() const override { return 1; }
  std::vector<Generation> generate(const Prompt& prompt, const Tensor<float>& slots,
                                   std::size_t n) const override;

  // Raw completion for a plain text prompt (extraction).
  std::vector<std::string> complete(std::string_view system, std::string_view user,
                                    std::size_t n) const;

  // Sleep hook, replaceable in tests.
  std::function<void(std::chrono::milliseconds)> sleep;

 private:
  struct Impl;
  HttpConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

// User text with every "<gemb_i>" replaced by the i-th slot label.
std::string textualize_slots(const Prompt& prompt);

// --- Tuning -------------------------------------------------------------------

struct TuneExample {
  Prompt prompt;
  // One embedding row per prompt slot (may have zero rows).
  Tensor<float> node_embs;
  std::string target;
};

struct TuneConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 2;
  double learning_rate = 2e-3;
  double warmup_ratio = 3e-2;
  std::uint64_t seed = 42;
};

struct TuneLog {
  // Entry 0 is the untrained adapter; entry e the mean NLL after epoch e.
  std::vector<double> epoch_loss;
};

// Minimizes the mean target NLL over `examples` by updating the adapter only.
TuneLog tune_adapter(const std::vector<TuneExample>& examples, KnowledgeAdapter<float>& adapter,
                     const Backend& backend, const TuneConfig& config);

double mean_nll(const std::vector<TuneExample>& examples, KnowledgeAdapter<float>& adapter,
                const Backend& backend);

// Slot vectors for a prompt: adapter rows for scoring backends, a 0 x 1
// placeholder for text-only backends.
Tensor<float> slot_vectors(const TuneExample& ex, KnowledgeAdapter<float>& adapter,
                           const Backend& backend);

// Rows of `table` for the prompt's slot entities.
Tensor<float> gather_rows(const Tensor<float>& table, const std::vector<EntityId>& ids);

// --- Answer parsing -------------------------------------------------------------

// Lowercase, punctuation to spaces, whitespace collapsed and trimmed.
std::string normalize_answer(std::string_view s);

struct TCPrediction {
  bool positive = false;
  bool parse_failure = false;
  std::string raw;
};

TCPrediction parse_tc_answer(std::string_view raw);
TCPrediction predict_tc(const TuneExample& ex, KnowledgeAdapter<float>& adapter,
                        const Backend& backend);

// Normalized entity name (and surface) -> entity; the first entity wins.
class EntityNameIndex {
 public:
  explicit EntityNameIndex(const KnowledgeGraph& kg);
  std::optional<EntityId> find(std::string_view answer) const;

 private:
  std::unordered_map<std::string, EntityId> index_;
};

struct LPAnswer {
  std::string raw;
  std::string normalized;
  std::optional<EntityId> entity;
};

struct LPPrediction {
  std::vector<LPAnswer> answers;
  std::size_t unmatched = 0;
};

inline constexpr std::size_t kLinkPredictionAnswers = 3;

// Normalizes, drops repeats (by normalized text) and links to entities.
LPPrediction parse_lp_answers(const std::vector<Generation>& generated, const EntityNameIndex& names);
LPPrediction predict_lp(const TuneExample& ex, KnowledgeAdapter<float>& adapter,
                        const Backend& backend, const EntityNameIndex& names,
                        std::size_t n = kLinkPredictionAnswers);

// Runs fn(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace kgalign
