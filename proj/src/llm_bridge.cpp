#include "kgalign/llm_bridge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "kgalign/tokenizer.hpp"

namespace kgalign {
namespace {

constexpr std::uint64_t kPromptSalt = 0x70726f6d70747331ULL;
constexpr std::uint64_t kTargetSalt = 0x7461726765747332ULL;
constexpr std::uint64_t kGateSalt = 0x6761746573616c33ULL;

void add_hashed(std::vector<double>& acc, std::string_view token, std::uint64_t salt) {
  Rng rng(fnv1a(token) ^ salt);
  const double sd = 1.0 / std::sqrt(double(acc.size()));
  for (auto& v : acc) v += rng.normal() * sd;
}

// Mean of per-token hashed vectors; empty text gives zeros.
std::vector<double> bag_of_words(std::string_view text, std::size_t dim, std::uint64_t salt) {
  std::vector<double> f(dim, 0.0);
  const auto tokens = Tokenizer::split(text);
  for (const auto& t : tokens) add_hashed(f, t, salt);
  if (!tokens.empty()) {
    for (auto& v : f) v /= double(tokens.size());
  }
  return f;
}

const std::vector<std::string>& tc_candidates() {
  static const std::vector<std::string> c{"True", "False"};
  return c;
}

}  // namespace

ScoreResult Backend::score(const Prompt&, const Tensor<float>&, std::string_view) const {
  throw BackendError("backend '" + name() + "' cannot score targets; use a scoring backend for tuning");
}

MockBackend::MockBackend(MockConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.slot_dim == 0 || cfg_.feature_dim == 0) throw std::invalid_argument("mock backend: zero dimension");
  Rng rng = Rng(cfg_.seed).split(0x6d6f636b);
  projection_ = detail::gaussian<float>(cfg_.slot_dim, cfg_.feature_dim,
                                        1.0 / std::sqrt(double(cfg_.slot_dim)), rng);
  for (const auto& c : tc_candidates()) tc_features_.push_back(target_feature(c));
  for (const auto& c : cfg_.lp_candidates) lp_features_.push_back(target_feature(c));
}

std::vector<double> MockBackend::slot_weights(const Prompt& prompt, std::size_t n) const {
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 1.0 / double(i + 1);
    if (i < prompt.slot_labels.size() && !prompt.slot_labels[i].empty() &&
        prompt.user_text.find(prompt.slot_labels[i]) != std::string::npos) {
      w[i] += cfg_.mention_weight;
    }
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

std::vector<double> MockBackend::gate(const Prompt& prompt) const {
  std::unordered_set<std::string> entity_tokens;
  for (const auto& label : prompt.slot_labels) {
    for (auto& t : Tokenizer::split(label)) entity_tokens.insert(std::move(t));
  }
  std::vector<double> q(cfg_.feature_dim, 0.0);
  for (const auto& t : Tokenizer::split(prompt.question)) {
    if (!entity_tokens.count(t)) add_hashed(q, t, kGateSalt);
  }
  double ss = 0.0;
  for (double v : q) ss += v * v;
  const double rms = std::sqrt(ss / double(q.size()));
  for (auto& v : q) v = 1.0 + (rms > 0.0 ? cfg_.gate_weight * v / rms : 0.0);
  return q;
}

std::vector<double> MockBackend::prompt_feature(const Prompt& prompt, const Tensor<float>& slots) const {
  std::vector<double> f = bag_of_words(prompt.user_text, cfg_.feature_dim, kPromptSalt);
  for (auto& v : f) v *= cfg_.text_weight;
  if (slots.size() == 0) return f;
  if (slots.cols() != cfg_.slot_dim) {
    throw ShapeError("mock backend: slot vectors must have " + std::to_string(cfg_.slot_dim) + " columns");
  }
  const auto alpha = slot_weights(prompt, slots.rows());
  std::vector<double> u(cfg_.feature_dim, 0.0);
  for (std::size_t i = 0; i < slots.rows(); ++i) {
    for (std::size_t k = 0; k < cfg_.slot_dim; ++k) {
      const double s = slots(i, k) * alpha[i];
      if (s == 0.0) continue;
      for (std::size_t j = 0; j < cfg_.feature_dim; ++j) u[j] += s * projection_(k, j);
    }
  }
  const auto m = gate(prompt);
  for (std::size_t j = 0; j < cfg_.feature_dim; ++j) f[j] += u[j] * m[j];
  return f;
}

std::vector<double> MockBackend::target_feature(std::string_view target) const {
  auto g = bag_of_words(target, cfg_.feature_dim, kTargetSalt);
  for (auto& v : g) v *= cfg_.logit_scale;
  return g;
}

const std::vector<std::string>& MockBackend::answers(TaskKind task) const {
  return task == TaskKind::TripleClassification ? tc_candidates() : cfg_.lp_candidates;
}

double MockBackend::affinity(const Prompt& prompt, const Tensor<float>& slots,
                             std::string_view target) const {
  const auto f = prompt_feature(prompt, slots);
  const auto g = target_feature(target);
  return std::inner_product(f.begin(), f.end(), g.begin(), 0.0);
}

ScoreResult MockBackend::score(const Prompt& prompt, const Tensor<float>& slots,
                               std::string_view target) const {
  const auto f = prompt_feature(prompt, slots);
  const auto& names = answers(prompt.task);
  std::vector<const std::vector<double>*> feats;
  for (const auto& g : prompt.task == TaskKind::TripleClassification ? tc_features_ : lp_features_) {
    feats.push_back(&g);
  }
  // The target joins the answer set when it is not already part of it.
  std::size_t target_index = std::find(names.begin(), names.end(), target) - names.begin();
  std::vector<double> extra;
  if (target_index == names.size()) {
    extra = target_feature(target);
    feats.push_back(&extra);
  }
  std::vector<double> logits(feats.size());
  for (std::size_t c = 0; c < feats.size(); ++c) {
    logits[c] = std::inner_product(f.begin(), f.end(), feats[c]->begin(), 0.0);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);

  ScoreResult r;
  r.nll = std::max(0.0, lse - logits[target_index]);
  r.slot_grad = Tensor<float>(slots.rows(), slots.size() ? slots.cols() : cfg_.slot_dim);
  if (slots.rows() == 0) return r;
  // d nll / d f = sum_c p_c g_c - g_target;  d f / d s_i = alpha_i P diag(m).
  std::vector<double> delta(cfg_.feature_dim, 0.0);
  for (std::size_t c = 0; c < feats.size(); ++c) {
    const double w = std::exp(logits[c] - lse) - (c == target_index ? 1.0 : 0.0);
    if (w == 0.0) continue;
    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] += w * (*feats[c])[j];
  }
  const auto m = gate(prompt);
  const auto alpha = slot_weights(prompt, slots.rows());
  std::vector<double> pd(cfg_.slot_dim, 0.0);
  for (std::size_t k = 0; k < cfg_.slot_dim; ++k) {
    for (std::size_t j = 0; j < cfg_.feature_dim; ++j) pd[k] += projection_(k, j) * m[j] * delta[j];
  }
  for (std::size_t i = 0; i < slots.rows(); ++i) {
    for (std::size_t k = 0; k < cfg_.slot_dim; ++k) r.slot_grad(i, k) = float(pd[k] * alpha[i]);
  }
  return r;
}

std::vector<Generation> MockBackend::generate(const Prompt& prompt, const Tensor<float>& slots,
                                              std::size_t n) const {
  const auto& cands = answers(prompt.task);
  const auto& feats = prompt.task == TaskKind::TripleClassification ? tc_features_ : lp_features_;
  const auto f = prompt_feature(prompt, slots);
  const std::string* gold = nullptr;
  if (!cfg_.answer_key.empty()) {
    auto it = cfg_.answer_key.find(prompt.text());
    if (it != cfg_.answer_key.end()) gold = &it->second;
  }
  std::vector<double> logits(cands.size());
  for (std::size_t c = 0; c < cands.size(); ++c) {
    logits[c] = std::inner_product(f.begin(), f.end(), feats[c].begin(), 0.0);
    if (gold && *gold == cands[c]) logits[c] += cfg_.oracle_bonus;
  }
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lse = mx + std::log(z);
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return logits[x] > logits[y]; });
  std::vector<Generation> out;
  for (std::size_t i = 0; i < std::min(n, order.size()); ++i) {
    out.push_back({cands[order[i]], logits[order[i]] - lse});
  }
  return out;
}

std::string MockBackend::state_bytes() const {
  std::ostringstream os;
  os << cfg_.slot_dim << ' ' << cfg_.feature_dim << ' ' << cfg_.text_weight << ' ' << cfg_.gate_weight << ' ' << cfg_.logit_scale << ' ' << cfg_.mention_weight << ' ' << cfg_.seed << ' '
     << cfg_.oracle_bonus << ' ' << cfg_.lp_candidates.size() << ' ' << cfg_.answer_key.size() << '\n';
  os.write(reinterpret_cast<const char*>(projection_.data()),
           static_cast<std::streamsize>(projection_.size() * sizeof(float)));
  return os.str();
}

std::string textualize_slots(const Prompt& prompt) {
  std::string out = prompt.user_text;
  for (std::size_t i = prompt.slots.size(); i-- > 0;) {
    const std::string marker = prompt.slots[i];
    const std::string label = i < prompt.slot_labels.size() ? prompt.slot_labels[i] : marker;
    for (std::size_t at = out.find(marker); at != std::string::npos; at = out.find(marker, at + label.size())) {
      out.replace(at, marker.size(), label);
    }
  }
  return out;
}

Tensor<float> gather_rows(const Tensor<float>& table, const std::vector<EntityId>& ids) {
  Tensor<float> out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) throw std::out_of_range("embedding table has no row " + std::to_string(ids[i]));
    std::copy_n(table.row(ids[i]).begin(), table.cols(), out.row(i).begin());
  }
  return out;
}

Tensor<float> slot_vectors(const TuneExample& ex, KnowledgeAdapter<float>& adapter,
                           const Backend& backend) {
  if (!backend.supports_scoring() || ex.node_embs.rows() == 0) {
    return Tensor<float>(0, backend.slot_dim());
  }
  return adapter.adapt(ex.node_embs);
}

double mean_nll(const std::vector<TuneExample>& examples, KnowledgeAdapter<float>& adapter,
                const Backend& backend) {
  if (examples.empty()) return 0.0;
  double s = 0.0;
  for (const auto& ex : examples) s += backend.score(ex.prompt, slot_vectors(ex, adapter, backend), ex.target).nll;
  return s / double(examples.size());
}

TuneLog tune_adapter(const std::vector<TuneExample>& examples, KnowledgeAdapter<float>& adapter,
                     const Backend& backend, const TuneConfig& config) {
  if (!backend.supports_scoring()) {
    throw BackendError("backend '" + backend.name() + "' cannot score targets; tuning needs a scoring backend");
  }
  if (examples.empty()) throw std::invalid_argument("tune: no training prompts");
  if (config.batch_size == 0) throw std::invalid_argument("tune: batch size must be >= 1");
  if (adapter.out_dim() != backend.slot_dim()) {
    throw ShapeError("tune: adapter output " + std::to_string(adapter.out_dim()) + " != backend slot width " +
                     std::to_string(backend.slot_dim()));
  }
  TuneLog log;
  log.epoch_loss.push_back(mean_nll(examples, adapter, backend));

  const std::size_t per_epoch = (examples.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = std::max<std::size_t>(1, per_epoch * config.epochs);
  Adam<float> opt(adapter.parameters(), AdamConfig{config.learning_rate, config.warmup_ratio});
  Rng shuffle = Rng(config.seed).split(0x7475);
  std::vector<std::size_t> order(examples.size());

  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      opt.zero_grad();
      std::vector<Var<float>> terms;
      for (std::size_t i = b; i < end; ++i) {
        const auto& ex = examples[order[i]];
        if (ex.node_embs.rows() == 0) continue;
        Var<float> slots = adapter.forward(constant(ex.node_embs));
        const ScoreResult r = backend.score(ex.prompt, slots.value(), ex.target);
        if (!std::isfinite(r.nll)) throw std::runtime_error("tune: non-finite loss");
        // Surrogate whose gradient w.r.t. the slots is the backend's gradient.
        terms.push_back(dot_const(slots, r.slot_grad));
      }
      if (!terms.empty()) {
        Var<float> loss = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
        backward(scale(loss, 1.0f / float(end - b)));
      }
      opt.step(total);
    }
    log.epoch_loss.push_back(mean_nll(examples, adapter, backend));
  }
  return log;
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c) || std::ispunct(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

TCPrediction parse_tc_answer(std::string_view raw) {
  TCPrediction p;
  p.raw = std::string(raw);
  const std::string n = normalize_answer(raw);
  if (n == "true") {
    p.positive = true;
  } else if (n != "false") {
    p.parse_failure = true;
  }
  return p;
}

TCPrediction predict_tc(const TuneExample& ex, KnowledgeAdapter<float>& adapter, const Backend& backend) {
  const auto gen = backend.generate(ex.prompt, slot_vectors(ex, adapter, backend), 1);
  if (gen.empty()) return parse_tc_answer("");
  return parse_tc_answer(gen[0].answer);
}

EntityNameIndex::EntityNameIndex(const KnowledgeGraph& kg) {
  for (std::size_t e = 0; e < kg.entity_count(); ++e) {
    index_.emplace(normalize_answer(kg.name(EntityId(e))), EntityId(e));
  }
  for (std::size_t e = 0; e < kg.entity_count(); ++e) {
    index_.emplace(normalize_answer(kg.entities.surface(EntityId(e))), EntityId(e));
  }
}

std::optional<EntityId> EntityNameIndex::find(std::string_view answer) const {
  auto it = index_.find(normalize_answer(answer));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

LPPrediction parse_lp_answers(const std::vector<Generation>& generated, const EntityNameIndex& names) {
  LPPrediction p;
  for (const auto& g : generated) {
    LPAnswer a{g.answer, normalize_answer(g.answer), std::nullopt};
    const bool seen = std::any_of(p.answers.begin(), p.answers.end(),
                                  [&](const LPAnswer& x) { return x.normalized == a.normalized; });
    if (seen) continue;
    a.entity = names.find(a.normalized);
    if (!a.entity) ++p.unmatched;
    p.answers.push_back(std::move(a));
  }
  return p;
}

LPPrediction predict_lp(const TuneExample& ex, KnowledgeAdapter<float>& adapter, const Backend& backend,
                        const EntityNameIndex& names, std::size_t n) {
  return parse_lp_answers(backend.generate(ex.prompt, slot_vectors(ex, adapter, backend), n), names);
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace kgalign
