#pragma once

// Graph encoder (neighbor-restricted multi-head attention with relation terms
// on keys and values) and text encoder (transformer over word tokens). Both
// map their input to dim-dimensional vectors and are templated on the scalar
// type so gradient checks can re-evaluate them in double precision.

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgalign/autodiff.hpp"
#include "kgalign/graph.hpp"
#include "kgalign/rng.hpp"
#include "kgalign/tokenizer.hpp"

namespace kgalign {

struct GraphEncoderConfig {
  std::size_t dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::uint64_t feature_seed = 1;

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw std::invalid_argument("graph encoder: dim must be a positive multiple of heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw std::invalid_argument("graph encoder: dropout must lie in [0, 1)");
    }
  }
};

struct TextEncoderConfig {
  std::size_t dim = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 2;
  std::size_t max_len = kMaxTextTokens;
  double dropout = 0.1;

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw std::invalid_argument("text encoder: dim must be a positive multiple of heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw std::invalid_argument("text encoder: dropout must lie in [0, 1)");
    }
  }
};

// Inference runs with training = false and needs no rng.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

namespace detail {

template <class T>
Tensor<T> gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor<T> t(rows, cols);
  for (auto& v : t.values()) v = T(rng.normal() * stddev);
  return t;
}

// Deterministic feature row for a string that has no table entry.
template <class T>
void hashed_row(std::span<T> out, std::string_view label, std::uint64_t seed) {
  Rng rng(fnv1a(label) ^ seed);
  const double sd = 1.0 / std::sqrt(double(out.size()));
  for (auto& v : out) v = T(rng.normal() * sd);
}

template <class T>
Var<T> apply_dropout(const Var<T>& x, double p, const ForwardMode& mode) {
  if (!mode.training || p <= 0.0) return x;
  if (!mode.rng) throw std::invalid_argument("training forward pass requires an rng");
  return dropout(x, p, *mode.rng, true);
}

}  // namespace detail

// Resolves extraction-built labels onto knowledge-graph ids, if possible.
struct LabelResolver {
  std::unordered_map<std::string, std::int64_t> entities;
  std::unordered_map<std::string, std::int64_t> relations;

  std::int64_t entity(const std::string& label) const {
    auto it = entities.find(label);
    return it == entities.end() ? -1 : it->second;
  }
  std::int64_t relation(const std::string& label) const {
    auto it = relations.find(label);
    return it == relations.end() ? -1 : it->second;
  }
};

// Encoder-ready view of a subgraph: table rows (or -1 with a fixed feature
// row), the distinct relation rows used, and the attention pattern.
template <class T>
struct GraphInput {
  std::vector<std::int64_t> node_rows;
  Tensor<T> node_fallback;
  std::vector<std::int64_t> relation_rows;
  Tensor<T> relation_fallback;
  AttentionPattern pattern;
  bool has_node_fallback = false;
  bool has_relation_fallback = false;

  std::size_t node_count() const { return node_rows.size(); }
};

template <class T>
class GraphEncoder {
 public:
  struct Layer {
    Parameter<T> wq, wk, wv, wo, wrk, wrv, ln_gain, ln_bias;
  };

  GraphEncoder(const GraphEncoderConfig& cfg, std::size_t entities, std::size_t relations)
      : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(cfg.feature_seed).split(0x67e);
    const double sd = 1.0 / std::sqrt(double(cfg.dim));
    node_features_ = Parameter<T>("graph.node_features",
                                  detail::gaussian<T>(std::max<std::size_t>(entities, 1), cfg.dim, sd, rng));
    relations_ = Parameter<T>("graph.relations",
                              detail::gaussian<T>(std::max<std::size_t>(relations, 1), cfg.dim, sd, rng));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "graph.layer" + std::to_string(l) + ".";
      auto w = [&](const char* n) {
        return Parameter<T>(p + n, detail::gaussian<T>(cfg.dim, cfg.dim, sd, rng));
      };
      layers_.push_back(Layer{w("wq"), w("wk"), w("wv"), w("wo"), w("wrk"), w("wrv"),
                              Parameter<T>(p + "ln_gain", Tensor<T>(1, cfg.dim, T(1))),
                              Parameter<T>(p + "ln_bias", Tensor<T>(1, cfg.dim, T(0)))});
    }
  }

  const GraphEncoderConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }
  Parameter<T>& node_features() { return node_features_; }
  Parameter<T>& relations() { return relations_; }
  std::vector<Layer>& layers() { return layers_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out{&node_features_, &relations_};
    for (auto& l : layers_) {
      for (auto* p : {&l.wq, &l.wk, &l.wv, &l.wo, &l.wrk, &l.wrv, &l.ln_gain, &l.ln_bias}) {
        out.push_back(p);
      }
    }
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<GraphEncoder*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  template <class U>
  GraphEncoder<U> cast() const {
    GraphEncoder<U> out(cfg_, 1, 1);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value() = src[i]->value().template cast<U>();
    for (auto* p : dst) p->grad() = Tensor<U>(p->value().shape(), U(0));
    return out;
  }

  // Every node attends to itself and to each neighbor once per connecting
  // edge (either direction), tagged with that edge's relation.
  GraphInput<T> prepare(const Subgraph& g, const LabelResolver* resolver = nullptr) const {
    GraphInput<T> in;
    const std::size_t n = g.nodes.size();
    std::unordered_map<EntityId, std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i) pos.emplace(g.nodes[i], i);
    const std::uint64_t salt = cfg_.feature_seed * 0x9e3779b97f4a7c15ULL;

    in.node_rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!g.is_local()) {
        if (g.nodes[i] >= node_features_.value().rows()) {
          throw std::out_of_range("encode_graph: node id " + std::to_string(g.nodes[i]) +
                                  " outside the feature table");
        }
        in.node_rows[i] = g.nodes[i];
      } else {
        in.node_rows[i] = resolver ? resolver->entity(g.node_labels.at(g.nodes[i])) : -1;
        if (in.node_rows[i] < 0) in.has_node_fallback = true;
      }
    }
    if (in.has_node_fallback) {
      in.node_fallback = Tensor<T>(n, cfg_.dim);
      for (std::size_t i = 0; i < n; ++i) {
        if (in.node_rows[i] < 0) {
          detail::hashed_row<T>(in.node_fallback.row(i), "node:" + g.node_labels[g.nodes[i]], salt);
        }
      }
    }

    std::unordered_map<RelationId, std::int64_t> rel_slot;
    std::vector<std::string> rel_labels;
    auto relation_slot = [&](RelationId r) {
      auto [it, fresh] = rel_slot.emplace(r, static_cast<std::int64_t>(in.relation_rows.size()));
      if (fresh) {
        std::int64_t row = r;
        if (g.is_local()) {
          row = resolver ? resolver->relation(g.relation_labels.at(r)) : -1;
          rel_labels.push_back(g.relation_labels.at(r));
        } else if (r >= relations_.value().rows()) {
          throw std::out_of_range("encode_graph: relation id outside the relation table");
        } else {
          rel_labels.emplace_back();
        }
        if (row < 0) in.has_relation_fallback = true;
        in.relation_rows.push_back(row);
      }
      return it->second;
    };

    std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> nbrs(n);
    for (const auto& e : g.edges) {
      auto ih = pos.find(e.h), it = pos.find(e.t);
      if (ih == pos.end() || it == pos.end()) {
        throw std::invalid_argument("encode_graph: edge endpoint not among subgraph nodes");
      }
      const auto slot = relation_slot(e.r);
      nbrs[ih->second].emplace_back(it->second, slot);
      if (ih->second != it->second) nbrs[it->second].emplace_back(ih->second, slot);
    }
    for (std::size_t i = 0; i < n; ++i) {
      in.pattern.add(i);
      for (auto [j, r] : nbrs[i]) in.pattern.add(j, r);
      in.pattern.close_row();
    }
    if (in.has_relation_fallback) {
      in.relation_fallback = Tensor<T>(in.relation_rows.size(), cfg_.dim);
      for (std::size_t k = 0; k < in.relation_rows.size(); ++k) {
        if (in.relation_rows[k] < 0) {
          detail::hashed_row<T>(in.relation_fallback.row(k), "relation:" + rel_labels[k], salt);
        }
      }
    }
    return in;
  }

  // One row per input node, in input order.
  Var<T> forward(const GraphInput<T>& in, const ForwardMode& mode = {}) {
    if (in.node_count() == 0) throw std::invalid_argument("encode_graph: empty subgraph");
    Var<T> x = embed_rows(node_features_, in.node_rows,
                          in.has_node_fallback ? &in.node_fallback : nullptr);
    Var<T> rel;
    if (!in.relation_rows.empty()) {
      rel = embed_rows(relations_, in.relation_rows,
                       in.has_relation_fallback ? &in.relation_fallback : nullptr);
    }
    for (auto& l : layers_) {
      Var<T> q = matmul(x, leaf(l.wq));
      Var<T> k = matmul(x, leaf(l.wk));
      Var<T> v = matmul(x, leaf(l.wv));
      Var<T> rk, rv;
      if (rel.defined()) {
        rk = matmul(rel, leaf(l.wrk));
        rv = matmul(rel, leaf(l.wrv));
      }
      Var<T> att = sparse_attention(q, k, v, rk, rv, in.pattern, cfg_.heads);
      Var<T> o = detail::apply_dropout(matmul(att, leaf(l.wo)), cfg_.dropout, mode);
      x = layer_norm_rows(add(x, o), leaf(l.ln_gain), leaf(l.ln_bias));
    }
    return x;
  }

  Var<T> encode_graph(const Subgraph& g, const ForwardMode& mode = {},
                      const LabelResolver* resolver = nullptr) {
    return forward(prepare(g, resolver), mode);
  }

  // Mean of the node embeddings.
  Var<T> encode_subgraph(const Subgraph& g, const ForwardMode& mode = {},
                         const LabelResolver* resolver = nullptr) {
    if (g.nodes.empty()) throw std::invalid_argument("encode_subgraph: empty subgraph");
    return mean_pool_rows(encode_graph(g, mode, resolver));
  }

 private:
  GraphEncoderConfig cfg_;
  Parameter<T> node_features_;
  Parameter<T> relations_;
  std::vector<Layer> layers_;
};

template <class T>
class TextEncoder {
 public:
  struct Layer {
    Parameter<T> wq, wk, wv, wo, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias;
  };

  TextEncoder(const TextEncoderConfig& cfg, std::size_t vocab, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng(seed).split(0x7e47);
    const std::size_t d = cfg.dim, h = cfg.dim * cfg.ffn_mult;
    const double sd = 1.0 / std::sqrt(double(d));
    tokens_ = Parameter<T>("text.tokens", detail::gaussian<T>(std::max<std::size_t>(vocab, 1), d, sd, rng));
    positions_ = Parameter<T>("text.positions", detail::gaussian<T>(cfg.max_len, d, sd, rng));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "text.layer" + std::to_string(l) + ".";
      auto w = [&](const char* n, std::size_t r, std::size_t c) {
        return Parameter<T>(p + n, detail::gaussian<T>(r, c, 1.0 / std::sqrt(double(r)), rng));
      };
      auto z = [&](const char* n, std::size_t c, T fill) {
        return Parameter<T>(p + n, Tensor<T>(1, c, fill));
      };
      layers_.push_back(Layer{w("wq", d, d), w("wk", d, d), w("wv", d, d), w("wo", d, d),
                              z("ln1_gain", d, T(1)), z("ln1_bias", d, T(0)), w("w1", d, h),
                              z("b1", h, T(0)), w("w2", h, d), z("b2", d, T(0)),
                              z("ln2_gain", d, T(1)), z("ln2_bias", d, T(0))});
    }
  }

  const TextEncoderConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return tokens_.value().rows(); }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out{&tokens_, &positions_};
    for (auto& l : layers_) {
      for (auto* p : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ln1_gain, &l.ln1_bias, &l.w1, &l.b1, &l.w2,
                      &l.b2, &l.ln2_gain, &l.ln2_bias}) {
        out.push_back(p);
      }
    }
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<TextEncoder*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  template <class U>
  TextEncoder<U> cast() const {
    TextEncoder<U> out(cfg_, 1, 0);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value() = src[i]->value().template cast<U>();
    for (auto* p : dst) p->grad() = Tensor<U>(p->value().shape(), U(0));
    return out;
  }

  // One row per sequence, each the mean over its token positions. Sequences
  // are stacked and attend only within themselves, so batching does not
  // change any row.
  Var<T> encode_sequences(const std::vector<std::vector<std::uint32_t>>& seqs,
                          const ForwardMode& mode = {}) {
    if (seqs.empty()) throw std::invalid_argument("text encoder: no sequences");
    std::vector<std::int64_t> tok, pos;
    std::vector<std::size_t> offsets{0};
    AttentionPattern pattern;
    for (const auto& ids : seqs) {
      const std::size_t n = std::min(ids.size(), cfg_.max_len);
      if (n == 0) throw std::invalid_argument("text encoder: empty token sequence");
      const std::size_t base = offsets.back();
      for (std::size_t i = 0; i < n; ++i) {
        tok.push_back(ids[i] < vocab_size() ? std::int64_t(ids[i]) : std::int64_t(0));
        pos.push_back(static_cast<std::int64_t>(i));
        for (std::size_t j = 0; j < n; ++j) pattern.add(base + j);
        pattern.close_row();
      }
      offsets.push_back(base + n);
    }
    Var<T> x = add(embed_rows(tokens_, tok), embed_rows(positions_, pos));
    for (auto& l : layers_) {
      Var<T> q = matmul(x, leaf(l.wq));
      Var<T> k = matmul(x, leaf(l.wk));
      Var<T> v = matmul(x, leaf(l.wv));
      Var<T> att = sparse_attention(q, k, v, Var<T>(), Var<T>(), pattern, cfg_.heads);
      Var<T> o = detail::apply_dropout(matmul(att, leaf(l.wo)), cfg_.dropout, mode);
      x = layer_norm_rows(add(x, o), leaf(l.ln1_gain), leaf(l.ln1_bias));
      Var<T> f = gelu(add_row(matmul(x, leaf(l.w1)), leaf(l.b1)));
      f = detail::apply_dropout(add_row(matmul(f, leaf(l.w2)), leaf(l.b2)), cfg_.dropout, mode);
      x = layer_norm_rows(add(x, f), leaf(l.ln2_gain), leaf(l.ln2_bias));
    }
    return segment_mean_rows(x, std::span<const std::size_t>(offsets));
  }

  // 1 x dim, mean over token positions.
  Var<T> encode(std::span<const std::uint32_t> ids, const ForwardMode& mode = {}) {
    return encode_sequences({std::vector<std::uint32_t>(ids.begin(), ids.end())}, mode);
  }

  Var<T> encode_text(const Tokenizer& tok, std::string_view text, const ForwardMode& mode = {}) {
    return encode_sequences({tok.encode(text, cfg_.max_len)}, mode);
  }

  // B x dim, one row per text.
  Var<T> encode_batch(const Tokenizer& tok, const std::vector<std::string>& texts,
                      const ForwardMode& mode = {}) {
    std::vector<std::vector<std::uint32_t>> seqs;
    seqs.reserve(texts.size());
    for (const auto& t : texts) seqs.push_back(tok.encode(t, cfg_.max_len));
    return encode_sequences(seqs, mode);
  }

 private:
  TextEncoderConfig cfg_;
  Parameter<T> tokens_;
  Parameter<T> positions_;
  std::vector<Layer> layers_;
};

}  // namespace kgalign
