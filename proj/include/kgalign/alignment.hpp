#pragma once

// Hierarchical knowledge alignment: node <-> description (local) and
// subgraph <-> document (global) contrastive training over shared encoders.

#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgalign/autodiff.hpp"
#include "kgalign/encoders.hpp"
#include "kgalign/graph.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/optim.hpp"
#include "kgalign/tokenizer.hpp"

namespace kgalign {

// exp(tau) is kept within [1, 100].
inline constexpr double kMinLogitScale = 1.0;
inline constexpr double kMaxLogitScale = 100.0;

// (h d^T) * exp(tau). Rows of both inputs must already be unit length.
template <class T>
Var<T> similarity(const Var<T>& node_embs, const Var<T>& text_embs, const Var<T>& tau) {
  if (node_embs.cols() != text_embs.cols()) throw ShapeError("similarity: dimension mismatch");
  if (node_embs.rows() != text_embs.rows()) throw ShapeError("similarity: batch size mismatch");
  for (const auto* m : {&node_embs.value(), &text_embs.value()}) {
    for (std::size_t i = 0; i < m->rows(); ++i) {
      double s = 0.0;
      for (T v : m->row(i)) s += double(v) * double(v);
      if (std::abs(std::sqrt(s) - 1.0) > 1e-4) {
        throw std::domain_error("similarity: rows must be L2-normalized");
      }
    }
  }
  return mul_scalar(matmul_nt(node_embs, text_embs), exp(tau));
}

// Symmetric cross-entropy with diagonal targets:
// 0.5 * (CE(L, I) + CE(L^T, I)).
template <class T>
Var<T> contrastive_loss(const Var<T>& logits) {
  if (logits.rows() != logits.cols()) throw ShapeError("contrastive_loss: logits must be square");
  std::vector<std::size_t> diag(logits.rows());
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  return scale(add(softmax_ce_rows(logits, std::span<const std::size_t>(diag)),
                   softmax_ce_rows(transpose(logits), std::span<const std::size_t>(diag))),
               T(0.5));
}

struct SubgraphDocumentPair {
  Subgraph subgraph;
  std::string document;
};

template <class T>
struct AlignmentModel {
  GraphEncoder<T> graph;
  TextEncoder<T> text;
  Parameter<T> tau;

  AlignmentModel(const GraphEncoderConfig& gcfg, const TextEncoderConfig& tcfg,
                 std::size_t entities, std::size_t relations, std::size_t vocab,
                 std::uint64_t seed)
      : graph(gcfg, entities, relations),
        text(tcfg, vocab, seed),
        tau("alignment.tau", Tensor<T>(1, 1, T(0))) {}

  AlignmentModel(GraphEncoder<T> g, TextEncoder<T> t, Parameter<T> tau_)
      : graph(std::move(g)), text(std::move(t)), tau(std::move(tau_)) {}

  std::vector<Parameter<T>*> parameters() {
    auto out = graph.parameters();
    auto tp = text.parameters();
    out.insert(out.end(), tp.begin(), tp.end());
    out.push_back(&tau);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<AlignmentModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  template <class U>
  AlignmentModel<U> cast() const {
    return AlignmentModel<U>(graph.template cast<U>(), text.template cast<U>(), tau.template cast<U>());
  }

  void clamp_temperature() {
    auto& v = tau.value()[0];
    v = std::clamp(v, T(std::log(kMinLogitScale)), T(std::log(kMaxLogitScale)));
  }
};

// Local loss for one batch of entities: the batch's k-hop closure (k = graph
// layers) is encoded, so each entity sees its full receptive field.
struct LocalBatch {
  std::vector<EntityId> entities;
  std::vector<std::string> texts;
};

template <class T>
Var<T> local_logits(AlignmentModel<T>& m, const AdjacencyIndex& index, const Tokenizer& tok,
                    const LocalBatch& batch, const ForwardMode& mode) {
  const Subgraph closure =
      extract_khop(index, batch.entities, m.graph.config().layers, kUnlimitedNodes);
  std::vector<std::size_t> anchor_rows(batch.entities.size());
  std::iota(anchor_rows.begin(), anchor_rows.end(), std::size_t{0});
  if (closure.anchors.size() != batch.entities.size()) {
    throw std::invalid_argument("local alignment batch contains a repeated entity");
  }
  Var<T> nodes = select_rows(m.graph.encode_graph(closure, mode),
                             std::span<const std::size_t>(anchor_rows));
  Var<T> texts = m.text.encode_batch(tok, batch.texts, mode);
  return similarity(l2_normalize_rows(nodes), l2_normalize_rows(texts), leaf(m.tau));
}

template <class T>
Var<T> global_logits(AlignmentModel<T>& m, const Tokenizer& tok,
                     const std::vector<const SubgraphDocumentPair*>& batch,
                     const LabelResolver* resolver, const ForwardMode& mode) {
  std::vector<Var<T>> graphs;
  std::vector<std::string> docs;
  for (const auto* p : batch) {
    graphs.push_back(m.graph.encode_subgraph(p->subgraph, mode, resolver));
    docs.push_back(p->document);
  }
  Var<T> g = concat_rows(graphs);
  Var<T> d = m.text.encode_batch(tok, docs, mode);
  return similarity(l2_normalize_rows(g), l2_normalize_rows(d), leaf(m.tau));
}

// Fraction of rows whose argmax is the diagonal entry.
template <class T>
double retrieval_at_1(const Tensor<T>& logits) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    hits += best == i;
  }
  return logits.rows() ? double(hits) / double(logits.rows()) : 0.0;
}

enum class AlignmentSchedule { Sequential, Joint };

struct AlignmentConfig {
  GraphEncoderConfig graph;
  TextEncoderConfig text;
  std::size_t local_epochs = 10;
  std::size_t global_epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  AlignmentSchedule schedule = AlignmentSchedule::Sequential;
  std::size_t vocab_min_count = 2;
  std::uint64_t seed = 42;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double local = 0.0;
  double global = 0.0;
  double total() const { return local + global; }
};

struct AlignmentMetadata {
  std::uint64_t seed = 0;
  std::size_t local_epochs = 0;
  std::size_t global_epochs = 0;
  std::vector<EpochLoss> losses;
};

struct AlignmentCheckpoint {
  AlignmentConfig config;
  Tokenizer tokenizer;
  AlignmentModel<float> model;
  // Row-normalized node embeddings of the full training graph.
  Tensor<float> embeddings;
  AlignmentMetadata metadata;
};

class AlignmentDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Name -> entity and surface -> relation lookups for extraction-built
// subgraphs (first entity wins on duplicate names).
LabelResolver make_resolver(const KnowledgeGraph& kg);

// Builds the tokenizer from all texts, initializes the encoders from the
// seed and trains. With zero epochs the returned model is the initialization.
// Sequential: local_epochs of local batches, then global_epochs of global
// batches. Joint: local_epochs epochs whose steps each add one local and one
// global batch loss (the shorter stream cycles).
// The loss log starts with epoch 0, the untrained model evaluated without
// dropout over every batch.
AlignmentCheckpoint train_alignment(const KnowledgeGraph& kg,
                                    const std::vector<NodeDescriptionPair>& local_pairs,
                                    const std::vector<SubgraphDocumentPair>& global_pairs,
                                    const AlignmentConfig& config);

// Encodes the full training graph once; row e is entity e, unit length.
Tensor<float> embed_all(AlignmentModel<float>& model, const KnowledgeGraph& kg);

// In-batch retrieval@1 of node -> description over `pairs`, batched like
// training, in inference mode.
double local_retrieval(AlignmentModel<float>& model, const KnowledgeGraph& kg,
                       const Tokenizer& tok, const std::vector<NodeDescriptionPair>& pairs,
                       std::size_t batch_size);

// Checkpoint directory: alignment.bin (parameters + embeddings), vocab.tsv,
// alignment.json (config and training metadata).
void save_alignment(const std::filesystem::path& dir, const AlignmentCheckpoint& ckpt);
AlignmentCheckpoint load_alignment(const std::filesystem::path& dir);

nlohmann::json to_json(const AlignmentConfig& cfg);
AlignmentConfig alignment_config_from_json(const nlohmann::json& j);

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& losses);

}  // namespace kgalign
