#include "kgalign/alignment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kgalign/checkpoint.hpp"

namespace kgalign {
namespace {

using Batches = std::vector<std::vector<std::size_t>>;

// Shuffled fixed-size batches; a trailing batch of one joins its predecessor
// since a single pair has no in-batch negative.
Batches make_batches(std::size_t n, std::size_t batch_size, Rng* rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) rng->shuffle(order);
  Batches out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

LocalBatch local_batch(const std::vector<NodeDescriptionPair>& pairs,
                       const std::vector<std::size_t>& idx) {
  LocalBatch b;
  for (auto i : idx) {
    b.entities.push_back(pairs[i].entity);
    b.texts.push_back(pairs[i].text);
  }
  return b;
}

std::vector<const SubgraphDocumentPair*> global_batch(
    const std::vector<SubgraphDocumentPair>& pairs, const std::vector<std::size_t>& idx) {
  std::vector<const SubgraphDocumentPair*> b;
  for (auto i : idx) b.push_back(&pairs[i]);
  return b;
}

void check_finite(double loss, const char* phase, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "alignment diverged: " << phase << " loss " << loss << " at epoch " << epoch
       << ", batch " << batch << "; lower the learning rate or check the inputs";
    throw AlignmentDiverged(os.str());
  }
}

const char* schedule_name(AlignmentSchedule s) {
  return s == AlignmentSchedule::Joint ? "joint" : "sequential";
}

}  // namespace

LabelResolver make_resolver(const KnowledgeGraph& kg) {
  LabelResolver r;
  for (std::size_t e = 0; e < kg.entity_count(); ++e) {
    r.entities.emplace(kg.name(static_cast<EntityId>(e)), std::int64_t(e));
    r.entities.emplace(kg.entities.surface(static_cast<EntityId>(e)), std::int64_t(e));
  }
  for (std::size_t i = 0; i < kg.relation_count(); ++i) {
    r.relations.emplace(kg.relations.surface(static_cast<RelationId>(i)), std::int64_t(i));
  }
  return r;
}

AlignmentCheckpoint train_alignment(const KnowledgeGraph& kg,
                                    const std::vector<NodeDescriptionPair>& local_pairs,
                                    const std::vector<SubgraphDocumentPair>& global_pairs,
                                    const AlignmentConfig& config) {
  if (config.batch_size < 2) throw std::invalid_argument("alignment: batch size must be >= 2");
  if (local_pairs.size() < 2) throw std::invalid_argument("alignment: need at least 2 local pairs");
  if (global_pairs.size() == 1) {
    throw std::invalid_argument("alignment: need at least 2 global pairs (or none)");
  }
  for (const auto& p : local_pairs) {
    if (p.entity >= kg.entity_count()) throw std::out_of_range("alignment: pair entity out of range");
  }

  std::vector<std::string> corpus;
  for (const auto& p : local_pairs) corpus.push_back(p.text);
  for (const auto& p : global_pairs) corpus.push_back(p.document);
  Tokenizer tok = Tokenizer::build(corpus, config.vocab_min_count);

  AlignmentModel<float> model(config.graph, config.text, kg.entity_count(), kg.relation_count(),
                              tok.size(), config.seed);
  const AdjacencyIndex index = build_index(kg);
  const LabelResolver resolver = make_resolver(kg);

  Rng root(config.seed);
  Rng shuffle_rng = root.split(1);
  Rng dropout_rng = root.split(2);
  const ForwardMode train_mode{true, &dropout_rng};
  const ForwardMode eval_mode{};

  const std::size_t bl = config.batch_size;
  const std::size_t bg = std::min(config.batch_size, std::max<std::size_t>(global_pairs.size(), 2));
  const bool has_global = !global_pairs.empty();
  const std::size_t nl = make_batches(local_pairs.size(), bl, nullptr).size();
  const std::size_t ng = has_global ? make_batches(global_pairs.size(), bg, nullptr).size() : 0;

  AlignmentMetadata meta;
  meta.seed = config.seed;
  meta.local_epochs = config.local_epochs;
  meta.global_epochs = config.global_epochs;

  auto mean_loss = [&](bool global) {
    const auto batches = global ? make_batches(global_pairs.size(), bg, nullptr)
                                : make_batches(local_pairs.size(), bl, nullptr);
    double s = 0.0;
    for (const auto& b : batches) {
      Var<float> logits = global ? global_logits(model, tok, global_batch(global_pairs, b), &resolver, eval_mode)
                                 : local_logits(model, index, tok, local_batch(local_pairs, b), eval_mode);
      s += contrastive_loss(logits).value().item();
    }
    return batches.empty() ? 0.0 : s / double(batches.size());
  };
  meta.losses.push_back({0, mean_loss(false), has_global ? mean_loss(true) : 0.0});

  std::size_t total_steps = 0;
  if (config.schedule == AlignmentSchedule::Sequential) {
    total_steps = config.local_epochs * nl + (has_global ? config.global_epochs * ng : 0);
  } else {
    total_steps = config.local_epochs * std::max(nl, ng);
  }
  Adam<float> opt(model.parameters(), AdamConfig{config.learning_rate});

  auto step = [&](const Var<float>& loss) {
    model.zero_grad();
    backward(loss);
    opt.step(total_steps);
    model.clamp_temperature();
  };

  if (config.schedule == AlignmentSchedule::Sequential) {
    for (std::size_t e = 1; e <= config.local_epochs; ++e) {
      const auto batches = make_batches(local_pairs.size(), bl, &shuffle_rng);
      double s = 0.0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        Var<float> loss = contrastive_loss(
            local_logits(model, index, tok, local_batch(local_pairs, batches[b]), train_mode));
        check_finite(loss.value().item(), "local", e, b);
        s += loss.value().item();
        step(loss);
      }
      meta.losses.push_back({e, s / double(batches.size()), 0.0});
    }
    if (has_global) {
      for (std::size_t e = 1; e <= config.global_epochs; ++e) {
        const auto batches = make_batches(global_pairs.size(), bg, &shuffle_rng);
        double s = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
          Var<float> loss = contrastive_loss(global_logits(
              model, tok, global_batch(global_pairs, batches[b]), &resolver, train_mode));
          check_finite(loss.value().item(), "global", config.local_epochs + e, b);
          s += loss.value().item();
          step(loss);
        }
        meta.losses.push_back({config.local_epochs + e, 0.0, s / double(batches.size())});
      }
    }
  } else {
    for (std::size_t e = 1; e <= config.local_epochs; ++e) {
      const auto lb = make_batches(local_pairs.size(), bl, &shuffle_rng);
      const auto gb = has_global ? make_batches(global_pairs.size(), bg, &shuffle_rng) : Batches{};
      const std::size_t steps = std::max(lb.size(), gb.size());
      double sl = 0.0, sg = 0.0;
      for (std::size_t b = 0; b < steps; ++b) {
        Var<float> ll = contrastive_loss(
            local_logits(model, index, tok, local_batch(local_pairs, lb[b % lb.size()]), train_mode));
        check_finite(ll.value().item(), "local", e, b);
        sl += ll.value().item();
        Var<float> loss = ll;
        if (has_global) {
          Var<float> lg = contrastive_loss(global_logits(
              model, tok, global_batch(global_pairs, gb[b % gb.size()]), &resolver, train_mode));
          check_finite(lg.value().item(), "global", e, b);
          sg += lg.value().item();
          loss = add(ll, lg);
        }
        step(loss);
      }
      meta.losses.push_back({e, sl / double(steps), sg / double(steps)});
    }
  }

  Tensor<float> table = embed_all(model, kg);
  return AlignmentCheckpoint{config, std::move(tok), std::move(model), std::move(table),
                             std::move(meta)};
}

Tensor<float> embed_all(AlignmentModel<float>& model, const KnowledgeGraph& kg) {
  Subgraph g;
  g.nodes.resize(kg.entity_count());
  std::iota(g.nodes.begin(), g.nodes.end(), EntityId{0});
  g.hop_of.assign(g.nodes.size(), 0);
  g.edges = kg.split.train;
  if (g.nodes.empty()) return Tensor<float>(0, model.graph.dim());
  return l2_normalize_rows(model.graph.encode_graph(g)).value();
}

double local_retrieval(AlignmentModel<float>& model, const KnowledgeGraph& kg,
                       const Tokenizer& tok, const std::vector<NodeDescriptionPair>& pairs,
                       std::size_t batch_size) {
  if (pairs.empty()) return 0.0;
  const AdjacencyIndex index = build_index(kg);
  double hits = 0.0;
  for (const auto& b : make_batches(pairs.size(), std::max<std::size_t>(batch_size, 2), nullptr)) {
    Var<float> logits = local_logits(model, index, tok, local_batch(pairs, b), ForwardMode{});
    hits += retrieval_at_1(logits.value()) * double(b.size());
  }
  return hits / double(pairs.size());
}

nlohmann::json to_json(const AlignmentConfig& c) {
  return {{"graph",
           {{"dim", c.graph.dim},
            {"layers", c.graph.layers},
            {"heads", c.graph.heads},
            {"dropout", c.graph.dropout},
            {"feature_seed", c.graph.feature_seed}}},
          {"text",
           {{"dim", c.text.dim},
            {"layers", c.text.layers},
            {"heads", c.text.heads},
            {"ffn_mult", c.text.ffn_mult},
            {"max_len", c.text.max_len},
            {"dropout", c.text.dropout}}},
          {"local_epochs", c.local_epochs},
          {"global_epochs", c.global_epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"schedule", schedule_name(c.schedule)},
          {"vocab_min_count", c.vocab_min_count},
          {"seed", c.seed}};
}

AlignmentConfig alignment_config_from_json(const nlohmann::json& j) {
  AlignmentConfig c;
  if (j.contains("graph")) {
    const auto& g = j["graph"];
    c.graph.dim = g.value("dim", c.graph.dim);
    c.graph.layers = g.value("layers", c.graph.layers);
    c.graph.heads = g.value("heads", c.graph.heads);
    c.graph.dropout = g.value("dropout", c.graph.dropout);
    c.graph.feature_seed = g.value("feature_seed", c.graph.feature_seed);
  }
  if (j.contains("text")) {
    const auto& t = j["text"];
    c.text.dim = t.value("dim", c.text.dim);
    c.text.layers = t.value("layers", c.text.layers);
    c.text.heads = t.value("heads", c.text.heads);
    c.text.ffn_mult = t.value("ffn_mult", c.text.ffn_mult);
    c.text.max_len = t.value("max_len", c.text.max_len);
    c.text.dropout = t.value("dropout", c.text.dropout);
  }
  c.local_epochs = j.value("local_epochs", c.local_epochs);
  c.global_epochs = j.value("global_epochs", c.global_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  const std::string sched = j.value("schedule", std::string("sequential"));
  if (sched == "sequential") {
    c.schedule = AlignmentSchedule::Sequential;
  } else if (sched == "joint") {
    c.schedule = AlignmentSchedule::Joint;
  } else {
    throw std::invalid_argument("unknown alignment schedule: " + sched);
  }
  c.vocab_min_count = j.value("vocab_min_count", c.vocab_min_count);
  c.seed = j.value("seed", c.seed);
  return c;
}

void save_alignment(const std::filesystem::path& dir, const AlignmentCheckpoint& ckpt) {
  std::filesystem::create_directories(dir);
  Parameter<float> table("alignment.embeddings", ckpt.embeddings);
  auto params = ckpt.model.parameters();
  params.push_back(&table);
  save_checkpoint(dir / "alignment.bin", params);
  ckpt.tokenizer.save(dir / "vocab.tsv");

  nlohmann::ordered_json meta;
  meta["config"] = to_json(ckpt.config);
  meta["entities"] = ckpt.embeddings.rows();
  meta["relations"] = ckpt.model.graph.parameters()[1]->value().rows();
  meta["vocab_size"] = ckpt.tokenizer.size();
  meta["seed"] = ckpt.metadata.seed;
  meta["local_epochs"] = ckpt.metadata.local_epochs;
  meta["global_epochs"] = ckpt.metadata.global_epochs;
  auto& losses = meta["losses"] = nlohmann::ordered_json::array();
  for (const auto& l : ckpt.metadata.losses) {
    losses.push_back({{"epoch", l.epoch}, {"local", l.local}, {"global", l.global}});
  }
  std::ofstream out(dir / "alignment.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "alignment.json").string());
  out << meta.dump(2) << '\n';
}

AlignmentCheckpoint load_alignment(const std::filesystem::path& dir) {
  const auto json_path = dir / "alignment.json";
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw std::runtime_error("missing alignment checkpoint: " + json_path.string());
  const nlohmann::json meta = nlohmann::json::parse(in);
  const AlignmentConfig config = alignment_config_from_json(meta.at("config"));
  Tokenizer tok = Tokenizer::load(dir / "vocab.tsv");
  NamedTensors tensors = load_checkpoint(dir / "alignment.bin");

  auto rows_of = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("alignment checkpoint lacks " + name);
    return it->second.rows();
  };
  AlignmentModel<float> model(config.graph, config.text, rows_of("graph.node_features"),
                              rows_of("graph.relations"), rows_of("text.tokens"), config.seed);
  auto table = tensors.find("alignment.embeddings");
  if (table == tensors.end()) throw CheckpointError("alignment checkpoint lacks embeddings");
  Tensor<float> embeddings = std::move(table->second);
  tensors.erase(table);
  assign_parameters(tensors, model.parameters());

  AlignmentMetadata md;
  md.seed = meta.value("seed", config.seed);
  md.local_epochs = meta.value("local_epochs", config.local_epochs);
  md.global_epochs = meta.value("global_epochs", config.global_epochs);
  for (const auto& l : meta.value("losses", nlohmann::json::array())) {
    md.losses.push_back({l.at("epoch").get<std::size_t>(), l.at("local").get<double>(),
                         l.at("global").get<double>()});
  }
  return AlignmentCheckpoint{config, std::move(tok), std::move(model), std::move(embeddings),
                             std::move(md)};
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& losses) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,L_local,L_global,L_HKA\n" << std::setprecision(9);
  for (const auto& l : losses) {
    out << l.epoch << ',' << l.local << ',' << l.global << ',' << l.total() << '\n';
  }
}

}  // namespace kgalign
