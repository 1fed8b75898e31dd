#pragma once

// Gradient checks for every differentiable op, the encoders, the adapter
// under the mock backend and the full alignment objective. One call runs the
// whole set for one seed; shapes and values are drawn from the seed.

#include <string>
#include <utility>
#include <vector>

#include "kgalign/alignment.hpp"
#include "kgalign/llm_bridge.hpp"
#include "support/builders.hpp"
#include "support/fd.hpp"

namespace kgtest {

using FdCase = std::pair<std::string, FdResult>;

namespace detail {

template <class P>
using scalar_of = std::decay_t<decltype(std::declval<P&>()[0].value()[0])>;

inline std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

}  // namespace detail

inline std::vector<FdCase> fd_op_cases(std::uint64_t seed) {
  using namespace kgalign;
  Rng rng = Rng(seed).split(1);
  std::vector<FdCase> out;
  const std::size_t r = detail::between(rng, 2, 5), c = detail::between(rng, 2, 6),
                    k = detail::between(rng, 2, 5);
  const Tensor<double> W = random_tensor(rng, r, c);
  const Tensor<double> W1c = random_tensor(rng, 1, c);
  auto add = [&](std::string name, const std::vector<Tensor<double>>& init, auto probe) {
    out.emplace_back(std::move(name), fd_probe(init, probe, rng.next_u64()));
  };
  auto w = [](const Tensor<double>& t, auto tag) { return t.cast<decltype(tag)>(); };

  add("matmul", {random_tensor(rng, r, k), random_tensor(rng, k, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(matmul(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("matmul_nt", {random_tensor(rng, r, k), random_tensor(rng, c, k)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(matmul_nt(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("transpose", {random_tensor(rng, c, r)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(transpose(leaf(P[0])), w(W, T{}));
  });
  add("add", {random_tensor(rng, r, c), random_tensor(rng, r, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(kgalign::add(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("sub", {random_tensor(rng, r, c), random_tensor(rng, r, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(sub(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("mul", {random_tensor(rng, r, c), random_tensor(rng, r, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(mul(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("add_row", {random_tensor(rng, r, c), random_tensor(rng, 1, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(add_row(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("scale", {random_tensor(rng, r, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(scale(leaf(P[0]), T(0.7)), w(W, T{}));
  });
  add("mul_scalar", {random_tensor(rng, r, c), random_tensor(rng, 1, 1)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(mul_scalar(leaf(P[0]), leaf(P[1])), w(W, T{}));
  });
  add("exp", {random_tensor(rng, r, c, 0.5)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(kgalign::exp(leaf(P[0])), w(W, T{}));
  });
  add("gelu", {random_tensor(rng, r, c, 1.5)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(gelu(leaf(P[0])), w(W, T{}));
  });
  add("sum", {random_tensor(rng, r, c)}, [&](auto& P) {
    return kgalign::sum(mul(leaf(P[0]), leaf(P[0])));
  });
  add("l2_normalize_rows", {random_tensor(rng, r, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(l2_normalize_rows(leaf(P[0])), w(W, T{}));
  });
  add("mean_pool_rows", {random_tensor(rng, r, c)}, [&](auto& P) {
    using T = detail::scalar_of<decltype(P)>;
    return dot_const(mean_pool_rows(leaf(P[0])), w(W1c, T{}));
  });
  {
    const std::vector<std::size_t> offsets{0, 1, r + 1, r + 3};
    const Tensor<double> W3 = random_tensor(rng, 3, c);
    add("segment_mean_rows", {random_tensor(rng, r + 3, c)}, [&, offsets, W3](auto& P) {
      using T = detail::scalar_of<decltype(P)>;
      return dot_const(segment_mean_rows(leaf(P[0]), std::span<const std::size_t>(offsets)), w(W3, T{}));
    });
  }
  {
    Tensor<double> gain = random_tensor(rng, 1, c, 0.3);
    for (auto& v : gain.values()) v += 1.0;
    add("layer_norm_rows", {random_tensor(rng, r, c), gain, random_tensor(rng, 1, c, 0.3)}, [&](auto& P) {
      using T = detail::scalar_of<decltype(P)>;
      return dot_const(layer_norm_rows(leaf(P[0]), leaf(P[1]), leaf(P[2])), w(W, T{}));
    });
  }
  {
    std::vector<std::size_t> targets(r);
    for (auto& t : targets) t = rng.uniform_index(c);
    add("softmax_ce_rows", {random_tensor(rng, r, c, 2.0)}, [targets](auto& P) {
      return softmax_ce_rows(leaf(P[0]), std::span<const std::size_t>(targets));
    });
  }
  {
    const std::vector<std::size_t> index{0, r - 1, 0, 1};
    const Tensor<double> W4 = random_tensor(rng, index.size(), c);
    add("select_rows", {random_tensor(rng, r, c)}, [&, index, W4](auto& P) {
      using T = detail::scalar_of<decltype(P)>;
      return dot_const(select_rows(leaf(P[0]), std::span<const std::size_t>(index)), w(W4, T{}));
    });
  }
  {
    const Tensor<double> Wcat = random_tensor(rng, r + 2, c);
    add("concat_rows", {random_tensor(rng, r, c), random_tensor(rng, 2, c)}, [&, Wcat](auto& P) {
      using T = detail::scalar_of<decltype(P)>;
      return dot_const(concat_rows(std::vector<Var<T>>{leaf(P[0]), leaf(P[1])}), w(Wcat, T{}));
    });
  }
  {
    const std::vector<std::int64_t> index{1, -1, 0, 1};
    const Tensor<double> fallback = random_tensor(rng, index.size(), c);
    const Tensor<double> W4 = random_tensor(rng, index.size(), c);
    add("embed_rows", {random_tensor(rng, 3, c)}, [&, index, fallback, W4](auto& P) {
      using T = detail::scalar_of<decltype(P)>;
      const Tensor<T> fb = fallback.cast<T>();
      return dot_const(embed_rows(P[0], std::span<const std::int64_t>(index), &fb), w(W4, T{}));
    });
  }
  {
    const std::uint64_t mask_seed = rng.next_u64();
    add("dropout", {random_tensor(rng, r, c)}, [&, mask_seed](auto& P) {
      using T = detail::scalar_of<decltype(P)>;
      Rng mask(mask_seed);
      return dot_const(dropout(leaf(P[0]), 0.3, mask, true), w(W, T{}));
    });
  }
  {
    const std::size_t n = detail::between(rng, 2, 5), heads = 2, d = 4, rels = 2;
    AttentionPattern pattern;
    for (std::size_t i = 0; i < n; ++i) {
      pattern.add(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (rng.uniform() < 0.5) pattern.add(j, static_cast<std::int64_t>(rng.uniform_index(rels + 1)) - 1);
      }
      pattern.close_row();
    }
    const Tensor<double> Wn = random_tensor(rng, n, d);
    add("sparse_attention",
        {random_tensor(rng, n, d), random_tensor(rng, n, d), random_tensor(rng, n, d),
         random_tensor(rng, rels, d), random_tensor(rng, rels, d)},
        [&, pattern, Wn](auto& P) {
          using T = detail::scalar_of<decltype(P)>;
          return dot_const(sparse_attention(leaf(P[0]), leaf(P[1]), leaf(P[2]), leaf(P[3]), leaf(P[4]),
                                            pattern, heads),
                           w(Wn, T{}));
        });
  }
  add("similarity+contrastive_loss",
      {random_tensor(rng, r, c), random_tensor(rng, r, c), random_tensor(rng, 1, 1, 0.5)}, [&](auto& P) {
        return contrastive_loss(
            similarity(l2_normalize_rows(leaf(P[0])), l2_normalize_rows(leaf(P[1])), leaf(P[2])));
      });
  return out;
}

// Encoders, adapter and the full hierarchical alignment loss on small
// random instances.
inline std::vector<FdCase> fd_model_cases(std::uint64_t seed) {
  using namespace kgalign;
  Rng rng = Rng(seed).split(2);
  std::vector<FdCase> out;

  GraphEncoderConfig gcfg;
  gcfg.dim = 8;
  gcfg.heads = 2;
  gcfg.layers = 2;
  gcfg.feature_seed = rng.next_u64();
  TextEncoderConfig tcfg;
  tcfg.dim = 8;
  tcfg.heads = 2;
  tcfg.layers = 1;
  tcfg.max_len = 16;

  Rng kg_rng = rng.split(3);
  KnowledgeGraph kg = random_kg(kg_rng, 6, 8, 2);
  const AdjacencyIndex index = build_index(kg);

  {
    GraphEncoder<float> gf(gcfg, kg.entity_count(), kg.relation_count());
    auto gd = gf.cast<double>();
    const std::vector<EntityId> anchors{0, 1};
    const Subgraph g = extract_khop(index, anchors, 2, kUnlimitedNodes);
    const Tensor<double> W = random_tensor(rng, g.nodes.size(), gcfg.dim);
    out.emplace_back("graph_encoder",
                     fd_compare(
                         gf.parameters(),
                         [&] { return dot_const(gf.encode_graph(g), W.cast<float>()); },
                         gd.parameters(), [&] { return dot_const(gd.encode_graph(g), W); },
                         rng.next_u64()));
  }
  {
    TextEncoder<float> tf(tcfg, 10, rng.next_u64());
    auto td = tf.cast<double>();
    const std::vector<std::vector<std::uint32_t>> seqs{{1, 4, 2, 9}, {3}, {5, 5, 7}};
    const Tensor<double> W = random_tensor(rng, seqs.size(), tcfg.dim);
    out.emplace_back("text_encoder",
                     fd_compare(
                         tf.parameters(),
                         [&] { return dot_const(tf.encode_sequences(seqs), W.cast<float>()); },
                         td.parameters(), [&] { return dot_const(td.encode_sequences(seqs), W); },
                         rng.next_u64()));
  }
  {
    // Full objective: local batch over the KG plus a global batch of two
    // extraction-style subgraphs, through the shared encoders.
    std::vector<std::string> texts;
    for (EntityId e = 0; e < kg.entity_count(); ++e) texts.push_back("entity number " + std::to_string(e % 3) + " alpha");
    texts.push_back("document about alpha and number");
    texts.push_back("another document");
    const Tokenizer tok = Tokenizer::build(texts, 1);
    AlignmentModel<float> mf(gcfg, tcfg, kg.entity_count(), kg.relation_count(), tok.size(), rng.next_u64());
    mf.tau.value()[0] = 0.3f;
    auto md = mf.cast<double>();
    LocalBatch batch;
    for (EntityId e = 0; e < 4; ++e) {
      batch.entities.push_back(e);
      batch.texts.push_back(texts[e]);
    }
    SubgraphDocumentPair p1{subgraph_from_triples({{"e0", "r0", "e1"}, {"e1", "r1", "x"}}), texts[6]};
    SubgraphDocumentPair p2{subgraph_from_triples({{"y", "r0", "e2"}}), texts[7]};
    const std::vector<const SubgraphDocumentPair*> global{&p1, &p2};
    const LabelResolver resolver = make_resolver(kg);
    auto loss = [&](auto& m) {
      const ForwardMode mode;
      return add(contrastive_loss(local_logits(m, index, tok, batch, mode)),
                 contrastive_loss(global_logits(m, tok, global, &resolver, mode)));
    };
    out.emplace_back("alignment_objective",
                     fd_compare(
                         mf.parameters(), [&] { return loss(mf); }, md.parameters(),
                         [&] { return loss(md); }, rng.next_u64()));
  }
  {
    // Adapter weights through the mock backend's closed-form slot gradient.
    // The loss is scored in double from float slots, so the numerical side
    // uses a wider step.
    MockConfig mc;
    mc.slot_dim = 6;
    mc.feature_dim = 32;
    mc.lp_candidates = {"e0", "e1", "e2", "e3"};
    MockBackend backend(mc);
    KnowledgeAdapter<float> adapter(8, mc.slot_dim, rng.next_u64(), 12);
    Prompt prompt;
    prompt.task = TaskKind::LinkPrediction;
    prompt.question = "(e0, r1, ?)";
    prompt.user_text = "Given a question:(e0, r1, ?) with <gemb_0>, <gemb_1>, <gemb_2>";
    prompt.slots = {"<gemb_0>", "<gemb_1>", "<gemb_2>"};
    prompt.slot_labels = {"e0", "e4", "e5"};
    const Tensor<float> embs = random_tensor(rng, 3, 8).cast<float>();
    auto nll = [&] { return backend.score(prompt, adapter.adapt(embs), "e2").nll; };
    for (auto* p : adapter.parameters()) p->zero_grad();
    {
      Var<float> slots = adapter.forward(constant(embs));
      const ScoreResult sr = backend.score(prompt, slots.value(), "e2");
      backward(dot_const(slots, sr.slot_grad));
    }
    FdResult res;
    const double eps = 1e-2;
    for (auto* p : adapter.parameters()) {
      double diff = 0, na = 0, nn = 0;
      for (std::size_t i = 0; i < p->value().size(); i += 1 + p->value().size() / 24) {
        float& v = p->value()[i];
        const float saved = v;
        v = saved + float(eps);
        const double up = nll();
        const double hi = v;
        v = saved - float(eps);
        const double down = nll();
        const double lo = v;
        v = saved;
        const double num = (up - down) / (hi - lo);
        const double ana = p->grad()[i];
        diff += (ana - num) * (ana - num);
        na += ana * ana;
        nn += num * num;
      }
      const double den = std::max(std::sqrt(na), std::sqrt(nn));
      const double err = den < 1e-7 ? std::sqrt(diff) : std::sqrt(diff) / den;
      if (res.worst.empty() || err > res.rel_err) res = {err, p->name()};
    }
    out.emplace_back("adapter_under_mock_score", res);

    // Slot gradient of the mock score itself.
    Tensor<float> slots = adapter.adapt(embs);
    const ScoreResult sr = backend.score(prompt, slots, "e2");
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const float saved = slots[i];
      slots[i] = saved + 1e-3f;
      const double hi = slots[i];
      const double up = backend.score(prompt, slots, "e2").nll;
      slots[i] = saved - 1e-3f;
      const double lo = slots[i];
      const double down = backend.score(prompt, slots, "e2").nll;
      slots[i] = saved;
      const double num = (up - down) / (hi - lo);
      diff += (sr.slot_grad[i] - num) * (sr.slot_grad[i] - num);
      na += double(sr.slot_grad[i]) * sr.slot_grad[i];
      nn += num * num;
    }
    const double den = std::max(std::sqrt(na), std::sqrt(nn));
    out.emplace_back("mock_score_slots",
                     FdResult{den < 1e-7 ? std::sqrt(diff) : std::sqrt(diff) / den, "slots"});
  }
  return out;
}

inline std::vector<FdCase> fd_all_cases(std::uint64_t seed) {
  auto ops = fd_op_cases(seed);
  auto models = fd_model_cases(seed);
  ops.insert(ops.end(), models.begin(), models.end());
  return ops;
}

}  // namespace kgtest
