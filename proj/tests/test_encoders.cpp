#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "kgalign/encoders.hpp"
#include "support/builders.hpp"

using namespace kgalign;

namespace {

GraphEncoderConfig small_graph_cfg(std::size_t layers = 2) {
  GraphEncoderConfig c;
  c.dim = 16;
  c.heads = 4;
  c.layers = layers;
  c.dropout = 0.1;
  return c;
}

TextEncoderConfig small_text_cfg() {
  TextEncoderConfig c;
  c.dim = 16;
  c.heads = 2;
  c.layers = 2;
  return c;
}

Subgraph whole(const KnowledgeGraph& kg) {
  Subgraph g;
  for (EntityId e = 0; e < kg.entity_count(); ++e) {
    g.nodes.push_back(e);
    g.hop_of.push_back(0);
  }
  g.anchors = {0};
  g.edges = kg.split.train;
  return g;
}

void expect_rows_near(const Tensor<float>& a, std::size_t ra, const Tensor<float>& b, std::size_t rb,
                      double tol) {
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) EXPECT_NEAR(a(ra, j), b(rb, j), tol) << "col " << j;
}

}  // namespace

// --- Tokenizer ------------------------------------------------------------------

TEST(Tokenizer, SplitsLowercasesAndKeepsNonAscii) {
  EXPECT_EQ(Tokenizer::split("Hello, World! x2 caf\xc3\xa9"),
            (std::vector<std::string>{"hello", "world", "x2", "caf\xc3\xa9"}));
  EXPECT_TRUE(Tokenizer::split(" ,.;").empty());
}

TEST(Tokenizer, RareTokensShareOov) {
  const auto tok = Tokenizer::build({"red fox", "red dog", "blue"}, 2);
  EXPECT_EQ(tok.size(), 2u);
  EXPECT_EQ(tok.token(0), "<oov>");
  EXPECT_EQ(tok.token(1), "red");
  EXPECT_EQ(tok.encode("RED fox"), (std::vector<std::uint32_t>{1, 0}));
  EXPECT_EQ(tok.encode("..."), (std::vector<std::uint32_t>{Tokenizer::kOov}));
}

TEST(Tokenizer, TruncatesLongTexts) {
  std::string text;
  for (int i = 0; i < 300; ++i) text += "w" + std::to_string(i % 7) + " ";
  const auto tok = Tokenizer::build({text}, 1);
  EXPECT_EQ(tok.encode(text).size(), kMaxTextTokens);
  EXPECT_EQ(tok.encode(text, 10).size(), 10u);
}

TEST(Tokenizer, SaveLoadRoundTrip) {
  const auto tok = Tokenizer::build({"alpha beta beta gamma alpha"}, 1);
  const auto dir = kgtest::temp_dir("tok");
  tok.save(dir / "vocab.tsv");
  const auto back = Tokenizer::load(dir / "vocab.tsv");
  ASSERT_EQ(back.size(), tok.size());
  for (std::uint32_t i = 0; i < tok.size(); ++i) EXPECT_EQ(back.token(i), tok.token(i));
  EXPECT_EQ(back.encode("gamma alpha zzz"), tok.encode("gamma alpha zzz"));
  kgtest::write_file(dir / "bad.tsv", "x\t0\n");
  EXPECT_THROW(Tokenizer::load(dir / "bad.tsv"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

// --- Attention ------------------------------------------------------------------

TEST(SparseAttention, MatchesHandComputation) {
  // One head, two nodes attending to both; node 0 also sees a relation term.
  auto q = constant(Tensor<double>::from_rows({{1, 0}, {0, 2}}));
  auto k = constant(Tensor<double>::from_rows({{1, 1}, {-1, 0}}));
  auto v = constant(Tensor<double>::from_rows({{2, 0}, {0, 4}}));
  auto rk = constant(Tensor<double>::from_rows({{0.5, 0}}));
  auto rv = constant(Tensor<double>::from_rows({{1, 1}}));
  AttentionPattern p;
  p.add(0);
  p.add(1, 0);
  p.close_row();
  p.add(0);
  p.add(1);
  p.close_row();
  const auto out = sparse_attention(q, k, v, rk, rv, p, 1).value();
  const double s = 1.0 / std::sqrt(2.0);
  // Row 0: scores <q0,k0> = 1, <q0,k1+rk0> = -0.5.
  double a = std::exp(1.0 * s), b = std::exp(-0.5 * s);
  EXPECT_NEAR(out(0, 0), (a * 2 + b * 1) / (a + b), 1e-12);
  EXPECT_NEAR(out(0, 1), (a * 0 + b * 5) / (a + b), 1e-12);
  // Row 1: scores 2 and 0.
  a = std::exp(2.0 * s);
  b = std::exp(0.0);
  EXPECT_NEAR(out(1, 0), (a * 2) / (a + b), 1e-12);
  EXPECT_NEAR(out(1, 1), (b * 4) / (a + b), 1e-12);
}

TEST(SparseAttention, RejectsBadShapes) {
  auto q = constant(Tensor<double>(2, 4));
  auto kv = constant(Tensor<double>(2, 4));
  EXPECT_THROW(sparse_attention(q, kv, kv, Var<double>(), Var<double>(), AttentionPattern::complete(2), 3),
               ShapeError);
  EXPECT_THROW(sparse_attention(q, kv, kv, Var<double>(), Var<double>(), AttentionPattern::complete(3), 2),
               ShapeError);
}

// --- Graph encoder ----------------------------------------------------------------

TEST(GraphEncoder, ConfigValidation) {
  auto c = small_graph_cfg();
  c.heads = 3;
  EXPECT_THROW(GraphEncoder<float>(c, 4, 1), std::invalid_argument);
  c = small_graph_cfg();
  c.dropout = 1.0;
  EXPECT_THROW(GraphEncoder<float>(c, 4, 1), std::invalid_argument);
}

TEST(GraphEncoder, SameSeedSameWeightsAndOutputs) {
  Rng rng(4);
  const auto kg = kgtest::random_kg(rng, 12, 20, 3);
  GraphEncoder<float> a(small_graph_cfg(), 12, 3), b(small_graph_cfg(), 12, 3);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value(), pb[i]->value()) << pa[i]->name();
  EXPECT_EQ(a.encode_graph(whole(kg)).value(), b.encode_graph(whole(kg)).value());
  auto c = small_graph_cfg();
  c.feature_seed = 2;
  GraphEncoder<float> other(c, 12, 3);
  EXPECT_NE(other.encode_graph(whole(kg)).value(), a.encode_graph(whole(kg)).value());
}

TEST(GraphEncoder, PermutationEquivariant) {
  Rng rng(8);
  const auto kg = kgtest::random_kg(rng, 10, 18, 2);
  GraphEncoder<float> enc(small_graph_cfg(), 10, 2);
  const auto g = whole(kg);
  const auto base = enc.encode_graph(g).value();
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(perm);
    Subgraph p = g;
    for (std::size_t i = 0; i < 10; ++i) p.nodes[i] = g.nodes[perm[i]];
    rng.shuffle(p.edges);
    const auto out = enc.encode_graph(p).value();
    for (std::size_t i = 0; i < 10; ++i) expect_rows_near(out, i, base, perm[i], 1e-5);
  }
}

TEST(GraphEncoder, ReceptiveFieldIsLayerCount) {
  // Chain n0 - n1 - ... - n5; two layers let n0 see n1 and n2 only.
  std::vector<std::array<std::string, 3>> t;
  for (int i = 0; i < 5; ++i) t.push_back({"n" + std::to_string(i), "next", "n" + std::to_string(i + 1)});
  const auto kg = kgtest::kg_from(t);
  GraphEncoder<float> enc(small_graph_cfg(2), 6, 1);
  const auto g = whole(kg);
  Subgraph cut = g;
  cut.edges.pop_back();  // drop n4 - n5
  const auto full = enc.encode_graph(g).value();
  const auto trimmed = enc.encode_graph(cut).value();
  expect_rows_near(full, 0, trimmed, 0, 1e-6);
  expect_rows_near(full, 1, trimmed, 1, 1e-6);
  double diff = 0;
  for (std::size_t j = 0; j < full.cols(); ++j) diff += std::abs(full(4, j) - trimmed(4, j));
  EXPECT_GT(diff, 1e-4);
}

TEST(GraphEncoder, SubgraphEmbeddingIsMeanOfNodeRows) {
  Rng rng(5);
  const auto kg = kgtest::random_kg(rng, 7, 10, 2);
  GraphEncoder<float> enc(small_graph_cfg(), 7, 2);
  const auto rows = enc.encode_graph(whole(kg)).value();
  const auto pooled = enc.encode_subgraph(whole(kg)).value();
  ASSERT_EQ(pooled.rows(), 1u);
  for (std::size_t j = 0; j < rows.cols(); ++j) {
    double s = 0;
    for (std::size_t i = 0; i < rows.rows(); ++i) s += rows(i, j);
    EXPECT_NEAR(pooled(0, j), s / 7.0, 1e-5);
  }
  EXPECT_THROW(enc.encode_subgraph(Subgraph{}), std::invalid_argument);
}

TEST(GraphEncoder, LocalSubgraphsResolveOrFallBack) {
  auto kg = kgtest::kg_from({{"Paris", "capital_of", "France"}});
  GraphEncoder<float> enc(small_graph_cfg(1), 2, 1);
  LabelResolver resolver;
  resolver.entities = {{"Paris", 0}, {"France", 1}};
  resolver.relations = {{"capital_of", 0}};
  const auto local = subgraph_from_triples({{"Paris", "capital_of", "France"}});
  Subgraph global = whole(kg);
  EXPECT_EQ(enc.encode_graph(local, {}, &resolver).value(), enc.encode_graph(global).value());
  // Unknown labels get fixed hashed features: deterministic, and different
  // from the resolved rows.
  const auto a = enc.encode_graph(local).value();
  EXPECT_EQ(a, enc.encode_graph(local).value());
  EXPECT_NE(a, enc.encode_graph(global).value());
}

TEST(GraphEncoder, DropoutOnlyInTraining) {
  Rng rng(6);
  const auto kg = kgtest::random_kg(rng, 6, 8, 2);
  GraphEncoder<float> enc(small_graph_cfg(), 6, 2);
  Rng r1(1), r2(1), r3(2);
  const auto infer = enc.encode_graph(whole(kg)).value();
  const auto t1 = enc.encode_graph(whole(kg), ForwardMode{true, &r1}).value();
  const auto t2 = enc.encode_graph(whole(kg), ForwardMode{true, &r2}).value();
  const auto t3 = enc.encode_graph(whole(kg), ForwardMode{true, &r3}).value();
  EXPECT_EQ(t1, t2);
  EXPECT_NE(t1, infer);
  EXPECT_NE(t1, t3);
}

// --- Text encoder -----------------------------------------------------------------

TEST(TextEncoder, DeterministicAndCaseInsensitive) {
  const auto tok = Tokenizer::build({"The red fox", "the blue fox", "red blue"}, 1);
  TextEncoder<float> a(small_text_cfg(), tok.size(), 3), b(small_text_cfg(), tok.size(), 3);
  EXPECT_EQ(a.encode_text(tok, "the red fox").value(), b.encode_text(tok, "the red fox").value());
  EXPECT_EQ(a.encode_text(tok, "THE Red FOX").value(), a.encode_text(tok, "the red fox").value());
  EXPECT_NE(a.encode_text(tok, "the blue fox").value(), a.encode_text(tok, "the red fox").value());
  TextEncoder<float> c(small_text_cfg(), tok.size(), 4);
  EXPECT_NE(c.encode_text(tok, "the red fox").value(), a.encode_text(tok, "the red fox").value());
}

TEST(TextEncoder, BatchRowsMatchSingleEncodings) {
  const std::vector<std::string> texts{"red fox", "a much longer text about a blue fox", "fox"};
  const auto tok = Tokenizer::build(texts, 1);
  TextEncoder<float> enc(small_text_cfg(), tok.size(), 9);
  const auto batch = enc.encode_batch(tok, texts).value();
  ASSERT_EQ(batch.rows(), 3u);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    expect_rows_near(batch, i, enc.encode_text(tok, texts[i]).value(), 0, 1e-5);
  }
  EXPECT_THROW(enc.encode_batch(tok, {}), std::invalid_argument);
}

TEST(TextEncoder, TokensPastTheLimitAreIgnored) {
  std::string prefix, text;
  for (int i = 0; i < 300; ++i) {
    const std::string w = "w" + std::to_string(i % 11) + " ";
    if (i < int(kMaxTextTokens)) prefix += w;
    text += w;
  }
  const auto tok = Tokenizer::build({text}, 1);
  TextEncoder<float> enc(small_text_cfg(), tok.size(), 1);
  EXPECT_EQ(enc.encode_text(tok, text).value(), enc.encode_text(tok, prefix).value());
}
