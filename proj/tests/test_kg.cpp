#include <gtest/gtest.h>

#include <map>
#include <set>

#include "kgalign/kg.hpp"
#include "support/builders.hpp"

using namespace kgalign;
namespace fs = std::filesystem;

namespace {

class DatasetDir : public ::testing::Test {
 protected:
  void SetUp() override { dir = kgtest::temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name()); }
  void TearDown() override { fs::remove_all(dir); }
  void put(const std::string& name, const std::string& text) { kgtest::write_file(dir / name, text); }
  fs::path dir;
};

}  // namespace

TEST_F(DatasetDir, LoadsSplitsNamesAndDescriptions) {
  put("train.tsv", "/m/a\tknows\t/m/b\n/m/b\tknows\t/m/c\n\n/m/a\tknows\t/m/b\n");
  put("valid.tsv", "/m/c\tknows\t/m/a\n");
  put("test.tsv", "/m/a\tknows\t/m/c\n");
  put("test_labels.txt", "1\n");
  put("entity_names.tsv", "/m/a\tAda\n/m/b\t  \n");
  put("entity_descriptions.tsv", "/m/a\tFirst line\\nsecond\\tcol\n/m/zzz\tignored\n");
  DatasetStats st;
  const auto kg = load_dataset(dir, {}, &st);
  EXPECT_EQ(kg.entity_count(), 3u);
  EXPECT_EQ(kg.relation_count(), 1u);
  EXPECT_EQ(kg.entities.surface(0), "/m/a");
  EXPECT_EQ(kg.entities.surface(2), "/m/c");
  EXPECT_EQ(kg.split.train.size(), 2u);
  EXPECT_EQ(st.duplicates_dropped, 1u);
  EXPECT_EQ((kg.split.valid[0]), (Triple{2, 0, 0}));
  ASSERT_TRUE(kg.split.test_labels.has_value());
  EXPECT_EQ(*kg.split.test_labels, std::vector<bool>{true});
  EXPECT_FALSE(kg.split.valid_labels.has_value());
  EXPECT_EQ(kg.name(0), "Ada");
  EXPECT_EQ(kg.name(1), "/m/b");  // blank name falls back to the surface
  EXPECT_EQ(kg.name(2), "/m/c");
  EXPECT_EQ(kg.descriptions[0], "First line\nsecond\tcol");
  EXPECT_EQ(description_of(kg, 0), "First line\nsecond\tcol");
  EXPECT_EQ(description_of(kg, 1), "/m/b");
  EXPECT_EQ(st.described_entities, 1u);
  EXPECT_EQ(st.train, 2u);
  EXPECT_EQ(st.valid, 1u);
  EXPECT_EQ(st.test, 1u);
}

TEST_F(DatasetDir, MissingTrainIsAnError) {
  EXPECT_THROW(load_dataset(dir), DatasetError);
}

TEST_F(DatasetDir, EmptyTrainIsAnError) {
  put("train.tsv", "\n\n");
  EXPECT_THROW(load_dataset(dir), DatasetError);
}

TEST_F(DatasetDir, WrongColumnCountReportsFileAndLine) {
  put("train.tsv", "a\tr\tb\na\tr\n");
  try {
    load_dataset(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("train.tsv:2"), std::string::npos);
  }
}

TEST_F(DatasetDir, EmptyColumnIsAParseError) {
  put("train.tsv", "a\t\tb\n");
  EXPECT_THROW(load_dataset(dir), ParseError);
}

TEST_F(DatasetDir, UnseenEntityRejectedUnlessAllowed) {
  put("train.tsv", "a\tr\tb\n");
  put("test.tsv", "a\tr\tnew\n");
  EXPECT_THROW(load_dataset(dir), DatasetError);
  DatasetStats st;
  const auto kg = load_dataset(dir, LoadOptions{true}, &st);
  EXPECT_EQ(kg.entity_count(), 3u);
  EXPECT_EQ(st.unseen_entities, 1u);
  EXPECT_EQ(kg.name(2), "new");
}

TEST_F(DatasetDir, UnknownRelationRejected) {
  put("train.tsv", "a\tr\tb\n");
  put("valid.tsv", "a\tq\tb\n");
  EXPECT_THROW(load_dataset(dir), DatasetError);
}

TEST_F(DatasetDir, OverlappingSplitsRejected) {
  put("train.tsv", "a\tr\tb\n");
  put("test.tsv", "a\tr\tb\n");
  EXPECT_THROW(load_dataset(dir), DatasetError);
}

TEST_F(DatasetDir, LabelCountMismatchAndBadLabel) {
  put("train.tsv", "a\tr\tb\n");
  put("test.tsv", "b\tr\ta\n");
  put("test_labels.txt", "1\n0\n");
  EXPECT_THROW(load_dataset(dir), DatasetError);
  put("test_labels.txt", "maybe\n");
  EXPECT_THROW(load_dataset(dir), ParseError);
  put("test_labels.txt", "false\n");
  EXPECT_EQ(*load_dataset(dir).split.test_labels, std::vector<bool>{false});
}

TEST_F(DatasetDir, LiteralTabInDescriptionRejected) {
  put("train.tsv", "a\tr\tb\n");
  put("entity_descriptions.tsv", "a\tone\ttwo\n");
  EXPECT_THROW(load_dataset(dir), ParseError);
}

TEST(Kg, EscapeRoundTrip) {
  for (std::string s : {"", "plain", "tab\there", "nl\nthere", "back\\slash", "\\t literal"}) {
    EXPECT_EQ(unescape_field(escape_field(s)), s);
    EXPECT_EQ(escape_field(s).find('\t'), std::string::npos);
    EXPECT_EQ(escape_field(s).find('\n'), std::string::npos);
  }
}

TEST(Kg, NodePairsUseDescriptionOrName) {
  auto kg = kgtest::kg_from({{"a", "r", "b"}});
  kg.descriptions[1] = "about b";
  const auto pairs = build_node_pairs(kg);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], (NodeDescriptionPair{0, "a"}));
  EXPECT_EQ(pairs[1], (NodeDescriptionPair{1, "about b"}));
}

// --- Corruption ---------------------------------------------------------------

TEST(Corruption, OnlyOneValidTailIsForced) {
  // Every tail of (e0, r0, ?) is known except e2.
  auto kg = kgtest::kg_from({{"e0", "r0", "e0"}, {"e0", "r0", "e1"}, {"e2", "r0", "e3"}, {"e0", "r0", "e3"}});
  kg.split.test.push_back(Triple{0, 0, 0});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Triple c = corrupt_triple(kg, Triple{0, 0, 1}, seed);
    EXPECT_EQ(c, (Triple{0, 0, 2}));
  }
}

TEST(Corruption, SaturatedPairIsAnError) {
  auto kg = kgtest::kg_from({{"a", "r", "a"}, {"a", "r", "b"}});
  EXPECT_THROW(corrupt_triple(kg, Triple{0, 0, 0}, 1), DatasetError);
}

TEST(Corruption, DeterministicPerSeedAndNeverKnown) {
  Rng rng(11);
  const auto kg = kgtest::random_kg(rng, 40, 300, 3);
  const auto known = kg.all_triples();
  std::map<EntityId, std::size_t> hist;
  const Triple q = kg.split.train[0];
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const Triple c = corrupt_triple(kg, known, q, seed);
    EXPECT_EQ(c, corrupt_triple(kg, known, q, seed));
    ASSERT_EQ(c.h, q.h);
    ASSERT_EQ(c.r, q.r);
    ASSERT_FALSE(known.count(c));
    ++hist[c.t];
  }
  // Every valid tail shows up; uniform draws over ~37 tails, 10k samples.
  std::size_t valid = 0;
  for (EntityId e = 0; e < 40; ++e) valid += !known.count(Triple{q.h, q.r, e});
  EXPECT_EQ(hist.size(), valid);
  for (const auto& [tail, n] : hist) {
    const double expected = 10000.0 / double(valid);
    EXPECT_NEAR(double(n), expected, 5 * std::sqrt(expected)) << "tail " << tail;
  }
}

// --- Description noise --------------------------------------------------------

TEST(DescriptionNoise, ExactCountsAndConstraints) {
  std::vector<NodeDescriptionPair> pairs;
  for (EntityId e = 0; e < 200; ++e) pairs.push_back({e, "paragraph " + std::to_string(e)});
  for (double rate : {0.0, 0.05, 0.10, 0.333, 1.0}) {
    const auto noisy = inject_description_noise(pairs, rate, pairs, 9);
    ASSERT_EQ(noisy.size(), pairs.size());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      EXPECT_EQ(noisy[i].entity, pairs[i].entity);
      if (noisy[i].text != pairs[i].text) {
        ++changed;
        EXPECT_NE(noisy[i].text, "paragraph " + std::to_string(noisy[i].entity));
      }
    }
    EXPECT_EQ(changed, std::size_t(std::llround(rate * 200))) << "rate " << rate;
    EXPECT_EQ(noisy, inject_description_noise(pairs, rate, pairs, 9));
  }
  EXPECT_NE(inject_description_noise(pairs, 0.1, pairs, 1), inject_description_noise(pairs, 0.1, pairs, 2));
}

TEST(DescriptionNoise, InvalidRateAndMissingSubstitute) {
  std::vector<NodeDescriptionPair> pairs{{0, "x"}};
  EXPECT_THROW(inject_description_noise(pairs, 1.5, pairs, 0), std::invalid_argument);
  EXPECT_THROW(inject_description_noise(pairs, -0.1, pairs, 0), std::invalid_argument);
  EXPECT_THROW(inject_description_noise(pairs, 1.0, pairs, 0), DatasetError);
}
