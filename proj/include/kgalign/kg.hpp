#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kgalign {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId h = 0;
  RelationId r = 0;
  EntityId t = 0;

  bool operator==(const Triple&) const = default;
  auto operator<=>(const Triple&) const = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& x) const noexcept {
    std::uint64_t k = (std::uint64_t(x.h) << 32) ^ (std::uint64_t(x.r) * 0x9e3779b97f4a7c15ULL) ^ x.t;
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    return static_cast<std::size_t>(k);
  }
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bijection between dataset surface strings and dense indices, assigned in
// first-appearance order.
class Vocabulary {
 public:
  std::uint32_t intern(std::string_view surface);
  std::optional<std::uint32_t> find(std::string_view surface) const;
  const std::string& surface(std::uint32_t id) const { return surfaces_.at(id); }
  std::size_t size() const { return surfaces_.size(); }
  const std::vector<std::string>& surfaces() const { return surfaces_; }

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct DatasetSplit {
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  // Present for triple-classification datasets: one label per valid/test
  // triple, true = correct triple.
  std::optional<std::vector<bool>> valid_labels;
  std::optional<std::vector<bool>> test_labels;
};

struct KnowledgeGraph {
  Vocabulary entities;
  Vocabulary relations;
  std::vector<std::string> names;
  std::vector<std::string> descriptions;
  DatasetSplit split;

  std::size_t entity_count() const { return entities.size(); }
  std::size_t relation_count() const { return relations.size(); }
  // Entity name, or its surface identifier when no name was supplied.
  const std::string& name(EntityId e) const { return names.at(e); }
  TripleSet all_triples() const;
};

struct LoadOptions {
  // Entities that appear only in valid/test: rejected unless set, in which
  // case they are added with empty training neighborhoods.
  bool allow_unseen = false;
};

struct DatasetStats {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
  std::size_t unseen_entities = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t described_entities = 0;
};

// Reads train.tsv (required), valid.tsv, test.tsv, plus optional
// valid_labels.txt / test_labels.txt (one 1/0 per line), entity_names.tsv and
// entity_descriptions.tsv from `dir`.
KnowledgeGraph load_dataset(const std::filesystem::path& dir, const LoadOptions& opts = {},
                            DatasetStats* stats = nullptr);

// Escapes/unescapes \t, \n and \\ in TSV text fields.
std::string escape_field(std::string_view s);
std::string unescape_field(std::string_view s);

// The stored description, or the entity name when absent or blank.
std::string description_of(const KnowledgeGraph& kg, EntityId e);

struct NodeDescriptionPair {
  EntityId entity = 0;
  std::string text;

  bool operator==(const NodeDescriptionPair&) const = default;
};

std::vector<NodeDescriptionPair> build_node_pairs(const KnowledgeGraph& kg);

// Tail corruption: (h, r, t') with t' uniform over entities such that the
// corrupted triple is in no split. Deterministic per seed.
Triple corrupt_triple(const KnowledgeGraph& kg, const TripleSet& known, const Triple& triple,
                      std::uint64_t seed);
Triple corrupt_triple(const KnowledgeGraph& kg, const Triple& triple, std::uint64_t seed);

// Replaces the text of exactly round(rate * |pairs|) pairs, chosen by seed,
// with a paragraph from `corpus` belonging to a different entity and differing
// from the original text.
std::vector<NodeDescriptionPair> inject_description_noise(
    const std::vector<NodeDescriptionPair>& pairs, double rate,
    const std::vector<NodeDescriptionPair>& corpus, std::uint64_t seed);

void write_triples_tsv(const std::filesystem::path& path, const KnowledgeGraph& kg,
                       const std::vector<Triple>& triples);

}  // namespace kgalign
