#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgalign/kg.hpp"

namespace kgalign {

// Per-entity incidence lists over the training triples.
class AdjacencyIndex {
 public:
  AdjacencyIndex() = default;
  AdjacencyIndex(std::size_t entity_count, std::vector<Triple> triples);

  std::span<const std::uint32_t> incident(EntityId e) const { return incident_.at(e); }
  const Triple& triple(std::uint32_t i) const { return triples_[i]; }
  const std::vector<Triple>& triples() const { return triples_; }
  std::size_t entity_count() const { return incident_.size(); }

 private:
  std::vector<Triple> triples_;
  std::vector<std::vector<std::uint32_t>> incident_;
};

AdjacencyIndex build_index(const KnowledgeGraph& kg);

struct Subgraph {
  std::vector<EntityId> anchors;
  // Entity ids in deterministic order: anchors first, then by (hop, id).
  // For extraction-built subgraphs these are local ids 0..n-1.
  std::vector<EntityId> nodes;
  std::vector<Triple> edges;
  std::vector<std::uint32_t> hop_of;
  // Only for extraction-built subgraphs: source strings of local ids.
  std::vector<std::string> node_labels;
  std::vector<std::string> relation_labels;

  bool is_local() const { return !node_labels.empty(); }
  bool operator==(const Subgraph&) const = default;
};

inline constexpr std::size_t kUnlimitedNodes = std::numeric_limits<std::size_t>::max();

// All entities within `hops` undirected hops of any anchor, truncated to
// `node_cap`, with every indexed triple among them except `exclude`.
Subgraph extract_khop(const AdjacencyIndex& index, std::span<const EntityId> anchors,
                      std::size_t hops, std::size_t node_cap = 64,
                      const Triple* exclude = nullptr);

using StringTriple = std::array<std::string, 3>;

// Builds a subgraph with local ids from string triples (duplicates dropped).
Subgraph subgraph_from_triples(const std::vector<StringTriple>& triples);

nlohmann::ordered_json to_json(const Subgraph& g);
Subgraph subgraph_from_json(const nlohmann::json& j);

}  // namespace kgalign
