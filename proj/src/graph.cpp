#include "kgalign/graph.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace kgalign {

AdjacencyIndex::AdjacencyIndex(std::size_t entity_count, std::vector<Triple> triples)
    : triples_(std::move(triples)), incident_(entity_count) {
  for (std::uint32_t i = 0; i < triples_.size(); ++i) {
    const auto& t = triples_[i];
    if (t.h >= entity_count || t.t >= entity_count) {
      throw std::out_of_range("build_index: triple endpoint outside entity range");
    }
    incident_[t.h].push_back(i);
    if (t.t != t.h) incident_[t.t].push_back(i);
  }
}

AdjacencyIndex build_index(const KnowledgeGraph& kg) {
  return AdjacencyIndex(kg.entity_count(), kg.split.train);
}

Subgraph extract_khop(const AdjacencyIndex& index, std::span<const EntityId> anchors,
                      std::size_t hops, std::size_t node_cap, const Triple* exclude) {
  Subgraph g;
  std::unordered_map<EntityId, std::uint32_t> hop;
  for (EntityId a : anchors) {
    if (a >= index.entity_count()) {
      throw std::out_of_range("extract_khop: unknown anchor " + std::to_string(a));
    }
    if (hop.emplace(a, 0).second) {
      g.anchors.push_back(a);
      g.nodes.push_back(a);
      g.hop_of.push_back(0);
    }
  }
  if (node_cap < g.anchors.size()) {
    throw std::invalid_argument("extract_khop: node_cap smaller than the anchor set");
  }

  std::vector<EntityId> frontier = g.nodes;
  for (std::uint32_t level = 1; level <= hops && !frontier.empty() && g.nodes.size() < node_cap;
       ++level) {
    std::vector<EntityId> next;
    for (EntityId u : frontier) {
      for (auto ti : index.incident(u)) {
        const auto& t = index.triple(ti);
        const EntityId v = t.h == u ? t.t : t.h;
        if (!hop.count(v)) {
          hop.emplace(v, level);
          next.push_back(v);
        }
      }
    }
    std::sort(next.begin(), next.end());
    for (EntityId v : next) {
      if (g.nodes.size() == node_cap) {
        hop.erase(v);
        continue;
      }
      g.nodes.push_back(v);
      g.hop_of.push_back(level);
    }
    frontier = std::move(next);
  }

  std::vector<std::uint32_t> edge_ids;
  for (EntityId u : g.nodes) {
    for (auto ti : index.incident(u)) {
      const auto& t = index.triple(ti);
      if (!hop.count(t.h) || !hop.count(t.t)) continue;
      if (exclude && t == *exclude) continue;
      edge_ids.push_back(ti);
    }
  }
  std::sort(edge_ids.begin(), edge_ids.end());
  edge_ids.erase(std::unique(edge_ids.begin(), edge_ids.end()), edge_ids.end());
  g.edges.reserve(edge_ids.size());
  for (auto ti : edge_ids) g.edges.push_back(index.triple(ti));
  return g;
}

Subgraph subgraph_from_triples(const std::vector<StringTriple>& triples) {
  if (triples.empty()) throw std::invalid_argument("subgraph_from_triples: empty triple list");
  Subgraph g;
  std::map<std::string, EntityId> nodes;
  std::map<std::string, RelationId> rels;
  std::set<Triple> seen;
  auto node_id = [&](const std::string& s) {
    auto [it, fresh] = nodes.emplace(s, static_cast<EntityId>(g.node_labels.size()));
    if (fresh) {
      g.node_labels.push_back(s);
      g.nodes.push_back(it->second);
      g.hop_of.push_back(0);
    }
    return it->second;
  };
  for (const auto& [h, r, t] : triples) {
    Triple tr;
    tr.h = node_id(h);
    auto [rit, fresh] = rels.emplace(r, static_cast<RelationId>(g.relation_labels.size()));
    if (fresh) g.relation_labels.push_back(r);
    tr.r = rit->second;
    tr.t = node_id(t);
    if (seen.insert(tr).second) g.edges.push_back(tr);
  }
  return g;
}

nlohmann::ordered_json to_json(const Subgraph& g) {
  nlohmann::ordered_json j;
  j["anchors"] = g.anchors;
  j["nodes"] = g.nodes;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& e : g.edges) edges.push_back({e.h, e.r, e.t});
  j["edges"] = std::move(edges);
  j["hop_of"] = g.hop_of;
  if (g.is_local()) {
    j["node_labels"] = g.node_labels;
    j["relation_labels"] = g.relation_labels;
  }
  return j;
}

Subgraph subgraph_from_json(const nlohmann::json& j) {
  Subgraph g;
  g.anchors = j.at("anchors").get<std::vector<EntityId>>();
  g.nodes = j.at("nodes").get<std::vector<EntityId>>();
  for (const auto& e : j.at("edges")) {
    g.edges.push_back({e.at(0).get<EntityId>(), e.at(1).get<RelationId>(), e.at(2).get<EntityId>()});
  }
  g.hop_of = j.at("hop_of").get<std::vector<std::uint32_t>>();
  if (j.contains("node_labels")) {
    g.node_labels = j.at("node_labels").get<std::vector<std::string>>();
    g.relation_labels = j.at("relation_labels").get<std::vector<std::string>>();
  }
  return g;
}

}  // namespace kgalign
