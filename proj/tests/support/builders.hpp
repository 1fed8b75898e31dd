#pragma once

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "kgalign/graph.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/rng.hpp"

namespace kgtest {

using kgalign::EntityId;
using kgalign::KnowledgeGraph;
using kgalign::Triple;

// Knowledge graph from surface triples; names default to the surfaces.
inline KnowledgeGraph kg_from(const std::vector<std::array<std::string, 3>>& train) {
  KnowledgeGraph kg;
  for (const auto& [h, r, t] : train) {
    Triple x;
    x.h = kg.entities.intern(h);
    x.r = kg.relations.intern(r);
    x.t = kg.entities.intern(t);
    kg.split.train.push_back(x);
  }
  kg.names = kg.entities.surfaces();
  kg.descriptions.assign(kg.entity_count(), "");
  return kg;
}

// n entities "e0".."e{n-1}" (id = index), m distinct random train triples
// over `relations` relations. Self-loops allowed.
inline KnowledgeGraph random_kg(kgalign::Rng& rng, std::size_t n, std::size_t m,
                                std::size_t relations) {
  KnowledgeGraph kg;
  for (std::size_t i = 0; i < n; ++i) kg.entities.intern("e" + std::to_string(i));
  for (std::size_t r = 0; r < relations; ++r) kg.relations.intern("r" + std::to_string(r));
  kgalign::TripleSet seen;
  const std::size_t cap = n * n * relations;
  while (kg.split.train.size() < std::min(m, cap)) {
    Triple t{static_cast<EntityId>(rng.uniform_index(n)),
             static_cast<kgalign::RelationId>(rng.uniform_index(relations)),
             static_cast<EntityId>(rng.uniform_index(n))};
    if (seen.insert(t).second) kg.split.train.push_back(t);
  }
  kg.names = kg.entities.surfaces();
  kg.descriptions.assign(n, "");
  return kg;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("kgalign_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Three-entity graph behind the golden prompt files.
inline KnowledgeGraph writers_kg() {
  auto kg = kg_from({{"Charles Dickens", "influenced_by", "William Shakespeare"},
                     {"Charles Dickens", "lived_in", "London"}});
  kg.descriptions[0] = "English novelist.";
  kg.descriptions[1] = "English playwright.";
  return kg;
}

inline kgalign::Subgraph writers_subgraph() {
  kgalign::Subgraph g;
  g.anchors = {0};
  g.nodes = {0, 1, 2};
  g.hop_of = {0, 1, 1};
  g.edges = {{0, 0, 1}, {0, 1, 2}};
  return g;
}

}  // namespace kgtest
