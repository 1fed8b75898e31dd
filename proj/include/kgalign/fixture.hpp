#pragma once

// Synthetic knowledge graph with planted, compositional 1:1 descriptions.
//
// Attribute entities (8 colors, 8 animals, 4 regions) plus `items` entities,
// each item a distinct (color, animal, region) combination described as
// "<mood> <color> <animal> from <region>", the mood being a function of the
// other three. Relations: has_color, is_a,
// located_in and random item-item near edges. has_color triples are split
// across train/valid/test, so test link-prediction queries ask for a color
// the graph does not state but the description does.

#include <cstdint>
#include <filesystem>

namespace kgalign {

struct FixtureOptions {
  std::size_t items = 180;
  std::size_t documents = 40;
  std::uint64_t seed = 7;
};

// Writes train/valid/test.tsv, entity_names.tsv, entity_descriptions.tsv,
// documents.tsv (id<TAB>text) and extractions/<id>.txt, a cached extraction
// response per document.
void write_fixture(const std::filesystem::path& dir, const FixtureOptions& opts = {});

}  // namespace kgalign
