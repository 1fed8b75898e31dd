#include "kgalign/kg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <fstream>

#include "kgalign/rng.hpp"

namespace kgalign {
namespace fs = std::filesystem;

std::uint32_t Vocabulary::intern(std::string_view surface) {
  auto it = index_.find(std::string(surface));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(surfaces_.size());
  surfaces_.emplace_back(surface);
  index_.emplace(surfaces_.back(), id);
  return id;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TripleSet KnowledgeGraph::all_triples() const {
  TripleSet s;
  s.reserve(split.train.size() + split.valid.size() + split.test.size());
  s.insert(split.train.begin(), split.train.end());
  s.insert(split.valid.begin(), split.valid.end());
  s.insert(split.test.begin(), split.test.end());
  return s;
}

std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[i + 1];
      if (n == 't') { out += '\t'; ++i; continue; }
      if (n == 'n') { out += '\n'; ++i; continue; }
      if (n == '\\') { out += '\\'; ++i; continue; }
    }
    out += s[i];
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto p = s.find('\t', start);
    if (p == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

struct RawSplit {
  std::vector<Triple> triples;
  std::vector<std::size_t> line_numbers;
};

RawSplit read_split(const fs::path& path, KnowledgeGraph& kg, bool intern_all,
                    const LoadOptions& opts, std::size_t* unseen) {
  RawSplit out;
  const auto lines = read_lines(path);
  const auto file = path.filename().string();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_tabs(lines[i]);
    if (f.size() != 3) {
      throw ParseError(file, i + 1,
                       "expected 3 tab-separated columns, found " + std::to_string(f.size()));
    }
    if (f[0].empty() || f[1].empty() || f[2].empty()) throw ParseError(file, i + 1, "empty column");
    auto resolve_entity = [&](std::string_view s) -> EntityId {
      if (intern_all) return kg.entities.intern(s);
      if (auto id = kg.entities.find(s)) return *id;
      if (!opts.allow_unseen) {
        throw DatasetError(file + ":" + std::to_string(i + 1) + ": unknown entity '" +
                           std::string(s) + "' (pass allow_unseen to add it)");
      }
      if (unseen) ++*unseen;
      return kg.entities.intern(s);
    };
    Triple t;
    t.h = resolve_entity(f[0]);
    if (intern_all) {
      t.r = kg.relations.intern(f[1]);
    } else if (auto r = kg.relations.find(f[1])) {
      t.r = *r;
    } else if (opts.allow_unseen) {
      t.r = kg.relations.intern(f[1]);
    } else {
      throw DatasetError(file + ":" + std::to_string(i + 1) + ": unknown relation '" +
                         std::string(f[1]) + "'");
    }
    t.t = resolve_entity(f[2]);
    out.triples.push_back(t);
    out.line_numbers.push_back(i + 1);
  }
  return out;
}

std::vector<bool> read_labels(const fs::path& path, std::size_t expected) {
  std::vector<bool> labels;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view s = lines[i];
    if (s.empty()) continue;
    if (s == "1" || s == "true" || s == "True") {
      labels.push_back(true);
    } else if (s == "0" || s == "-1" || s == "false" || s == "False") {
      labels.push_back(false);
    } else {
      throw ParseError(path.filename().string(), i + 1, "label must be 1/0/-1/true/false");
    }
  }
  if (labels.size() != expected) {
    throw DatasetError(path.filename().string() + ": " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(expected) + " triples");
  }
  return labels;
}

// Drops repeated triples (keeping the first) and the matching labels.
void dedupe(std::vector<Triple>& triples, std::optional<std::vector<bool>>& labels,
            std::size_t& dropped) {
  TripleSet seen;
  std::vector<Triple> kept;
  std::vector<bool> kept_labels;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (!seen.insert(triples[i]).second) {
      ++dropped;
      continue;
    }
    kept.push_back(triples[i]);
    if (labels) kept_labels.push_back((*labels)[i]);
  }
  triples = std::move(kept);
  if (labels) *labels = std::move(kept_labels);
}

void check_disjoint(const std::vector<Triple>& a, const std::vector<Triple>& b, const KnowledgeGraph& kg,
                    const char* an, const char* bn) {
  TripleSet sa(a.begin(), a.end());
  for (const auto& t : b) {
    if (sa.count(t)) {
      throw DatasetError(std::string("splits overlap: (") + kg.entities.surface(t.h) + ", " +
                         kg.relations.surface(t.r) + ", " + kg.entities.surface(t.t) +
                         ") appears in both " + an + " and " + bn);
    }
  }
}

void read_entity_text(const fs::path& path, KnowledgeGraph& kg, std::vector<std::string>& target) {
  const auto lines = read_lines(path);
  const auto file = path.filename().string();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string_view s = lines[i];
    const auto tab = s.find('\t');
    if (tab == std::string_view::npos) throw ParseError(file, i + 1, "expected surface<TAB>text");
    const auto rest = s.substr(tab + 1);
    if (rest.find('\t') != std::string_view::npos) {
      throw ParseError(file, i + 1, "literal tab in text field (escape it as \\t)");
    }
    if (auto id = kg.entities.find(s.substr(0, tab))) target[*id] = unescape_field(rest);
  }
}

}  // namespace

KnowledgeGraph load_dataset(const fs::path& dir, const LoadOptions& opts, DatasetStats* stats) {
  KnowledgeGraph kg;
  DatasetStats st;
  const auto train_path = dir / "train.tsv";
  if (!fs::exists(train_path)) throw DatasetError("missing " + train_path.string());

  auto train = read_split(train_path, kg, true, opts, nullptr);
  if (train.triples.empty()) throw DatasetError("empty split: train.tsv");
  RawSplit valid, test;
  if (fs::exists(dir / "valid.tsv")) {
    valid = read_split(dir / "valid.tsv", kg, false, opts, &st.unseen_entities);
  }
  if (fs::exists(dir / "test.tsv")) {
    test = read_split(dir / "test.tsv", kg, false, opts, &st.unseen_entities);
  }

  kg.split.train = std::move(train.triples);
  kg.split.valid = std::move(valid.triples);
  kg.split.test = std::move(test.triples);
  if (fs::exists(dir / "valid_labels.txt")) {
    kg.split.valid_labels = read_labels(dir / "valid_labels.txt", kg.split.valid.size());
  }
  if (fs::exists(dir / "test_labels.txt")) {
    kg.split.test_labels = read_labels(dir / "test_labels.txt", kg.split.test.size());
  }
  std::optional<std::vector<bool>> no_labels;
  dedupe(kg.split.train, no_labels, st.duplicates_dropped);
  dedupe(kg.split.valid, kg.split.valid_labels, st.duplicates_dropped);
  dedupe(kg.split.test, kg.split.test_labels, st.duplicates_dropped);
  check_disjoint(kg.split.train, kg.split.valid, kg, "train", "valid");
  check_disjoint(kg.split.train, kg.split.test, kg, "train", "test");
  check_disjoint(kg.split.valid, kg.split.test, kg, "valid", "test");

  kg.names = kg.entities.surfaces();
  kg.descriptions.assign(kg.entities.size(), std::string());
  if (fs::exists(dir / "entity_names.tsv")) read_entity_text(dir / "entity_names.tsv", kg, kg.names);
  for (std::size_t e = 0; e < kg.names.size(); ++e) {
    if (is_blank(kg.names[e])) kg.names[e] = kg.entities.surface(static_cast<EntityId>(e));
  }
  if (fs::exists(dir / "entity_descriptions.tsv")) {
    read_entity_text(dir / "entity_descriptions.tsv", kg, kg.descriptions);
  }

  st.entities = kg.entities.size();
  st.relations = kg.relations.size();
  st.train = kg.split.train.size();
  st.valid = kg.split.valid.size();
  st.test = kg.split.test.size();
  st.described_entities = static_cast<std::size_t>(std::count_if(
      kg.descriptions.begin(), kg.descriptions.end(), [](const std::string& d) { return !is_blank(d); }));
  if (stats) *stats = st;
  return kg;
}

std::string description_of(const KnowledgeGraph& kg, EntityId e) {
  if (e >= kg.entity_count()) throw std::out_of_range("description_of: entity out of range");
  const auto& d = kg.descriptions.at(e);
  if (is_blank(d)) return kg.name(e);
  return d;
}

std::vector<NodeDescriptionPair> build_node_pairs(const KnowledgeGraph& kg) {
  std::vector<NodeDescriptionPair> out;
  out.reserve(kg.entity_count());
  for (EntityId e = 0; e < kg.entity_count(); ++e) out.push_back({e, description_of(kg, e)});
  return out;
}

Triple corrupt_triple(const KnowledgeGraph& kg, const TripleSet& known, const Triple& triple,
                      std::uint64_t seed) {
  const std::size_t n = kg.entity_count();
  if (n == 0) throw DatasetError("corrupt_triple: empty graph");
  Rng rng(seed);
  auto candidate = [&](EntityId e) { return Triple{triple.h, triple.r, e}; };
  // Rejection from the uniform proposal is exactly uniform over the valid
  // tails; the enumeration fallback covers nearly saturated (h, r) pairs.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto e = static_cast<EntityId>(rng.uniform_index(n));
    if (!known.count(candidate(e))) return candidate(e);
  }
  std::vector<EntityId> valid;
  for (EntityId e = 0; e < n; ++e) {
    if (!known.count(candidate(e))) valid.push_back(e);
  }
  if (valid.empty()) {
    throw DatasetError("corrupt_triple: every tail for (" + kg.entities.surface(triple.h) + ", " +
                       kg.relations.surface(triple.r) + ", ?) is a known triple");
  }
  return candidate(valid[rng.uniform_index(valid.size())]);
}

Triple corrupt_triple(const KnowledgeGraph& kg, const Triple& triple, std::uint64_t seed) {
  return corrupt_triple(kg, kg.all_triples(), triple, seed);
}

std::vector<NodeDescriptionPair> inject_description_noise(
    const std::vector<NodeDescriptionPair>& pairs, double rate,
    const std::vector<NodeDescriptionPair>& corpus, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("inject_description_noise: rate must lie in [0, 1]");
  }
  auto out = pairs;
  const auto count = static_cast<std::size_t>(std::llround(rate * double(pairs.size())));
  if (count == 0) return out;
  if (corpus.empty()) throw DatasetError("inject_description_noise: empty corpus");

  Rng rng(seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
  }
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));

  for (std::size_t k = 0; k < count; ++k) {
    auto& p = out[order[k]];
    auto acceptable = [&](const NodeDescriptionPair& c) {
      return c.entity != p.entity && c.text != p.text;
    };
    const NodeDescriptionPair* pick = nullptr;
    for (int attempt = 0; attempt < 256 && !pick; ++attempt) {
      const auto& c = corpus[rng.uniform_index(corpus.size())];
      if (acceptable(c)) pick = &c;
    }
    if (!pick) {
      const std::size_t start = rng.uniform_index(corpus.size());
      for (std::size_t s = 0; s < corpus.size() && !pick; ++s) {
        const auto& c = corpus[(start + s) % corpus.size()];
        if (acceptable(c)) pick = &c;
      }
    }
    if (!pick) {
      throw DatasetError("inject_description_noise: no substitute paragraph for entity " +
                         std::to_string(p.entity));
    }
    p.text = pick->text;
  }
  return out;
}

void write_triples_tsv(const fs::path& path, const KnowledgeGraph& kg,
                       const std::vector<Triple>& triples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (const auto& t : triples) {
    out << kg.entities.surface(t.h) << '\t' << kg.relations.surface(t.r) << '\t'
        << kg.entities.surface(t.t) << '\n';
  }
}

}  // namespace kgalign
