#include "kgalign/fixture.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgalign/rng.hpp"

namespace kgalign {
namespace {

constexpr std::array<const char*, 8> kColors{"red", "blue", "green", "amber",
                                             "violet", "silver", "black", "white"};
constexpr std::array<const char*, 8> kAnimals{"fox", "owl", "wolf", "hare",
                                              "crane", "otter", "lynx", "heron"};
constexpr std::array<const char*, 4> kRegions{"north", "south", "east", "west"};
constexpr std::array<const char*, 8> kMoods{"calm", "bold", "shy", "swift",
                                            "proud", "quiet", "eager", "wild"};

std::string item_surface(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item_%03zu", i);
  return buf;
}

std::string item_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Item %03zu", i);
  return buf;
}

std::ofstream open(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

void write_fixture(const std::filesystem::path& dir, const FixtureOptions& opts) {
  const std::size_t combos = kColors.size() * kAnimals.size() * kRegions.size();
  if (opts.items < 2 || opts.items > combos) {
    throw std::invalid_argument("fixture: items must lie in [2, " + std::to_string(combos) + "]");
  }
  if (opts.documents > opts.items) throw std::invalid_argument("fixture: more documents than items");
  std::filesystem::create_directories(dir / "extractions");
  Rng rng(opts.seed);

  std::vector<std::size_t> combo(combos);
  for (std::size_t i = 0; i < combos; ++i) combo[i] = i;
  rng.shuffle(combo);
  combo.resize(opts.items);

  struct Item {
    std::size_t color, animal, region;
  };
  std::vector<Item> items;
  for (auto c : combo) {
    items.push_back({c % kColors.size(), (c / kColors.size()) % kAnimals.size(),
                     c / (kColors.size() * kAnimals.size())});
  }

  auto names = open(dir / "entity_names.tsv");
  auto descs = open(dir / "entity_descriptions.tsv");
  auto attr = [&](const char* kind, const char* word, const char* what) {
    names << kind << ':' << word << '\t' << word << '\n';
    descs << kind << ':' << word << '\t' << "the " << what << ' ' << word << '\n';
  };
  for (auto w : kColors) attr("color", w, "color");
  for (auto w : kAnimals) attr("animal", w, "animal");
  for (auto w : kRegions) attr("region", w, "region");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    names << item_surface(i) << '\t' << item_name(i) << '\n';
    // The mood is a check symbol: two items never differ in one word only.
    const auto mood = (it.color + it.animal + it.region) % kMoods.size();
    descs << item_surface(i) << '\t' << kMoods[mood] << ' ' << kColors[it.color] << ' ' << kAnimals[it.animal]
          << " from " << kRegions[it.region] << '\n';
  }

  // Items in a seeded order; the has_color split follows it (70/10/20).
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_train = items.size() * 7 / 10;
  const std::size_t n_valid = items.size() / 10;

  auto train = open(dir / "train.tsv");
  auto valid = open(dir / "valid.tsv");
  auto test = open(dir / "test.tsv");
  std::vector<std::vector<std::size_t>> near(items.size());
  std::array<bool, kColors.size()> color_in_train{};
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    const auto& it = items[i];
    train << item_surface(i) << "\tis_a\tanimal:" << kAnimals[it.animal] << '\n';
    train << item_surface(i) << "\tlocated_in\tregion:" << kRegions[it.region] << '\n';
    // A color first seen after the train block still goes to train, so valid
    // and test never hold an unseen entity.
    const bool to_train = k < n_train || !color_in_train[it.color];
    color_in_train[it.color] = true;
    auto& out = to_train ? train : (k < n_train + n_valid ? valid : test);
    out << item_surface(i) << "\thas_color\tcolor:" << kColors[it.color] << '\n';
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::size_t j = rng.uniform_index(items.size() - 1);
    if (j >= i) ++j;
    near[i].push_back(j);
    train << item_surface(i) << "\tnear\t" << item_surface(j) << '\n';
  }

  auto docs = open(dir / "documents.tsv");
  for (std::size_t d = 0; d < opts.documents; ++d) {
    const std::size_t i = order[d];
    const auto& it = items[i];
    const std::string n = item_name(i), m = item_name(near[i][0]);
    const std::string id = "doc_" + std::to_string(d);
    docs << id << '\t' << n << " is a " << kAnimals[it.animal] << " that lives in the "
         << kRegions[it.region] << ". " << n << " is often seen near " << m << ".\n";
    auto resp = open(dir / "extractions" / (id + ".txt"));
    resp << '(' << n << ", is_a, " << kAnimals[it.animal] << "); (" << n << ", located_in, "
         << kRegions[it.region] << "); (" << n << ", near, " << m << ");\n";
  }
}

}  // namespace kgalign
