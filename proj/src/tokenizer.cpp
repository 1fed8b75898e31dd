#include "kgalign/tokenizer.hpp"

#include <fstream>
#include <stdexcept>

namespace kgalign {
namespace {

bool word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

}  // namespace

Tokenizer::Tokenizer() {
  tokens_.emplace_back(kOovToken);
  ids_.emplace(std::string(kOovToken), kOov);
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (word_byte(c)) {
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& doc : corpus) {
    for (auto& tok : split(doc)) {
      auto [it, fresh] = counts.emplace(tok, 0);
      if (fresh) order.push_back(tok);
      ++it->second;
    }
  }
  Tokenizer t;
  for (const auto& tok : order) {
    if (counts[tok] < min_count) continue;
    t.ids_.emplace(tok, static_cast<std::uint32_t>(t.tokens_.size()));
    t.tokens_.push_back(tok);
  }
  return t;
}

std::vector<std::uint32_t> Tokenizer::encode(std::string_view text, std::size_t max_len) const {
  std::vector<std::uint32_t> ids;
  for (const auto& tok : split(text)) {
    if (ids.size() == max_len) break;
    auto it = ids_.find(tok);
    ids.push_back(it == ids_.end() ? kOov : it->second);
  }
  if (ids.empty()) ids.push_back(kOov);
  return ids;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::uint32_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Tokenizer t;
  t.tokens_.clear();
  t.ids_.clear();
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": expected token<TAB>id");
    }
    const auto id = static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1)));
    if (id != t.tokens_.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": ids must be dense");
    }
    t.ids_.emplace(line.substr(0, tab), id);
    t.tokens_.push_back(line.substr(0, tab));
  }
  if (t.tokens_.empty() || t.tokens_[0] != kOovToken) {
    throw std::runtime_error(path.string() + ": first entry must be the OOV token");
  }
  return t;
}

}  // namespace kgalign
