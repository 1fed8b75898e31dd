#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgalign {

inline constexpr std::size_t kMaxTextTokens = 256;

// Word-level tokenizer: lowercased runs of letters/digits (any non-ASCII byte
// counts as a letter); everything else separates. Tokens seen fewer than
// `min_count` times in the build corpus share the out-of-vocabulary id 0.
class Tokenizer {
 public:
  static constexpr std::uint32_t kOov = 0;
  static constexpr std::string_view kOovToken = "<oov>";

  Tokenizer();

  static std::vector<std::string> split(std::string_view text);
  static Tokenizer build(const std::vector<std::string>& corpus, std::size_t min_count = 2);

  // Never empty: text without tokens encodes to a single OOV id.
  std::vector<std::uint32_t> encode(std::string_view text,
                                    std::size_t max_len = kMaxTextTokens) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }

  // Vocabulary file: token<TAB>id per line, UTF-8.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

}  // namespace kgalign
