#pragma once

// Triple-classification and link-prediction metrics and report files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgalign/kg.hpp"

namespace kgalign {

struct TCReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total = 0;
  std::size_t parse_failures = 0;

  bool operator==(const TCReport&) const = default;
};

// Positive class = correct triple. Precision, recall and F1 are 0 when their
// denominators are.
TCReport tc_metrics(const std::vector<bool>& predicted, const std::vector<bool>& gold,
                    std::size_t parse_failures = 0);

struct LPReport {
  double hits_at_1 = 0.0;
  double hits_at_k = 0.0;
  std::size_t k = 3;
  double mrr = 0.0;
  std::size_t queries = 0;
  std::size_t unmatched = 0;

  bool operator==(const LPReport&) const = default;
};

using RankedAnswers = std::vector<std::optional<EntityId>>;

// Reciprocal rank is 1/position of the first gold match, 0 when the gold
// entity is not in the list (no filtering of other valid answers).
LPReport lp_metrics(const std::vector<RankedAnswers>& ranked, const std::vector<EntityId>& gold,
                    std::size_t k = 3, std::size_t unmatched = 0);

nlohmann::ordered_json to_json(const TCReport& r);
nlohmann::ordered_json to_json(const LPReport& r);
TCReport tc_report_from_json(const nlohmann::json& j);
LPReport lp_report_from_json(const nlohmann::json& j);

// Report files carry a header object with the metric conventions and the
// 7B-scale reference figures this desk-scale pipeline does not attempt to
// reproduce.
nlohmann::ordered_json tc_report_document(const TCReport& r);
nlohmann::ordered_json lp_report_document(const LPReport& r);

void write_tc_csv(const std::filesystem::path& path, const TCReport& r);
void write_lp_csv(const std::filesystem::path& path, const LPReport& r);

struct RobustnessRow {
  std::string description_type;  // "Name" or "Paragraph"
  double noise = 0.0;
  LPReport report;
};

inline constexpr const char* kRobustnessHeader = "Description Type,Linking Noise,Hit@1,MRR";

void write_robustness_csv(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows);

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);

}  // namespace kgalign
