#include "kgalign/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace kgalign {
namespace {

double ratio(std::size_t a, std::size_t b) { return b ? double(a) / double(b) : 0.0; }

std::ofstream open(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(6) << std::fixed;
  return out;
}

}  // namespace

TCReport tc_metrics(const std::vector<bool>& predicted, const std::vector<bool>& gold,
                    std::size_t parse_failures) {
  if (predicted.size() != gold.size()) {
    throw std::invalid_argument("tc_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(gold.size()) + " labels");
  }
  if (gold.empty()) throw std::invalid_argument("tc_metrics: no examples");
  TCReport r;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i]) {
      gold[i] ? ++r.tp : ++r.fp;
    } else {
      gold[i] ? ++r.fn : ++r.tn;
    }
  }
  r.total = gold.size();
  r.parse_failures = parse_failures;
  r.accuracy = ratio(r.tp + r.tn, r.total);
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

LPReport lp_metrics(const std::vector<RankedAnswers>& ranked, const std::vector<EntityId>& gold,
                    std::size_t k, std::size_t unmatched) {
  if (ranked.size() != gold.size()) {
    throw std::invalid_argument("lp_metrics: " + std::to_string(ranked.size()) + " rankings for " +
                                std::to_string(gold.size()) + " queries");
  }
  if (k == 0) throw std::invalid_argument("lp_metrics: k must be >= 1");
  LPReport r;
  r.k = k;
  r.queries = gold.size();
  r.unmatched = unmatched;
  double h1 = 0.0, hk = 0.0, rr = 0.0;
  for (std::size_t q = 0; q < gold.size(); ++q) {
    for (std::size_t pos = 0; pos < ranked[q].size(); ++pos) {
      if (ranked[q][pos] && *ranked[q][pos] == gold[q]) {
        rr += 1.0 / double(pos + 1);
        h1 += pos == 0;
        hk += pos < k;
        break;
      }
    }
  }
  if (r.queries) {
    r.hits_at_1 = h1 / double(r.queries);
    r.hits_at_k = hk / double(r.queries);
    r.mrr = rr / double(r.queries);
  }
  return r;
}

nlohmann::ordered_json to_json(const TCReport& r) {
  return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall},
          {"f1", r.f1},             {"tp", r.tp},               {"fp", r.fp},
          {"tn", r.tn},             {"fn", r.fn},               {"total", r.total},
          {"parse_failures", r.parse_failures}};
}

nlohmann::ordered_json to_json(const LPReport& r) {
  return {{"hits_at_1", r.hits_at_1}, {"hits_at_k", r.hits_at_k}, {"k", r.k},
          {"mrr", r.mrr},             {"queries", r.queries},     {"unmatched", r.unmatched}};
}

TCReport tc_report_from_json(const nlohmann::json& j) {
  TCReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.tp = j.at("tp").get<std::size_t>();
  r.fp = j.at("fp").get<std::size_t>();
  r.tn = j.at("tn").get<std::size_t>();
  r.fn = j.at("fn").get<std::size_t>();
  r.total = j.at("total").get<std::size_t>();
  r.parse_failures = j.at("parse_failures").get<std::size_t>();
  return r;
}

LPReport lp_report_from_json(const nlohmann::json& j) {
  LPReport r;
  r.hits_at_1 = j.at("hits_at_1").get<double>();
  r.hits_at_k = j.at("hits_at_k").get<double>();
  r.k = j.at("k").get<std::size_t>();
  r.mrr = j.at("mrr").get<double>();
  r.queries = j.at("queries").get<std::size_t>();
  r.unmatched = j.at("unmatched").get<std::size_t>();
  return r;
}

nlohmann::ordered_json tc_report_document(const TCReport& r) {
  nlohmann::ordered_json doc;
  doc["header"] = {
      {"positive_class", "correct triple"},
      {"parse_failures", "answers other than true/false, scored as negative"},
      {"reference", {{"dataset", "FB15k-237N"}, {"f1", 0.831}, {"scale", "7B-parameter LLM fine-tuning"}}}};
  doc["metrics"] = to_json(r);
  return doc;
}

nlohmann::ordered_json lp_report_document(const LPReport& r) {
  nlohmann::ordered_json doc;
  doc["header"] = {
      {"mrr_convention", "unfiltered; gold answer outside the generated top-n contributes 0"},
      {"reference",
       {{"dataset", "FB15k-237N"}, {"hits_at_1", 0.386}, {"mrr", 0.440}, {"scale", "7B-parameter LLM fine-tuning"}}}};
  doc["metrics"] = to_json(r);
  return doc;
}

void write_tc_csv(const std::filesystem::path& path, const TCReport& r) {
  auto out = open(path);
  out << "Accuracy,Precision,Recall,F1,TP,FP,TN,FN,ParseFailures\n"
      << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.tp << ',' << r.fp
      << ',' << r.tn << ',' << r.fn << ',' << r.parse_failures << '\n';
}

void write_lp_csv(const std::filesystem::path& path, const LPReport& r) {
  auto out = open(path);
  out << "Hit@1,Hit@" << r.k << ",MRR,Queries,Unmatched\n"
      << r.hits_at_1 << ',' << r.hits_at_k << ',' << r.mrr << ',' << r.queries << ',' << r.unmatched << '\n';
}

void write_robustness_csv(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows) {
  auto out = open(path);
  out << kRobustnessHeader << '\n';
  for (const auto& row : rows) {
    out << row.description_type << ',' << static_cast<long long>(std::llround(row.noise * 100.0)) << "%,"
        << row.report.hits_at_1 << ',' << row.report.mrr << '\n';
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace kgalign
