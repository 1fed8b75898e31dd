#pragma once

// Run-directory pipeline shared by the command-line tool and the end-to-end
// tests. Every stage reads its inputs from the dataset or the run directory,
// writes artifacts back into the run directory and refreshes manifest.json.
//
// Layout:
//   config.json                      resolved configuration
//   manifest.json                    inputs, config hash, artifact hashes, timings
//   checkpoints/alignment/           alignment.bin, vocab.tsv, alignment.json
//   checkpoints/adapter_{tc,lp}.bin  tuned knowledge adapters
//   extractions/<doc>.txt            raw extraction responses (cache)
//   pairs/global_pairs.jsonl         parsed subgraph-document pairs
//   prompts/{tc,lp}_{train,test}.jsonl and matching *_queries.tsv
//   reports/                         loss curves, metric reports, exports

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgalign/alignment.hpp"
#include "kgalign/eval.hpp"
#include "kgalign/instruction.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/llm_bridge.hpp"

namespace kgalign {

// A required input is absent; the message names it and says how to produce it.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two configuration sources disagree.
class ConfigConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DescriptionType { Paragraph, Name };

struct RunConfig {
  std::filesystem::path dataset;
  std::uint64_t seed = 42;
  bool allow_unseen = false;

  AlignmentConfig alignment;
  TuneConfig tuning;

  // Prompt construction.
  std::size_t hops = 2;
  std::size_t node_cap = 64;
  GraphMode mode = GraphMode::Graph;
  Resources resources;

  // "mock", "mock-oracle" or "http".
  std::string backend = "mock";
  MockConfig mock;
  HttpConfig http;
  std::size_t workers = 1;

  std::size_t icl_k = 3;

  // Local pairs: entity descriptions, or entity names only.
  DescriptionType description_type = DescriptionType::Paragraph;
  double linking_noise = 0.0;
  // Use pairs/global_pairs.jsonl in alignment when it exists.
  bool use_global_pairs = true;
  // Directory of pre-recorded extraction responses (<doc id>.txt) used to
  // fill the cache before any backend call.
  std::filesystem::path extraction_responses;

  std::vector<double> robustness_rates{0.0, 0.05, 0.10};
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are an error.
RunConfig run_config_from_json(const nlohmann::json& j);

// Field path ("tuning.epochs") -> where its value came from ("default",
// "config run.json", "flag --tune-epochs").
using ConfigSources = std::map<std::string, std::string>;

// Rejects inconsistent settings, naming the source of each side.
void validate(const RunConfig& cfg, const ConfigSources& sources = {});

// SHA-256 of the canonical config JSON.
std::string config_hash(const RunConfig& cfg);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::filesystem::path run_dir);

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }

  // Each stage returns a short human-readable summary.
  std::string ingest();
  std::string align();
  std::string extract_pairs();
  std::string build_prompts();
  // task: "tc", "lp" or "all".
  std::string tune(const std::string& task = "all");
  std::string eval_tc(bool emit_plots = false);
  std::string eval_lp(bool use_icl = false, bool emit_plots = false);
  std::string icl_build();
  std::string robustness();
  std::string export_embeddings();

  // Stage building blocks, exposed for tests.
  KnowledgeGraph load_kg() const;
  std::vector<NodeDescriptionPair> local_pairs(const KnowledgeGraph& kg, DescriptionType type,
                                               double noise) const;
  std::vector<SubgraphDocumentPair> global_pairs(const KnowledgeGraph& kg) const;
  std::unique_ptr<Backend> make_backend(const KnowledgeGraph& kg) const;
  std::vector<TuneExample> examples(const std::string& prompt_file, const Tensor<float>& table) const;
  LPReport evaluate_lp(const KnowledgeGraph& kg, const Tensor<float>& table, KnowledgeAdapter<float>& adapter,
                       const Backend& backend, const std::string& prompt_file,
                       std::vector<LPPrediction>* predictions = nullptr) const;
  KnowledgeAdapter<float> fresh_adapter(const Backend& backend) const;

  std::filesystem::path path(const std::string& rel) const { return run_dir_ / rel; }

 private:
  void require(const std::string& rel, const std::string& producer) const;
  void record(const std::string& stage, double seconds);

  RunConfig cfg_;
  std::filesystem::path run_dir_;
};

// Files under the run directory (relative path -> SHA-256), manifest.json
// excluded.
std::map<std::string, std::string> artifact_hashes(const std::filesystem::path& run_dir);
// SHA-256 over the sorted "path  hash" lines of artifact_hashes.
std::string artifact_digest(const std::map<std::string, std::string>& hashes);

std::string mode_name(GraphMode m);
GraphMode mode_from_name(const std::string& s);

}  // namespace kgalign
