#pragma once

// Instruction templates for triple classification and link prediction,
// prompt assembly with graph-embedding slots, the extraction prompt used to
// build subgraph-document pairs, and similarity-based in-context example
// retrieval.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kgalign/graph.hpp"
#include "kgalign/kg.hpp"

namespace kgalign {

enum class TaskKind { TripleClassification, LinkPrediction };
enum class GraphMode { Base, Triple, Graph };

struct Resources {
  bool names = false;
  bool descriptions = false;
};

inline constexpr std::string_view kSystemInstruction =
    "You are an assistant specializing in large language models and knowledge graphs. Please "
    "follow the instructions carefully and provide your responses.";

// Slot marker for graph-embedding position i: "<gemb_i>".
std::string slot_marker(std::size_t i);

struct Prompt {
  TaskKind task = TaskKind::TripleClassification;
  std::string system;
  // "(h, r, t)" for classification, "(h, r, ?)" for link prediction.
  std::string question;
  std::string user_text;
  std::vector<std::string> slots;
  // Entity behind each slot, same order as `slots`.
  std::vector<EntityId> slot_entities;
  // Entity names behind the slots, used when a backend cannot take vectors.
  std::vector<std::string> slot_labels;
  std::string resource_text;
  std::optional<std::string> target;

  // System instruction, newline, user text.
  std::string text() const;
};

// Raw template with {triple}/{question}, {graph}, {name}, {description}
// placeholders. Supported: Base and Triple without resources; Graph with any
// resource combination. Anything else throws std::invalid_argument.
std::string template_text(TaskKind task, GraphMode mode, Resources res);

// Fills the template for `query`. Graph and Triple modes need `subgraph`.
// Graph mode places one slot per subgraph node, except for names plus
// descriptions whose template carries no {graph} placeholder. Triple mode
// places slots for the head and tail (head only for link prediction).
// Name and description lists follow subgraph node order, "; "-separated.
Prompt render_prompt(TaskKind task, const Triple& query, GraphMode mode, Resources res,
                     const Subgraph* subgraph, const KnowledgeGraph& kg);

std::string render_triple(const KnowledgeGraph& kg, const Triple& t);
std::string render_question(const KnowledgeGraph& kg, const Triple& t);

nlohmann::ordered_json to_json(const Prompt& p);
Prompt prompt_from_json(const nlohmann::json& j);
void write_prompts_jsonl(const std::filesystem::path& path, const std::vector<Prompt>& prompts);
std::vector<Prompt> read_prompts_jsonl(const std::filesystem::path& path);

// --- Extraction -------------------------------------------------------------

inline constexpr std::string_view kExtractionInstruction =
    "Given a document, please extrapolate as many relationships as you can from the document "
    "and generate triples like (source, relation, target).";

inline constexpr std::string_view kExtractionExampleInput =
    "Steven Paul Jobs was an American businessman, inventor, and investor best known for "
    "co-founding the technology giant Apple Inc. Jobs was also the founder of NeXT and chairman "
    "and majority shareholder of Pixar. He was a pioneer of the personal computer revolution of "
    "the 1970s and 1980s, along with his early business partner and fellow Apple co-founder "
    "Steve Wozniak.";

inline constexpr std::string_view kExtractionExampleOutput =
    "(Steven Paul Jobs, nationality, American); (Steven Paul Jobs, occupation, businessman); "
    "(Steven Paul Jobs, occupation, inventor); (Steven Paul Jobs, co-founder of, Apple Inc.); "
    "(Steven Paul Jobs, founder of, NeXT); (Steven Paul Jobs, chairman of, Pixar); "
    "(Steven Paul Jobs, business partner, Steve Wozniak);";

// Instruction, one-shot example, then the document as the final input.
// "Output:" inside the document is written as "Output\:".
std::string build_extraction_prompt(std::string_view document);

struct ExtractionResult {
  std::vector<StringTriple> triples;
  // Parenthesized groups that did not hold exactly three fields.
  std::size_t skipped = 0;
};

// Reads "(a, b, c)" groups. When the text contains "Output:", parsing starts
// after the first occurrence and stops at the next blank line or "Input:".
// Throws std::runtime_error when nothing parses.
ExtractionResult parse_extraction(std::string_view text);

// --- In-context examples ----------------------------------------------------

struct ICLCandidate {
  std::string question;
  std::vector<float> embedding;
  std::string answer;
};

struct ICLSelection {
  std::vector<std::size_t> indices;
  // Set when k exceeded the pool and the whole pool was returned.
  bool truncated = false;
};

// Top-k by cosine similarity, descending, ties to the lower index.
ICLSelection retrieve_icl(const std::vector<ICLCandidate>& pool, std::span<const float> query,
                          std::size_t k);

// Prepends the selected examples as "Input: ...\nOutput: ...\n\n" blocks.
void prepend_icl_examples(Prompt& prompt, const std::vector<ICLCandidate>& pool,
                          const ICLSelection& selection);

}  // namespace kgalign
