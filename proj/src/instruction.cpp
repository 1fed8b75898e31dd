#include "kgalign/instruction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace kgalign {
namespace {

constexpr std::string_view kTripleLead =
    "Given a triple {triple} that consists of a head entity, a relation, and a tail entity. ";
constexpr std::string_view kQuestionLead =
    "Given a question:{question} that represents a natural language question. ";
constexpr std::string_view kTripleTail =
    "Please determine the correctness of the input triple and response True or False.";
constexpr std::string_view kQuestionTail =
    "Please answer the input question, and keep the answer as simple as possible.";

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Single pass, so substituted values are never rescanned.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = values.find(tmpl.substr(i + 1, close - i - 1));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string_view task_name(TaskKind t) {
  return t == TaskKind::TripleClassification ? "tc" : "lp";
}

}  // namespace

std::string slot_marker(std::size_t i) { return "<gemb_" + std::to_string(i) + ">"; }

std::string Prompt::text() const { return system + "\n" + user_text; }

std::string template_text(TaskKind task, GraphMode mode, Resources res) {
  const bool tc = task == TaskKind::TripleClassification;
  const std::string object = tc ? "triple" : "question";
  std::string out(tc ? kTripleLead : kQuestionLead);
  if (mode != GraphMode::Graph && (res.names || res.descriptions)) {
    throw std::invalid_argument("no template for external resources without Graph mode");
  }
  switch (mode) {
    case GraphMode::Base:
      break;
    case GraphMode::Triple:
      out += "Given a sequence of graph embeddings {graph} that represent the anchor entities of the " +
             object + ". ";
      break;
    case GraphMode::Graph:
      if (res.names && res.descriptions) {
        out += "Given a subgraph of the " + object +
               " extracted from a knowledge graph. Each graph node contains an entity name and its "
               "textual description information. Here is a list of entity information: {name} and "
               "{description}. ";
        break;
      }
      out += "Given a sequence of graph embeddings {graph} that represent a subgraph of the " +
             object + " extracted from a knowledge graph. ";
      if (res.names) {
        out += "Each graph node contains an entity name. Here is a list of entity names: {name}. ";
      } else if (res.descriptions) {
        out += "Each graph node contains an entity description. Here is a list of entity textual "
               "descriptions: {description}. ";
      }
      break;
    default:
      throw std::invalid_argument("unknown graph mode");
  }
  out += tc ? kTripleTail : kQuestionTail;
  return out;
}

std::string render_triple(const KnowledgeGraph& kg, const Triple& t) {
  return "(" + kg.name(t.h) + ", " + kg.relations.surface(t.r) + ", " + kg.name(t.t) + ")";
}

std::string render_question(const KnowledgeGraph& kg, const Triple& t) {
  return "(" + kg.name(t.h) + ", " + kg.relations.surface(t.r) + ", ?)";
}

Prompt render_prompt(TaskKind task, const Triple& query, GraphMode mode, Resources res,
                     const Subgraph* subgraph, const KnowledgeGraph& kg) {
  const std::string tmpl = template_text(task, mode, res);
  if (mode != GraphMode::Base && !subgraph) {
    throw std::invalid_argument("Graph and Triple modes require a subgraph");
  }
  if (subgraph && subgraph->is_local()) {
    throw std::invalid_argument("prompts need a subgraph of knowledge-graph entities");
  }
  const bool tc = task == TaskKind::TripleClassification;
  Prompt p;
  p.task = task;
  p.system = std::string(kSystemInstruction);
  p.question = tc ? render_triple(kg, query) : render_question(kg, query);

  const bool has_graph = tmpl.find("{graph}") != std::string::npos;
  if (has_graph) {
    if (mode == GraphMode::Triple) {
      p.slot_entities.push_back(query.h);
      if (tc) p.slot_entities.push_back(query.t);
    } else {
      p.slot_entities = subgraph->nodes;
    }
    for (std::size_t i = 0; i < p.slot_entities.size(); ++i) {
      p.slots.push_back(slot_marker(i));
      p.slot_labels.push_back(kg.name(p.slot_entities[i]));
    }
  }

  std::map<std::string, std::string, std::less<>> values;
  values[tc ? "triple" : "question"] = p.question;
  values["graph"] = join(p.slots, ", ");
  if (res.names || res.descriptions) {
    std::vector<std::string> names, descs;
    for (auto e : subgraph->nodes) {
      names.push_back(kg.name(e));
      descs.push_back(description_of(kg, e));
    }
    if (res.names) values["name"] = join(names, "; ");
    if (res.descriptions) values["description"] = join(descs, "; ");
    if (res.names && res.descriptions) {
      p.resource_text = values["name"] + " and " + values["description"];
    } else {
      p.resource_text = res.names ? values["name"] : values["description"];
    }
  }
  p.user_text = fill(tmpl, values);
  return p;
}

nlohmann::ordered_json to_json(const Prompt& p) {
  nlohmann::ordered_json j;
  j["task"] = task_name(p.task);
  j["system"] = p.system;
  j["user_text"] = p.user_text;
  j["slots"] = p.slots;
  j["target"] = p.target ? nlohmann::ordered_json(*p.target) : nlohmann::ordered_json(nullptr);
  j["question"] = p.question;
  j["slot_entities"] = p.slot_entities;
  j["slot_labels"] = p.slot_labels;
  j["resource_text"] = p.resource_text;
  return j;
}

Prompt prompt_from_json(const nlohmann::json& j) {
  Prompt p;
  const std::string task = j.value("task", std::string("tc"));
  if (task == "tc") {
    p.task = TaskKind::TripleClassification;
  } else if (task == "lp") {
    p.task = TaskKind::LinkPrediction;
  } else {
    throw std::invalid_argument("unknown prompt task: " + task);
  }
  p.system = j.at("system").get<std::string>();
  p.user_text = j.at("user_text").get<std::string>();
  p.slots = j.at("slots").get<std::vector<std::string>>();
  if (j.contains("target") && !j["target"].is_null()) p.target = j["target"].get<std::string>();
  p.question = j.value("question", std::string());
  p.slot_entities = j.value("slot_entities", std::vector<EntityId>{});
  p.slot_labels = j.value("slot_labels", std::vector<std::string>{});
  p.resource_text = j.value("resource_text", std::string());
  if (!p.slot_entities.empty() && p.slot_entities.size() != p.slots.size()) {
    throw std::invalid_argument("prompt: slot_entities and slots differ in length");
  }
  return p;
}

void write_prompts_jsonl(const std::filesystem::path& path, const std::vector<Prompt>& prompts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : prompts) out << to_json(p).dump() << '\n';
}

std::vector<Prompt> read_prompts_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Prompt> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(prompt_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::string build_extraction_prompt(std::string_view document) {
  if (trim(document).empty()) throw std::invalid_argument("extraction prompt: empty document");
  std::string doc;
  for (std::size_t i = 0; i < document.size(); ++i) {
    if (document.substr(i, 7) == "Output:") {
      doc += "Output\\:";
      i += 6;
    } else {
      doc += document[i];
    }
  }
  std::string out(kExtractionInstruction);
  out += "\n\nExample\nInput: ";
  out += kExtractionExampleInput;
  out += "\nOutput: ";
  out += kExtractionExampleOutput;
  out += "\n\nInput: " + doc + "\nOutput:";
  return out;
}

ExtractionResult parse_extraction(std::string_view text) {
  if (const auto at = text.find("Output:"); at != std::string_view::npos) {
    text.remove_prefix(at + 7);
    std::size_t end = text.size();
    for (std::string_view stop : {"\n\n", "\r\n\r\n", "Input:"}) {
      end = std::min(end, text.find(stop) == std::string_view::npos ? end : text.find(stop));
    }
    text = text.substr(0, end);
  }
  ExtractionResult r;
  std::size_t i = 0;
  while ((i = text.find('(', i)) != std::string_view::npos) {
    std::size_t depth = 0, j = i;
    for (; j < text.size(); ++j) {
      if (text[j] == '(') ++depth;
      if (text[j] == ')' && --depth == 0) break;
    }
    if (j >= text.size()) {
      ++r.skipped;
      break;
    }
    std::vector<std::string> fields;
    std::string_view inner = text.substr(i + 1, j - i - 1);
    std::size_t from = 0;
    while (true) {
      const auto comma = inner.find(',', from);
      fields.push_back(trim(inner.substr(from, comma == std::string_view::npos ? inner.npos : comma - from)));
      if (comma == std::string_view::npos) break;
      from = comma + 1;
    }
    const bool ok = fields.size() == 3 &&
                    std::none_of(fields.begin(), fields.end(), [](const auto& f) { return f.empty(); });
    if (ok) {
      r.triples.push_back({fields[0], fields[1], fields[2]});
    } else {
      ++r.skipped;
    }
    i = j + 1;
  }
  if (r.triples.empty()) {
    throw std::runtime_error("extraction: no (source, relation, target) triple could be parsed (" +
                             std::to_string(r.skipped) + " malformed)");
  }
  return r;
}

ICLSelection retrieve_icl(const std::vector<ICLCandidate>& pool, std::span<const float> query,
                          std::size_t k) {
  double qn = 0.0;
  for (float v : query) qn += double(v) * v;
  if (std::abs(std::sqrt(qn) - 1.0) > 1e-4) {
    throw std::domain_error("retrieve_icl: query embedding must be L2-normalized");
  }
  ICLSelection sel;
  if (k > pool.size()) {
    sel.truncated = true;
    k = pool.size();
  }
  std::vector<double> score(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].embedding.size() != query.size()) {
      throw std::invalid_argument("retrieve_icl: candidate " + std::to_string(i) + " has dimension " +
                                  std::to_string(pool[i].embedding.size()));
    }
    double dot = 0.0, n = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
      dot += double(pool[i].embedding[j]) * query[j];
      n += double(pool[i].embedding[j]) * pool[i].embedding[j];
    }
    score[i] = n > 0.0 ? dot / std::sqrt(n) : 0.0;
  }
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return score[a] != score[b] ? score[a] > score[b] : a < b;
                    });
  sel.indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  return sel;
}

void prepend_icl_examples(Prompt& prompt, const std::vector<ICLCandidate>& pool,
                          const ICLSelection& selection) {
  std::string block;
  for (auto i : selection.indices) {
    const auto& c = pool.at(i);
    block += "Input: " + c.question + "\nOutput: " + c.answer + "\n\n";
  }
  prompt.user_text = block + prompt.user_text;
}

}  // namespace kgalign
