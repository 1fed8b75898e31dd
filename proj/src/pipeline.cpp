#include "kgalign/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <utility>

#include "kgalign/checkpoint.hpp"
#include "kgalign/graph.hpp"

#include <openssl/evp.h>

#ifndef KGALIGN_GIT_DESCRIBE
#define KGALIGN_GIT_DESCRIBE "unknown"
#endif

namespace kgalign {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kAlignmentDir = "checkpoints/alignment";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

void write_json_file(const fs::path& p, const ojson& j) { write_file(p, j.dump(2) + "\n"); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string task_tag(TaskKind t) { return t == TaskKind::TripleClassification ? "tc" : "lp"; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// --- Queries sidecar -----------------------------------------------------------

struct Query {
  Triple triple;
  bool label = true;
};

void write_queries(const fs::path& p, const KnowledgeGraph& kg, const std::vector<Query>& qs) {
  std::ostringstream os;
  for (const auto& q : qs) {
    os << kg.entities.surface(q.triple.h) << '\t' << kg.relations.surface(q.triple.r) << '\t'
       << kg.entities.surface(q.triple.t) << '\t' << (q.label ? 1 : 0) << '\n';
  }
  write_file(p, os.str());
}

std::vector<Query> read_queries(const fs::path& p, const KnowledgeGraph& kg) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::vector<Query> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (f.size() != 4) throw ParseError(p.string(), lineno, "expected 4 columns");
    auto h = kg.entities.find(f[0]);
    auto r = kg.relations.find(f[1]);
    auto t = kg.entities.find(f[2]);
    if (!h || !r || !t) throw ParseError(p.string(), lineno, "query refers to an unknown entity or relation");
    out.push_back({{*h, *r, *t}, f[3] == "1"});
  }
  return out;
}

std::string queries_file(const std::string& prompt_file) {
  const auto dot = prompt_file.rfind(".jsonl");
  return prompt_file.substr(0, dot) + "_queries.tsv";
}

// --- Prompt construction ----------------------------------------------------------

struct PromptSet {
  std::vector<Prompt> prompts;
  std::vector<Query> queries;
};

Prompt make_prompt(const KnowledgeGraph& kg, const AdjacencyIndex& index, TaskKind task, const Triple& q,
                   const Triple* exclude, std::size_t hops, std::size_t cap, GraphMode mode, Resources res) {
  Subgraph sub;
  const Subgraph* sp = nullptr;
  if (mode != GraphMode::Base) {
    std::vector<EntityId> anchors{q.h};
    if (task == TaskKind::TripleClassification && q.t != q.h) anchors.push_back(q.t);
    sub = extract_khop(index, anchors, hops, std::max(cap, anchors.size()), exclude);
    sp = &sub;
  }
  return render_prompt(task, q, mode, res, sp, kg);
}

PromptSet make_prompt_set(const KnowledgeGraph& kg, const AdjacencyIndex& index, const TripleSet& known,
                          TaskKind task, bool train, const RunConfig& cfg, std::size_t hops, GraphMode mode) {
  PromptSet out;
  const Rng neg_root = Rng(cfg.seed).split(train ? 0x6e656774726eULL : 0x6e6567747374ULL);
  auto add = [&](const Triple& q, bool label, const Triple* exclude) {
    Prompt p = make_prompt(kg, index, task, q, exclude, hops, cfg.node_cap, mode, cfg.resources);
    if (task == TaskKind::TripleClassification) {
      p.target = label ? "True" : "False";
    } else {
      p.target = kg.name(q.t);
    }
    out.prompts.push_back(std::move(p));
    out.queries.push_back({q, label});
  };

  const auto& triples = train ? kg.split.train : kg.split.test;
  const auto& labels = kg.split.test_labels;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const Triple& q = triples[i];
    const Triple* exclude = train ? &q : nullptr;
    if (task == TaskKind::LinkPrediction) {
      if (!train && labels && !(*labels)[i]) continue;
      add(q, true, exclude);
      continue;
    }
    if (!train && labels) {
      add(q, (*labels)[i], nullptr);
      continue;
    }
    add(q, true, exclude);
    const Triple neg = corrupt_triple(kg, known, q, neg_root.split(i).next_u64());
    add(neg, false, nullptr);
  }
  return out;
}

// --- Evaluation ---------------------------------------------------------------

std::vector<TuneExample> to_examples(const std::vector<Prompt>& prompts, const Tensor<float>* table) {
  std::vector<TuneExample> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) {
    TuneExample ex;
    ex.prompt = p;
    ex.target = p.target.value_or("");
    if (table) {
      ex.node_embs = gather_rows(*table, p.slot_entities);
    } else {
      ex.node_embs = Tensor<float>(0, 1);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

TCReport run_tc(const std::vector<TuneExample>& exs, const std::vector<bool>& gold, KnowledgeAdapter<float>& adapter,
                const Backend& backend, std::size_t workers, std::vector<TCPrediction>* out) {
  std::vector<TCPrediction> preds(exs.size());
  parallel_for(exs.size(), workers, [&](std::size_t i) { preds[i] = predict_tc(exs[i], adapter, backend); });
  std::vector<bool> pos(preds.size());
  std::size_t failures = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    pos[i] = preds[i].positive;
    failures += preds[i].parse_failure;
  }
  if (out) *out = std::move(preds);
  return tc_metrics(pos, gold, failures);
}

LPReport run_lp(const std::vector<TuneExample>& exs, const std::vector<EntityId>& gold,
                KnowledgeAdapter<float>& adapter, const Backend& backend, const EntityNameIndex& names,
                std::size_t workers, std::vector<LPPrediction>* out) {
  std::vector<LPPrediction> preds(exs.size());
  parallel_for(exs.size(), workers, [&](std::size_t i) { preds[i] = predict_lp(exs[i], adapter, backend, names); });
  std::vector<RankedAnswers> ranked(preds.size());
  std::size_t unmatched = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (const auto& a : preds[i].answers) ranked[i].push_back(a.entity);
    unmatched += preds[i].unmatched;
  }
  if (out) *out = std::move(preds);
  return lp_metrics(ranked, gold, kLinkPredictionAnswers, unmatched);
}

std::string sanitize_id(const std::string& id) {
  std::string s = id;
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
  }
  if (s.empty() || s == "." || s == "..") s = "_" + s;
  return s;
}

void copy_if_exists(const fs::path& from, const fs::path& to) {
  if (!fs::exists(from)) return;
  fs::create_directories(to.parent_path());
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

}  // namespace

// --- Config -------------------------------------------------------------------

std::string mode_name(GraphMode m) {
  switch (m) {
    case GraphMode::Base: return "base";
    case GraphMode::Triple: return "triple";
    case GraphMode::Graph: return "graph";
  }
  return "graph";
}

GraphMode mode_from_name(const std::string& s) {
  if (s == "base") return GraphMode::Base;
  if (s == "triple") return GraphMode::Triple;
  if (s == "graph") return GraphMode::Graph;
  throw std::invalid_argument("unknown instruction mode '" + s + "' (expected base, triple or graph)");
}

ojson to_json(const RunConfig& c) {
  ojson j;
  j["dataset"] = c.dataset.string();
  j["seed"] = c.seed;
  j["allow_unseen"] = c.allow_unseen;
  j["alignment"] = ojson(to_json(c.alignment));
  j["alignment"].erase("seed");
  j["tuning"] = {{"epochs", c.tuning.epochs},
                 {"batch_size", c.tuning.batch_size},
                 {"learning_rate", c.tuning.learning_rate},
                 {"warmup_ratio", c.tuning.warmup_ratio}};
  j["prompts"] = {{"hops", c.hops},
                  {"node_cap", c.node_cap},
                  {"mode", mode_name(c.mode)},
                  {"names", c.resources.names},
                  {"descriptions", c.resources.descriptions}};
  j["backend"] = {{"kind", c.backend},
                  {"workers", c.workers},
                  {"mock",
                   {{"slot_dim", c.mock.slot_dim},
                    {"feature_dim", c.mock.feature_dim},
                    {"text_weight", c.mock.text_weight},
                    {"gate_weight", c.mock.gate_weight},
                    {"logit_scale", c.mock.logit_scale},
                    {"mention_weight", c.mock.mention_weight},
                    {"seed", c.mock.seed}}},
                  {"http",
                   {{"endpoint", c.http.endpoint},
                    {"model", c.http.model},
                    {"token_env", c.http.token_env},
                    {"timeout_seconds", c.http.timeout_seconds},
                    {"max_retries", c.http.max_retries},
                    {"concurrency", c.http.concurrency},
                    {"backoff_seconds", c.http.backoff_seconds}}}};
  j["icl"] = {{"k", c.icl_k}};
  j["pairs"] = {{"description_type", c.description_type == DescriptionType::Name ? "name" : "paragraph"},
                {"linking_noise", c.linking_noise},
                {"global", c.use_global_pairs},
                {"extraction_responses", c.extraction_responses.string()}};
  j["robustness"] = {{"rates", c.robustness_rates}};
  return j;
}

namespace {

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw std::invalid_argument("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
    }
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  check_keys(j, "", {"dataset", "seed", "allow_unseen", "alignment", "tuning", "prompts", "backend", "icl", "pairs",
                     "robustness"});
  c.dataset = j.value("dataset", std::string());
  c.seed = j.value("seed", c.seed);
  c.allow_unseen = j.value("allow_unseen", c.allow_unseen);
  if (j.contains("alignment")) {
    check_keys(j["alignment"], "alignment", {"graph", "text", "local_epochs", "global_epochs", "batch_size",
                                             "learning_rate", "schedule", "vocab_min_count"});
    c.alignment = alignment_config_from_json(j["alignment"]);
  }
  if (j.contains("tuning")) {
    const auto& t = j["tuning"];
    check_keys(t, "tuning", {"epochs", "batch_size", "learning_rate", "warmup_ratio"});
    c.tuning.epochs = t.value("epochs", c.tuning.epochs);
    c.tuning.batch_size = t.value("batch_size", c.tuning.batch_size);
    c.tuning.learning_rate = t.value("learning_rate", c.tuning.learning_rate);
    c.tuning.warmup_ratio = t.value("warmup_ratio", c.tuning.warmup_ratio);
  }
  if (j.contains("prompts")) {
    const auto& p = j["prompts"];
    check_keys(p, "prompts", {"hops", "node_cap", "mode", "names", "descriptions"});
    c.hops = p.value("hops", c.hops);
    c.node_cap = p.value("node_cap", c.node_cap);
    c.mode = mode_from_name(p.value("mode", mode_name(c.mode)));
    c.resources.names = p.value("names", c.resources.names);
    c.resources.descriptions = p.value("descriptions", c.resources.descriptions);
  }
  if (j.contains("backend")) {
    const auto& b = j["backend"];
    check_keys(b, "backend", {"kind", "workers", "mock", "http"});
    c.backend = b.value("kind", c.backend);
    c.workers = b.value("workers", c.workers);
    if (b.contains("mock")) {
      const auto& m = b["mock"];
      check_keys(m, "backend.mock", {"slot_dim", "feature_dim", "text_weight", "gate_weight", "logit_scale", "mention_weight", "seed"});
      c.mock.slot_dim = m.value("slot_dim", c.mock.slot_dim);
      c.mock.feature_dim = m.value("feature_dim", c.mock.feature_dim);
      c.mock.text_weight = m.value("text_weight", c.mock.text_weight);
      c.mock.gate_weight = m.value("gate_weight", c.mock.gate_weight);
      c.mock.logit_scale = m.value("logit_scale", c.mock.logit_scale);
      c.mock.mention_weight = m.value("mention_weight", c.mock.mention_weight);
      c.mock.seed = m.value("seed", c.mock.seed);
    }
    if (b.contains("http")) {
      const auto& h = b["http"];
      check_keys(h, "backend.http", {"endpoint", "model", "token_env", "timeout_seconds", "max_retries",
                                     "concurrency", "backoff_seconds"});
      c.http.endpoint = h.value("endpoint", c.http.endpoint);
      c.http.model = h.value("model", c.http.model);
      c.http.token_env = h.value("token_env", c.http.token_env);
      c.http.timeout_seconds = h.value("timeout_seconds", c.http.timeout_seconds);
      c.http.max_retries = h.value("max_retries", c.http.max_retries);
      c.http.concurrency = h.value("concurrency", c.http.concurrency);
      c.http.backoff_seconds = h.value("backoff_seconds", c.http.backoff_seconds);
    }
  }
  if (j.contains("icl")) {
    check_keys(j["icl"], "icl", {"k"});
    c.icl_k = j["icl"].value("k", c.icl_k);
  }
  if (j.contains("pairs")) {
    const auto& p = j["pairs"];
    check_keys(p, "pairs", {"description_type", "linking_noise", "global", "extraction_responses"});
    const std::string type = p.value("description_type", std::string("paragraph"));
    if (type == "name") {
      c.description_type = DescriptionType::Name;
    } else if (type == "paragraph") {
      c.description_type = DescriptionType::Paragraph;
    } else {
      throw std::invalid_argument("config: pairs.description_type must be 'name' or 'paragraph'");
    }
    c.linking_noise = p.value("linking_noise", c.linking_noise);
    c.use_global_pairs = p.value("global", c.use_global_pairs);
    c.extraction_responses = p.value("extraction_responses", std::string());
  }
  if (j.contains("robustness")) {
    check_keys(j["robustness"], "robustness", {"rates"});
    c.robustness_rates = j["robustness"].value("rates", c.robustness_rates);
  }
  return c;
}

void validate(const RunConfig& c, const ConfigSources& sources) {
  auto src = [&](const std::string& key) {
    auto it = sources.find(key);
    return it == sources.end() ? std::string("default") : it->second;
  };
  if ((c.resources.names || c.resources.descriptions) && c.mode != GraphMode::Graph) {
    const std::string key = c.resources.names ? "prompts.names" : "prompts.descriptions";
    throw ConfigConflict("configuration conflict: " + key + "=true (" + src(key) +
                         ") requires prompts.mode=graph, but prompts.mode=" + mode_name(c.mode) + " (" +
                         src("prompts.mode") + ")");
  }
  if (c.backend != "mock" && c.backend != "mock-oracle" && c.backend != "http") {
    throw std::invalid_argument("backend.kind must be mock, mock-oracle or http, got '" + c.backend + "' (" +
                                src("backend.kind") + ")");
  }
  if (c.backend == "http" && c.http.endpoint.empty()) {
    throw ConfigConflict("configuration conflict: backend.kind=http (" + src("backend.kind") +
                         ") needs backend.http.endpoint, which is empty (" + src("backend.http.endpoint") + ")");
  }
  if (!(c.linking_noise >= 0.0 && c.linking_noise <= 1.0)) {
    throw std::invalid_argument("pairs.linking_noise must lie in [0, 1] (" + src("pairs.linking_noise") + ")");
  }
  for (double r : c.robustness_rates) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw std::invalid_argument("robustness.rates must lie in [0, 1] (" + src("robustness.rates") + ")");
    }
  }
  if (c.tuning.batch_size == 0) throw std::invalid_argument("tuning.batch_size must be >= 1");
  if (c.workers == 0) throw std::invalid_argument("backend.workers must be >= 1");
  c.alignment.graph.validate();
  c.alignment.text.validate();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string config_hash(const RunConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

std::map<std::string, std::string> artifact_hashes(const fs::path& run_dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(run_dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), run_dir).generic_string();
    if (rel == "manifest.json") continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

std::string artifact_digest(const std::map<std::string, std::string>& hashes) {
  std::string lines;
  for (const auto& [p, h] : hashes) lines += p + "  " + h + "\n";
  return sha256_hex(lines);
}

// --- Pipeline -------------------------------------------------------------------

Pipeline::Pipeline(RunConfig cfg, fs::path run_dir) : cfg_(std::move(cfg)), run_dir_(std::move(run_dir)) {
  cfg_.alignment.seed = cfg_.seed;
  cfg_.tuning.seed = cfg_.seed;
  validate(cfg_);
  fs::create_directories(run_dir_ / "reports");
}

void Pipeline::require(const std::string& rel, const std::string& producer) const {
  if (!fs::exists(path(rel))) {
    throw MissingInput("missing " + path(rel).string() + "; run `kgalign " + producer + "` first");
  }
}

void Pipeline::record(const std::string& stage, double seconds) {
  write_json_file(path("config.json"), to_json(cfg_));
  ojson m;
  if (fs::exists(path("manifest.json"))) {
    try {
      m = ojson::parse(read_file(path("manifest.json")));
    } catch (const std::exception&) {
      m = ojson::object();
    }
  }
  ojson stages = m.contains("stages") ? m["stages"] : ojson::object();
  stages[stage] = {{"wall_seconds", seconds}};

  ojson inputs = ojson::object();
  if (fs::exists(cfg_.dataset)) {
    std::map<std::string, std::string> sorted;
    for (const auto& e : fs::recursive_directory_iterator(cfg_.dataset)) {
      if (e.is_regular_file()) sorted[fs::relative(e.path(), cfg_.dataset).generic_string()] = sha256_file(e.path());
    }
    for (const auto& [k, v] : sorted) inputs[k] = v;
  }
  const auto hashes = artifact_hashes(run_dir_);
  ojson artifacts = ojson::object();
  for (const auto& [k, v] : hashes) artifacts[k] = v;

  ojson out;
  out["tool"] = "kgalign";
  out["git_describe"] = KGALIGN_GIT_DESCRIBE;
  out["config_hash"] = config_hash(cfg_);
  out["dataset"] = cfg_.dataset.string();
  out["inputs"] = inputs;
  out["artifacts"] = artifacts;
  out["artifact_digest"] = artifact_digest(hashes);
  out["stages"] = stages;
  write_json_file(path("manifest.json"), out);
}

KnowledgeGraph Pipeline::load_kg() const {
  if (cfg_.dataset.empty()) throw MissingInput("no dataset directory configured; pass --dataset DIR");
  if (!fs::is_directory(cfg_.dataset)) {
    throw MissingInput("dataset directory " + cfg_.dataset.string() + " does not exist");
  }
  LoadOptions opts;
  opts.allow_unseen = cfg_.allow_unseen;
  return load_dataset(cfg_.dataset, opts);
}

std::vector<NodeDescriptionPair> Pipeline::local_pairs(const KnowledgeGraph& kg, DescriptionType type,
                                                       double noise) const {
  std::vector<NodeDescriptionPair> pairs = build_node_pairs(kg);
  if (type == DescriptionType::Name) {
    for (auto& p : pairs) p.text = kg.name(p.entity);
  }
  if (noise > 0.0) {
    pairs = inject_description_noise(pairs, noise, pairs, Rng(cfg_.seed).split(0x6e6f697365ULL).next_u64());
  }
  return pairs;
}

std::vector<SubgraphDocumentPair> Pipeline::global_pairs(const KnowledgeGraph&) const {
  std::vector<SubgraphDocumentPair> out;
  const fs::path file = path("pairs/global_pairs.jsonl");
  if (!cfg_.use_global_pairs || !fs::exists(file)) return out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    std::vector<StringTriple> triples;
    for (const auto& t : j.at("triples")) {
      triples.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>()});
    }
    out.push_back({subgraph_from_triples(triples), j.at("document").get<std::string>()});
  }
  return out;
}

std::unique_ptr<Backend> Pipeline::make_backend(const KnowledgeGraph& kg) const {
  if (cfg_.backend == "http") return std::make_unique<HttpBackend>(cfg_.http);
  MockConfig mc = cfg_.mock;
  std::set<std::string> seen;
  for (const auto& n : kg.names) {
    if (seen.insert(n).second) mc.lp_candidates.push_back(n);
  }
  if (cfg_.backend == "mock-oracle") {
    for (const char* f : {"prompts/tc_train.jsonl", "prompts/tc_test.jsonl", "prompts/lp_train.jsonl",
                          "prompts/lp_test.jsonl", "prompts/lp_test_icl.jsonl"}) {
      if (!fs::exists(path(f))) continue;
      for (const auto& p : read_prompts_jsonl(path(f))) {
        if (p.target) mc.answer_key.emplace(p.text(), *p.target);
      }
    }
    if (mc.answer_key.empty()) {
      throw MissingInput("mock-oracle backend needs prompts with targets; run `kgalign build-prompts` first");
    }
  }
  return std::make_unique<MockBackend>(std::move(mc));
}

KnowledgeAdapter<float> Pipeline::fresh_adapter(const Backend& backend) const {
  return KnowledgeAdapter<float>(cfg_.alignment.graph.dim, backend.slot_dim(),
                                 Rng(cfg_.seed).split(0x61646170ULL).next_u64());
}

std::vector<TuneExample> Pipeline::examples(const std::string& prompt_file, const Tensor<float>& table) const {
  return to_examples(read_prompts_jsonl(path(prompt_file)), &table);
}

LPReport Pipeline::evaluate_lp(const KnowledgeGraph& kg, const Tensor<float>& table, KnowledgeAdapter<float>& adapter,
                               const Backend& backend, const std::string& prompt_file,
                               std::vector<LPPrediction>* predictions) const {
  const auto prompts = read_prompts_jsonl(path(prompt_file));
  const auto queries = read_queries(path(queries_file(prompt_file)), kg);
  if (queries.size() != prompts.size()) {
    throw std::runtime_error(prompt_file + " and its queries file disagree in length");
  }
  std::vector<EntityId> gold;
  for (const auto& q : queries) gold.push_back(q.triple.t);
  const EntityNameIndex names(kg);
  const bool scoring = backend.supports_scoring();
  const auto exs = to_examples(prompts, scoring ? &table : nullptr);
  const std::size_t workers = cfg_.backend == "http" ? cfg_.http.concurrency : cfg_.workers;
  return run_lp(exs, gold, adapter, backend, names, workers, predictions);
}

std::string Pipeline::ingest() {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg_.dataset.empty() || !fs::is_directory(cfg_.dataset)) {
    throw MissingInput("dataset directory '" + cfg_.dataset.string() + "' does not exist; pass --dataset DIR");
  }
  DatasetStats st;
  LoadOptions opts;
  opts.allow_unseen = cfg_.allow_unseen;
  const KnowledgeGraph kg = load_dataset(cfg_.dataset, opts, &st);
  ojson r;
  r["entities"] = st.entities;
  r["relations"] = st.relations;
  r["train"] = st.train;
  r["valid"] = st.valid;
  r["test"] = st.test;
  r["unseen_entities"] = st.unseen_entities;
  r["duplicates_dropped"] = st.duplicates_dropped;
  r["described_entities"] = st.described_entities;
  r["classification_labels"] = kg.split.test_labels.has_value();
  fs::create_directories(path("reports"));
  write_json_file(path("reports/ingest.json"), r);
  record("ingest", seconds_since(t0));
  return "ingested " + std::to_string(st.entities) + " entities, " + std::to_string(st.relations) +
         " relations, " + std::to_string(st.train) + "/" + std::to_string(st.valid) + "/" +
         std::to_string(st.test) + " train/valid/test triples";
}

std::string Pipeline::align() {
  const auto t0 = std::chrono::steady_clock::now();
  const KnowledgeGraph kg = load_kg();
  const auto local = local_pairs(kg, cfg_.description_type, cfg_.linking_noise);
  const auto global = global_pairs(kg);
  AlignmentCheckpoint ckpt = train_alignment(kg, local, global, cfg_.alignment);
  save_alignment(path(kAlignmentDir), ckpt);
  write_loss_csv(path("reports/alignment_loss.csv"), ckpt.metadata.losses);
  const double r1 = local_retrieval(ckpt.model, kg, ckpt.tokenizer, local, cfg_.alignment.batch_size);
  ojson r;
  r["local_pairs"] = local.size();
  r["global_pairs"] = global.size();
  r["initial_loss"] = ckpt.metadata.losses.front().total();
  r["final_loss"] = ckpt.metadata.losses.back().total();
  r["retrieval_at_1"] = r1;
  write_json_file(path("reports/alignment.json"), r);
  record("align", seconds_since(t0));
  return "aligned on " + std::to_string(local.size()) + " node pairs and " + std::to_string(global.size()) +
         " subgraph pairs; loss " + fmt(r["initial_loss"]) + " -> " + fmt(r["final_loss"]) +
         ", retrieval@1 " + fmt(r1);
}

std::string Pipeline::extract_pairs() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path docs_file = cfg_.dataset / "documents.tsv";
  if (!fs::exists(docs_file)) {
    throw MissingInput("missing " + docs_file.string() + "; add a documents.tsv (id<TAB>text) to the dataset");
  }
  std::vector<std::pair<std::string, std::string>> docs;
  {
    std::ifstream in(docs_file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(docs_file.string(), lineno, "expected id<TAB>text");
      docs.emplace_back(line.substr(0, tab), unescape_field(line.substr(tab + 1)));
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const std::string name = sanitize_id(docs[i].first) + ".txt";
    const fs::path cache = path("extractions/" + name);
    if (fs::exists(cache)) continue;
    if (!cfg_.extraction_responses.empty()) copy_if_exists(cfg_.extraction_responses / name, cache);
    if (!fs::exists(cache)) todo.push_back(i);
  }
  if (!todo.empty()) {
    if (cfg_.backend != "http") {
      throw MissingInput("no cached extraction response for document '" + docs[todo.front()].first +
                         "'; pass --extraction-responses DIR or use --backend http");
    }
    HttpBackend http(cfg_.http);
    parallel_for(todo.size(), cfg_.http.concurrency, [&](std::size_t k) {
      const auto& [id, text] = docs[todo[k]];
      const auto replies = http.complete("", build_extraction_prompt(text), 1);
      if (replies.empty()) throw BackendError("empty extraction response for document '" + id + "'");
      write_file(path("extractions/" + sanitize_id(id) + ".txt"), replies.front());
    });
  }

  std::ostringstream pairs;
  std::size_t parsed = 0, failed = 0, skipped = 0, triples = 0;
  ojson failures = ojson::array();
  for (const auto& [id, text] : docs) {
    const std::string raw = read_file(path("extractions/" + sanitize_id(id) + ".txt"));
    try {
      const auto res = parse_extraction(raw);
      ojson line;
      line["id"] = id;
      line["document"] = text;
      line["triples"] = ojson::array();
      for (const auto& t : res.triples) line["triples"].push_back({t[0], t[1], t[2]});
      pairs << line.dump() << '\n';
      ++parsed;
      skipped += res.skipped;
      triples += res.triples.size();
    } catch (const std::runtime_error& e) {
      ++failed;
      failures.push_back({{"id", id}, {"error", e.what()}});
    }
  }
  write_file(path("pairs/global_pairs.jsonl"), pairs.str());
  ojson r;
  r["documents"] = docs.size();
  r["parsed"] = parsed;
  r["failed"] = failed;
  r["skipped_groups"] = skipped;
  r["triples"] = triples;
  r["failures"] = failures;
  write_json_file(path("reports/extraction.json"), r);
  record("extract-pairs", seconds_since(t0));
  return "extracted " + std::to_string(triples) + " triples from " + std::to_string(parsed) + "/" +
         std::to_string(docs.size()) + " documents (" + std::to_string(skipped) + " malformed groups skipped)";
}

std::string Pipeline::build_prompts() {
  const auto t0 = std::chrono::steady_clock::now();
  const KnowledgeGraph kg = load_kg();
  const AdjacencyIndex index = build_index(kg);
  const TripleSet known = kg.all_triples();
  fs::create_directories(path("prompts"));
  std::ostringstream summary;
  for (TaskKind task : {TaskKind::TripleClassification, TaskKind::LinkPrediction}) {
    for (bool train : {true, false}) {
      const auto set = make_prompt_set(kg, index, known, task, train, cfg_, cfg_.hops, cfg_.mode);
      const std::string base = "prompts/" + task_tag(task) + (train ? "_train" : "_test");
      write_prompts_jsonl(path(base + ".jsonl"), set.prompts);
      write_queries(path(base + "_queries.tsv"), kg, set.queries);
      summary << (summary.tellp() ? ", " : "") << base.substr(8) << " " << set.prompts.size();
    }
  }
  record("build-prompts", seconds_since(t0));
  return "wrote prompts: " + summary.str();
}

std::string Pipeline::tune(const std::string& task) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> tasks;
  if (task == "all") {
    tasks = {"tc", "lp"};
  } else if (task == "tc" || task == "lp") {
    tasks = {task};
  } else {
    throw std::invalid_argument("tune: task must be tc, lp or all");
  }
  require(std::string(kAlignmentDir) + "/alignment.bin", "align");
  for (const auto& t : tasks) require("prompts/" + t + "_train.jsonl", "build-prompts");

  const KnowledgeGraph kg = load_kg();
  AlignmentCheckpoint ckpt = load_alignment(path(kAlignmentDir));
  const auto backend = make_backend(kg);
  if (!backend->supports_scoring()) {
    throw BackendError("backend '" + backend->name() + "' cannot score targets, so it cannot tune the adapter; "
                       "use --backend mock");
  }

  ojson report = ojson::object();
  if (fs::exists(path("reports/tune.json"))) report = ojson::parse(read_file(path("reports/tune.json")));
  std::ostringstream summary;
  for (const auto& t : tasks) {
    const auto exs = examples("prompts/" + t + "_train.jsonl", ckpt.embeddings);
    auto params_before = ckpt.model.parameters();
    const std::string enc_before = sha256_hex(encode_checkpoint({params_before.begin(), params_before.end()}));
    const std::string table_before =
        sha256_hex(std::string(reinterpret_cast<const char*>(ckpt.embeddings.data()),
                               ckpt.embeddings.size() * sizeof(float)));
    const std::string backend_before = sha256_hex(backend->state_bytes());

    KnowledgeAdapter<float> adapter = fresh_adapter(*backend);
    const TuneLog log = tune_adapter(exs, adapter, *backend, cfg_.tuning);

    auto params_after = ckpt.model.parameters();
    const std::string enc_after = sha256_hex(encode_checkpoint({params_after.begin(), params_after.end()}));
    const std::string table_after =
        sha256_hex(std::string(reinterpret_cast<const char*>(ckpt.embeddings.data()),
                               ckpt.embeddings.size() * sizeof(float)));
    const std::string backend_after = sha256_hex(backend->state_bytes());

    save_checkpoint(path("checkpoints/adapter_" + t + ".bin"), std::as_const(adapter).parameters());
    {
      std::ostringstream csv;
      csv << "epoch,loss\n" << std::setprecision(9);
      for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) csv << e << ',' << log.epoch_loss[e] << '\n';
      write_file(path("reports/tune_" + t + "_loss.csv"), csv.str());
    }
    const double initial = log.epoch_loss.front();
    const double final_loss = log.epoch_loss.back();
    report[t] = {{"examples", exs.size()},
                 {"backend", backend->name()},
                 {"initial_loss", initial},
                 {"final_loss", final_loss},
                 {"loss_ratio", initial > 0.0 ? final_loss / initial : 0.0},
                 {"epoch_loss", log.epoch_loss},
                 {"graph_encoder_sha256", {{"before", enc_before}, {"after", enc_after}}},
                 {"embedding_table_sha256", {{"before", table_before}, {"after", table_after}}},
                 {"backend_state_sha256", {{"before", backend_before}, {"after", backend_after}}},
                 {"frozen", enc_before == enc_after && table_before == table_after && backend_before == backend_after}};
    summary << (summary.tellp() ? "; " : "") << t << " adapter loss " << fmt(initial) << " -> " << fmt(final_loss)
            << " over " << exs.size() << " prompts";
  }
  write_json_file(path("reports/tune.json"), report);
  record("tune", seconds_since(t0));
  return summary.str();
}

std::string Pipeline::eval_tc(bool emit_plots) {
  const auto t0 = std::chrono::steady_clock::now();
  require("prompts/tc_test.jsonl", "build-prompts");
  const KnowledgeGraph kg = load_kg();
  const auto backend = make_backend(kg);
  const bool scoring = backend->supports_scoring();
  Tensor<float> table;
  KnowledgeAdapter<float> adapter = fresh_adapter(*backend);
  if (scoring) {
    require(std::string(kAlignmentDir) + "/alignment.bin", "align");
    require("checkpoints/adapter_tc.bin", "tune");
    table = load_alignment(path(kAlignmentDir)).embeddings;
    assign_parameters(load_checkpoint(path("checkpoints/adapter_tc.bin")), adapter.parameters());
  }
  const auto prompts = read_prompts_jsonl(path("prompts/tc_test.jsonl"));
  const auto queries = read_queries(path("prompts/tc_test_queries.tsv"), kg);
  if (queries.size() != prompts.size()) throw std::runtime_error("tc_test prompts and queries disagree in length");
  std::vector<bool> gold;
  for (const auto& q : queries) gold.push_back(q.label);
  const std::size_t workers = cfg_.backend == "http" ? cfg_.http.concurrency : cfg_.workers;
  std::vector<TCPrediction> preds;
  const TCReport rep = run_tc(to_examples(prompts, scoring ? &table : nullptr), gold, adapter, *backend, workers, &preds);

  write_json_file(path("reports/tc_report.json"), tc_report_document(rep));
  write_tc_csv(path("reports/tc_report.csv"), rep);
  std::ostringstream lines;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ojson l = {{"question", prompts[i].question},
               {"gold", bool(gold[i])},
               {"raw", preds[i].raw},
               {"positive", preds[i].positive},
               {"parse_failure", preds[i].parse_failure}};
    lines << l.dump() << '\n';
  }
  write_file(path("reports/tc_predictions.jsonl"), lines.str());

  if (emit_plots && scoring) {
    const AdjacencyIndex index = build_index(kg);
    const TripleSet known = kg.all_triples();
    copy_if_exists(path("reports/alignment_loss.csv"), path("plots/alignment_loss.csv"));
    copy_if_exists(path("reports/tune_tc_loss.csv"), path("plots/tune_tc_loss.csv"));
    std::ostringstream hop;
    hop << "hops,accuracy,f1\n" << std::fixed << std::setprecision(6);
    for (std::size_t k = 0; k <= 3; ++k) {
      const auto set = make_prompt_set(kg, index, known, TaskKind::TripleClassification, false, cfg_, k, cfg_.mode);
      std::vector<bool> g;
      for (const auto& q : set.queries) g.push_back(q.label);
      const auto r = run_tc(to_examples(set.prompts, &table), g, adapter, *backend, workers, nullptr);
      hop << k << ',' << r.accuracy << ',' << r.f1 << '\n';
    }
    write_file(path("plots/hop_sweep_tc.csv"), hop.str());
    std::ostringstream abl;
    abl << "mode,accuracy,f1\n" << std::fixed << std::setprecision(6);
    for (GraphMode m : {GraphMode::Base, GraphMode::Triple, GraphMode::Graph}) {
      RunConfig c = cfg_;
      c.resources = {};
      const auto set = make_prompt_set(kg, index, known, TaskKind::TripleClassification, false, c, c.hops, m);
      std::vector<bool> g;
      for (const auto& q : set.queries) g.push_back(q.label);
      const auto r = run_tc(to_examples(set.prompts, &table), g, adapter, *backend, workers, nullptr);
      abl << mode_name(m) << ',' << r.accuracy << ',' << r.f1 << '\n';
    }
    write_file(path("plots/ablation_modes_tc.csv"), abl.str());
  }
  record("eval-tc", seconds_since(t0));
  return "triple classification: accuracy " + fmt(rep.accuracy) + ", precision " + fmt(rep.precision) + ", recall " +
         fmt(rep.recall) + ", F1 " + fmt(rep.f1) + " over " + std::to_string(rep.total) + " triples (" +
         std::to_string(rep.parse_failures) + " parse failures)";
}

std::string Pipeline::eval_lp(bool use_icl, bool emit_plots) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string file = use_icl ? "prompts/lp_test_icl.jsonl" : "prompts/lp_test.jsonl";
  require(file, use_icl ? "icl-build" : "build-prompts");
  const KnowledgeGraph kg = load_kg();
  const auto backend = make_backend(kg);
  const bool scoring = backend->supports_scoring();
  Tensor<float> table;
  KnowledgeAdapter<float> adapter = fresh_adapter(*backend);
  if (scoring) {
    require(std::string(kAlignmentDir) + "/alignment.bin", "align");
    require("checkpoints/adapter_lp.bin", "tune");
    table = load_alignment(path(kAlignmentDir)).embeddings;
    assign_parameters(load_checkpoint(path("checkpoints/adapter_lp.bin")), adapter.parameters());
  }
  std::vector<LPPrediction> preds;
  const LPReport rep = evaluate_lp(kg, table, adapter, *backend, file, &preds);
  const std::string stem = use_icl ? "reports/lp_icl_" : "reports/lp_";
  write_json_file(path(stem + "report.json"), lp_report_document(rep));
  write_lp_csv(path(stem + "report.csv"), rep);
  const auto prompts = read_prompts_jsonl(path(file));
  std::ostringstream lines;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ojson answers = ojson::array();
    for (const auto& a : preds[i].answers) {
      answers.push_back({{"raw", a.raw},
                         {"normalized", a.normalized},
                         {"entity", a.entity ? ojson(kg.entities.surface(*a.entity)) : ojson(nullptr)}});
    }
    lines << ojson({{"question", prompts[i].question}, {"gold", prompts[i].target.value_or("")}, {"answers", answers}})
                 .dump()
          << '\n';
  }
  write_file(path(stem + "predictions.jsonl"), lines.str());

  if (emit_plots && scoring) {
    const AdjacencyIndex index = build_index(kg);
    const TripleSet known = kg.all_triples();
    const EntityNameIndex names(kg);
    const std::size_t workers = cfg_.workers;
    copy_if_exists(path("reports/alignment_loss.csv"), path("plots/alignment_loss.csv"));
    copy_if_exists(path("reports/tune_lp_loss.csv"), path("plots/tune_lp_loss.csv"));
    auto eval_set = [&](const PromptSet& set) {
      std::vector<EntityId> g;
      for (const auto& q : set.queries) g.push_back(q.triple.t);
      return run_lp(to_examples(set.prompts, &table), g, adapter, *backend, names, workers, nullptr);
    };
    std::ostringstream hop;
    hop << "hops,hits_at_1,mrr\n" << std::fixed << std::setprecision(6);
    for (std::size_t k = 0; k <= 3; ++k) {
      const auto r = eval_set(make_prompt_set(kg, index, known, TaskKind::LinkPrediction, false, cfg_, k, cfg_.mode));
      hop << k << ',' << r.hits_at_1 << ',' << r.mrr << '\n';
    }
    write_file(path("plots/hop_sweep_lp.csv"), hop.str());
    std::ostringstream abl;
    abl << "mode,hits_at_1,mrr\n" << std::fixed << std::setprecision(6);
    for (GraphMode m : {GraphMode::Base, GraphMode::Triple, GraphMode::Graph}) {
      RunConfig c = cfg_;
      c.resources = {};
      const auto r = eval_set(make_prompt_set(kg, index, known, TaskKind::LinkPrediction, false, c, c.hops, m));
      abl << mode_name(m) << ',' << r.hits_at_1 << ',' << r.mrr << '\n';
    }
    write_file(path("plots/ablation_modes_lp.csv"), abl.str());
  }
  record(use_icl ? "eval-lp-icl" : "eval-lp", seconds_since(t0));
  return std::string("link prediction") + (use_icl ? " (ICL)" : "") + ": Hits@1 " + fmt(rep.hits_at_1) + ", Hits@" +
         std::to_string(rep.k) + " " + fmt(rep.hits_at_k) + ", MRR " + fmt(rep.mrr) + " over " +
         std::to_string(rep.queries) + " queries (" + std::to_string(rep.unmatched) + " unmatched answers)";
}

std::string Pipeline::icl_build() {
  const auto t0 = std::chrono::steady_clock::now();
  require(std::string(kAlignmentDir) + "/alignment.bin", "align");
  require("prompts/lp_train.jsonl", "build-prompts");
  require("prompts/lp_test.jsonl", "build-prompts");
  const KnowledgeGraph kg = load_kg();
  const AdjacencyIndex index = build_index(kg);
  AlignmentCheckpoint ckpt = load_alignment(path(kAlignmentDir));

  auto embed = [&](const Triple& q, const Triple* exclude) {
    const std::vector<EntityId> anchors{q.h};
    const Subgraph sub = extract_khop(index, anchors, cfg_.hops, cfg_.node_cap, exclude);
    const Tensor<float> v = l2_normalize_rows(ckpt.model.graph.encode_subgraph(sub)).value();
    return std::vector<float>(v.data(), v.data() + v.size());
  };

  const auto train_prompts = read_prompts_jsonl(path("prompts/lp_train.jsonl"));
  const auto train_queries = read_queries(path("prompts/lp_train_queries.tsv"), kg);
  std::vector<ICLCandidate> pool;
  for (std::size_t i = 0; i < train_prompts.size(); ++i) {
    pool.push_back({train_prompts[i].question, embed(train_queries[i].triple, &train_queries[i].triple),
                    train_prompts[i].target.value_or("")});
  }
  auto test_prompts = read_prompts_jsonl(path("prompts/lp_test.jsonl"));
  const auto test_queries = read_queries(path("prompts/lp_test_queries.tsv"), kg);
  std::ostringstream sel;
  std::size_t truncated = 0;
  for (std::size_t i = 0; i < test_prompts.size(); ++i) {
    const auto q = embed(test_queries[i].triple, nullptr);
    const ICLSelection s = retrieve_icl(pool, q, cfg_.icl_k);
    truncated += s.truncated;
    prepend_icl_examples(test_prompts[i], pool, s);
    sel << ojson({{"question", test_prompts[i].question}, {"examples", s.indices}, {"truncated", s.truncated}}).dump()
        << '\n';
  }
  write_prompts_jsonl(path("prompts/lp_test_icl.jsonl"), test_prompts);
  fs::copy_file(path("prompts/lp_test_queries.tsv"), path("prompts/lp_test_icl_queries.tsv"),
                fs::copy_options::overwrite_existing);
  write_file(path("reports/icl_selection.jsonl"), sel.str());
  record("icl-build", seconds_since(t0));
  return "selected " + std::to_string(cfg_.icl_k) + " examples for " + std::to_string(test_prompts.size()) +
         " queries from a pool of " + std::to_string(pool.size()) +
         (truncated ? " (pool smaller than k for " + std::to_string(truncated) + " queries)" : "");
}

std::string Pipeline::robustness() {
  const auto t0 = std::chrono::steady_clock::now();
  require("prompts/lp_train.jsonl", "build-prompts");
  require("prompts/lp_test.jsonl", "build-prompts");
  const KnowledgeGraph kg = load_kg();
  const auto global = global_pairs(kg);
  const auto backend = make_backend(kg);
  if (!backend->supports_scoring()) {
    throw BackendError("robustness sweep tunes adapters and needs a scoring backend; use --backend mock");
  }
  std::vector<std::pair<DescriptionType, double>> arms{{DescriptionType::Name, 0.0}};
  for (double r : cfg_.robustness_rates) arms.emplace_back(DescriptionType::Paragraph, r);

  std::vector<RobustnessRow> rows;
  ojson detail = ojson::array();
  for (const auto& [type, rate] : arms) {
    const auto local = local_pairs(kg, type, rate);
    AlignmentCheckpoint ckpt = train_alignment(kg, local, global, cfg_.alignment);
    const auto exs = examples("prompts/lp_train.jsonl", ckpt.embeddings);
    KnowledgeAdapter<float> adapter = fresh_adapter(*backend);
    const TuneLog log = tune_adapter(exs, adapter, *backend, cfg_.tuning);
    const LPReport rep = evaluate_lp(kg, ckpt.embeddings, adapter, *backend, "prompts/lp_test.jsonl");
    const std::string label = type == DescriptionType::Name ? "Name" : "Paragraph";
    rows.push_back({label, rate, rep});
    detail.push_back({{"description_type", label},
                      {"linking_noise", rate},
                      {"alignment_final_loss", ckpt.metadata.losses.back().total()},
                      {"tune_loss", log.epoch_loss},
                      {"metrics", to_json(rep)}});
  }
  write_robustness_csv(path("reports/robustness.csv"), rows);
  ojson doc;
  doc["header"] = lp_report_document(LPReport{})["header"];
  doc["rows"] = detail;
  write_json_file(path("reports/robustness.json"), doc);
  record("robustness", seconds_since(t0));
  std::ostringstream s;
  s << "robustness sweep:";
  for (const auto& r : rows) {
    s << "\n  " << r.description_type << ' ' << static_cast<int>(r.noise * 100.0 + 0.5) << "%  Hit@1 "
      << fmt(r.report.hits_at_1) << "  MRR " << fmt(r.report.mrr);
  }
  return s.str();
}

std::string Pipeline::export_embeddings() {
  const auto t0 = std::chrono::steady_clock::now();
  require(std::string(kAlignmentDir) + "/alignment.bin", "align");
  const AlignmentCheckpoint ckpt = load_alignment(path(kAlignmentDir));
  const Tensor<float>& e = ckpt.embeddings;
  std::ostringstream os;
  os << "id";
  for (std::size_t j = 0; j < e.cols(); ++j) os << ",e" << j;
  os << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    os << i;
    for (std::size_t j = 0; j < e.cols(); ++j) os << ',' << e(i, j);
    os << '\n';
  }
  write_file(path("reports/embeddings.csv"), os.str());
  record("export-embeddings", seconds_since(t0));
  return "wrote " + std::to_string(e.rows()) + " x " + std::to_string(e.cols()) + " embeddings to " +
         path("reports/embeddings.csv").string();
}

}  // namespace kgalign
