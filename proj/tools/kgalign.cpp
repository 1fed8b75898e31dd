// kgalign: command-line driver for the alignment / instruction-tuning pipeline.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kgalign/fixture.hpp"
#include "kgalign/pipeline.hpp"

namespace {

using kgalign::ConfigSources;
using kgalign::RunConfig;

// Exit codes.
constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Options of one subcommand. Flag values land in `scratch`; only flags that
// were actually given are copied over the config-file values.
struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::string run_dir;
  std::vector<std::function<void(RunConfig&, ConfigSources&)>> apply;
};

struct Scratch {
  RunConfig cfg;
  std::string mode = "graph";
  std::string description_type = "paragraph";
  std::string schedule = "sequential";
  std::string dataset;
  std::string extraction_responses;
  std::size_t dim = 128;
  double dropout = 0.1;
};

void add_config_options(Command& cmd, Scratch& s) {
  auto* app = cmd.app;
  auto bind = [&](auto& var, const std::string& flag, const std::string& key, const std::string& help,
                  std::function<void(RunConfig&)> copy) {
    CLI::Option* o = app->add_option(flag, var, help)->capture_default_str();
    cmd.apply.push_back([o, copy, key, flag](RunConfig& c, ConfigSources& src) {
      if (o->count() == 0) return;
      copy(c);
      src[key] = "flag " + flag;
    });
  };
  auto flag = [&](bool& var, const std::string& name, const std::string& key, const std::string& help,
                  std::function<void(RunConfig&)> copy) {
    CLI::Option* o = app->add_flag(name, var, help);
    cmd.apply.push_back([o, copy, key, name](RunConfig& c, ConfigSources& src) {
      if (o->count() == 0) return;
      copy(c);
      src[key] = "flag " + name;
    });
  };
  Scratch* S = &s;
  RunConfig* F = &S->cfg;

  app->add_option("--config", cmd.config_file, "JSON run configuration; flags override its values");
  bind(S->dataset, "--dataset", "dataset", "Dataset directory (train.tsv, valid.tsv, test.tsv, ...)",
       [=](RunConfig& c) { c.dataset = S->dataset; });
  bind(F->seed, "--seed", "seed", "Seed for every random choice in the run", [=](RunConfig& c) { c.seed = F->seed; });
  flag(F->allow_unseen, "--allow-unseen", "allow_unseen", "Add unseen valid/test entities instead of rejecting them",
       [=](RunConfig& c) { c.allow_unseen = F->allow_unseen; });

  bind(F->alignment.local_epochs, "--local-epochs", "alignment.local_epochs", "Local (node-description) epochs",
       [=](RunConfig& c) { c.alignment.local_epochs = F->alignment.local_epochs; });
  bind(F->alignment.global_epochs, "--global-epochs", "alignment.global_epochs", "Global (subgraph-document) epochs",
       [=](RunConfig& c) { c.alignment.global_epochs = F->alignment.global_epochs; });
  bind(F->alignment.batch_size, "--align-batch-size", "alignment.batch_size", "Alignment batch size",
       [=](RunConfig& c) { c.alignment.batch_size = F->alignment.batch_size; });
  bind(F->alignment.learning_rate, "--align-lr", "alignment.learning_rate", "Alignment learning rate",
       [=](RunConfig& c) { c.alignment.learning_rate = F->alignment.learning_rate; });
  bind(S->schedule, "--schedule", "alignment.schedule", "Alignment schedule: sequential or joint",
       [=](RunConfig& c) {
         if (S->schedule == "sequential") {
           c.alignment.schedule = kgalign::AlignmentSchedule::Sequential;
         } else if (S->schedule == "joint") {
           c.alignment.schedule = kgalign::AlignmentSchedule::Joint;
         } else {
           throw UsageError("--schedule must be sequential or joint");
         }
       });
  bind(S->dim, "--dim", "alignment.dim", "Graph and text embedding width",
       [=](RunConfig& c) { c.alignment.graph.dim = c.alignment.text.dim = S->dim; });
  bind(F->alignment.graph.layers, "--graph-layers", "alignment.graph.layers", "Graph encoder layers",
       [=](RunConfig& c) { c.alignment.graph.layers = F->alignment.graph.layers; });
  bind(F->alignment.graph.heads, "--graph-heads", "alignment.graph.heads", "Graph encoder attention heads",
       [=](RunConfig& c) { c.alignment.graph.heads = F->alignment.graph.heads; });
  bind(F->alignment.text.layers, "--text-layers", "alignment.text.layers", "Text encoder layers",
       [=](RunConfig& c) { c.alignment.text.layers = F->alignment.text.layers; });
  bind(S->dropout, "--dropout", "alignment.dropout", "Dropout in both encoders",
       [=](RunConfig& c) { c.alignment.graph.dropout = c.alignment.text.dropout = S->dropout; });
  bind(F->alignment.vocab_min_count, "--vocab-min-count", "alignment.vocab_min_count",
       "Minimum token count for the text vocabulary",
       [=](RunConfig& c) { c.alignment.vocab_min_count = F->alignment.vocab_min_count; });

  bind(F->tuning.epochs, "--tune-epochs", "tuning.epochs", "Adapter tuning epochs",
       [=](RunConfig& c) { c.tuning.epochs = F->tuning.epochs; });
  bind(F->tuning.batch_size, "--tune-batch-size", "tuning.batch_size", "Adapter tuning batch size",
       [=](RunConfig& c) { c.tuning.batch_size = F->tuning.batch_size; });
  bind(F->tuning.learning_rate, "--tune-lr", "tuning.learning_rate", "Adapter learning rate",
       [=](RunConfig& c) { c.tuning.learning_rate = F->tuning.learning_rate; });
  bind(F->tuning.warmup_ratio, "--warmup-ratio", "tuning.warmup_ratio", "Fraction of tuning steps spent warming up",
       [=](RunConfig& c) { c.tuning.warmup_ratio = F->tuning.warmup_ratio; });

  bind(F->hops, "--hops", "prompts.hops", "Neighborhood hops around query anchors",
       [=](RunConfig& c) { c.hops = F->hops; });
  bind(F->node_cap, "--node-cap", "prompts.node_cap", "Maximum subgraph nodes per prompt",
       [=](RunConfig& c) { c.node_cap = F->node_cap; });
  bind(S->mode, "--mode", "prompts.mode", "Instruction mode: base, triple or graph",
       [=](RunConfig& c) { c.mode = kgalign::mode_from_name(S->mode); });
  flag(F->resources.names, "--names", "prompts.names", "Add the entity-name resource block",
       [=](RunConfig& c) { c.resources.names = F->resources.names; });
  flag(F->resources.descriptions, "--descriptions", "prompts.descriptions", "Add the entity-description resource block",
       [=](RunConfig& c) { c.resources.descriptions = F->resources.descriptions; });

  bind(F->backend, "--backend", "backend.kind", "Language-model backend: mock, mock-oracle or http",
       [=](RunConfig& c) { c.backend = F->backend; });
  bind(F->workers, "--workers", "backend.workers", "Inference worker threads (mock backends)",
       [=](RunConfig& c) { c.workers = F->workers; });
  bind(F->mock.slot_dim, "--slot-dim", "backend.mock.slot_dim", "Mock backend soft-token width",
       [=](RunConfig& c) { c.mock.slot_dim = F->mock.slot_dim; });
  bind(F->mock.feature_dim, "--mock-feature-dim", "backend.mock.feature_dim", "Mock backend hashed feature width",
       [=](RunConfig& c) { c.mock.feature_dim = F->mock.feature_dim; });
  bind(F->mock.text_weight, "--mock-text-weight", "backend.mock.text_weight", "Mock backend weight of the prompt text feature",
       [=](RunConfig& c) { c.mock.text_weight = F->mock.text_weight; });
  bind(F->mock.gate_weight, "--mock-gate-weight", "backend.mock.gate_weight", "Mock backend question-gate strength",
       [=](RunConfig& c) { c.mock.gate_weight = F->mock.gate_weight; });
  bind(F->mock.logit_scale, "--mock-logit-scale", "backend.mock.logit_scale", "Mock backend inverse temperature",
       [=](RunConfig& c) { c.mock.logit_scale = F->mock.logit_scale; });
  bind(F->mock.mention_weight, "--mock-mention-weight", "backend.mock.mention_weight",
       "Mock backend extra pooling weight for entities named in the question",
       [=](RunConfig& c) { c.mock.mention_weight = F->mock.mention_weight; });
  bind(F->mock.seed, "--mock-seed", "backend.mock.seed", "Mock backend projection seed",
       [=](RunConfig& c) { c.mock.seed = F->mock.seed; });
  bind(F->http.endpoint, "--endpoint", "backend.http.endpoint", "Chat-completions URL for the http backend",
       [=](RunConfig& c) { c.http.endpoint = F->http.endpoint; });
  bind(F->http.model, "--model", "backend.http.model", "Model name sent to the http backend",
       [=](RunConfig& c) { c.http.model = F->http.model; });
  bind(F->http.token_env, "--token-env", "backend.http.token_env", "Environment variable holding the bearer token",
       [=](RunConfig& c) { c.http.token_env = F->http.token_env; });
  bind(F->http.timeout_seconds, "--timeout", "backend.http.timeout_seconds", "HTTP timeout in seconds",
       [=](RunConfig& c) { c.http.timeout_seconds = F->http.timeout_seconds; });
  bind(F->http.max_retries, "--max-retries", "backend.http.max_retries", "HTTP retries after the first attempt",
       [=](RunConfig& c) { c.http.max_retries = F->http.max_retries; });
  bind(F->http.concurrency, "--concurrency", "backend.http.concurrency", "Maximum in-flight HTTP requests",
       [=](RunConfig& c) { c.http.concurrency = F->http.concurrency; });
  bind(F->http.backoff_seconds, "--backoff", "backend.http.backoff_seconds", "First retry delay in seconds (doubles)",
       [=](RunConfig& c) { c.http.backoff_seconds = F->http.backoff_seconds; });

  bind(F->icl_k, "--icl-k", "icl.k", "In-context examples per query", [=](RunConfig& c) { c.icl_k = F->icl_k; });

  bind(S->description_type, "--description-type", "pairs.description_type",
       "Local pair text: paragraph or name", [=](RunConfig& c) {
         if (S->description_type == "paragraph") {
           c.description_type = kgalign::DescriptionType::Paragraph;
         } else if (S->description_type == "name") {
           c.description_type = kgalign::DescriptionType::Name;
         } else {
           throw UsageError("--description-type must be paragraph or name");
         }
       });
  bind(F->linking_noise, "--linking-noise", "pairs.linking_noise", "Fraction of descriptions swapped for others",
       [=](RunConfig& c) { c.linking_noise = F->linking_noise; });
  bind(F->use_global_pairs, "--global-pairs", "pairs.global", "Use pairs/global_pairs.jsonl when present",
       [=](RunConfig& c) { c.use_global_pairs = F->use_global_pairs; });
  bind(S->extraction_responses, "--extraction-responses", "pairs.extraction_responses",
       "Directory of recorded extraction responses (<doc id>.txt)",
       [=](RunConfig& c) { c.extraction_responses = S->extraction_responses; });
  bind(F->robustness_rates, "--rates", "robustness.rates", "Paragraph noise rates for the robustness sweep",
       [=](RunConfig& c) { c.robustness_rates = F->robustness_rates; });
}

void collect_sources(const nlohmann::json& j, const std::string& prefix, const std::string& label,
                     ConfigSources& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      collect_sources(v, key, label, out);
    } else {
      out[key] = label;
    }
  }
}

RunConfig resolve(const Command& cmd, ConfigSources& sources) {
  RunConfig cfg;
  if (!cmd.config_file.empty()) {
    std::ifstream in(cmd.config_file);
    if (!in) throw kgalign::MissingInput("config file " + cmd.config_file + " does not exist");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError("config file " + cmd.config_file + ": " + e.what());
    }
    cfg = kgalign::run_config_from_json(j);
    collect_sources(j, "", "config " + cmd.config_file, sources);
    // Relative dataset paths in a config file are relative to the file.
    if (!cfg.dataset.empty() && cfg.dataset.is_relative()) {
      cfg.dataset = std::filesystem::path(cmd.config_file).parent_path() / cfg.dataset;
    }
  }
  for (const auto& a : cmd.apply) a(cfg, sources);
  kgalign::validate(cfg, sources);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgalign: knowledge-graph / text alignment and graph-instruction tuning pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Scratch scratch;
  std::map<std::string, Command> commands;
  const std::vector<std::pair<std::string, std::string>> stages{
      {"ingest", "Load and validate a dataset; write reports/ingest.json"},
      {"align", "Train the graph and text encoders with hierarchical contrastive alignment"},
      {"extract-pairs", "Build subgraph-document pairs from documents.tsv via the extraction prompt"},
      {"build-prompts", "Render triple-classification and link-prediction instruction prompts"},
      {"tune", "Tune the knowledge adapter against a scoring backend"},
      {"eval-tc", "Evaluate triple classification"},
      {"eval-lp", "Evaluate link prediction"},
      {"icl-build", "Prepend structurally similar in-context examples to link-prediction prompts"},
      {"robustness", "Name-only and noisy-description sweep (align, tune, eval per condition)"},
      {"export-embeddings", "Write the aligned entity embedding table as CSV"},
  };
  std::string tune_task = "all";
  bool emit_plots = false;
  bool use_icl = false;
  for (const auto& [name, help] : stages) {
    Command& cmd = commands[name];
    cmd.app = app.add_subcommand(name, help);
    cmd.app->add_option("--run-dir", cmd.run_dir, "Run directory for artifacts and manifest.json")->required();
    add_config_options(cmd, scratch);
  }
  commands["tune"].app->add_option("--task", tune_task, "Adapter to tune: tc, lp or all")->capture_default_str();
  for (const char* n : {"eval-tc", "eval-lp"}) {
    commands[n].app->add_flag("--emit-plots", emit_plots,
                              "Also write per-figure CSVs (loss curves, mode ablation, hop sweep) under plots/");
  }
  commands["eval-lp"].app->add_flag("--icl", use_icl, "Evaluate the prompts written by icl-build");

  kgalign::FixtureOptions fixture;
  std::string fixture_out;
  CLI::App* mk = app.add_subcommand("make-fixture", "Write the planted synthetic dataset");
  mk->add_option("--out", fixture_out, "Output dataset directory")->required();
  mk->add_option("--items", fixture.items, "Item entities")->capture_default_str();
  mk->add_option("--documents", fixture.documents, "Documents with recorded extractions")->capture_default_str();
  mk->add_option("--seed", fixture.seed, "Fixture seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (mk->parsed()) {
      kgalign::write_fixture(fixture_out, fixture);
      std::cout << "wrote fixture to " << fixture_out << "\n";
      return kOk;
    }
    for (auto& [name, cmd] : commands) {
      if (!cmd.app->parsed()) continue;
      ConfigSources sources;
      RunConfig cfg;
      try {
        cfg = resolve(cmd, sources);
      } catch (const kgalign::MissingInput&) {
        throw;
      } catch (const kgalign::ConfigConflict&) {
        throw;
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
      kgalign::Pipeline p(cfg, cmd.run_dir);
      std::string out;
      if (name == "ingest") out = p.ingest();
      if (name == "align") out = p.align();
      if (name == "extract-pairs") out = p.extract_pairs();
      if (name == "build-prompts") out = p.build_prompts();
      if (name == "tune") out = p.tune(tune_task);
      if (name == "eval-tc") out = p.eval_tc(emit_plots);
      if (name == "eval-lp") out = p.eval_lp(use_icl, emit_plots);
      if (name == "icl-build") out = p.icl_build();
      if (name == "robustness") out = p.robustness();
      if (name == "export-embeddings") out = p.export_embeddings();
      std::cout << out << "\n";
    }
    return kOk;
  } catch (const kgalign::MissingInput& e) {
    std::cerr << "kgalign: " << e.what() << "\n";
    return kUsage;
  } catch (const kgalign::ConfigConflict& e) {
    std::cerr << "kgalign: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "kgalign: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "kgalign: error: " << e.what() << "\n";
    return kRuntime;
  }
}
