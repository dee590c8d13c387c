#include "tps/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <iostream>
#include <optional>

#include "tps/backend.hpp"
#include "tps/errors.hpp"
#include "tps/experiments.hpp"
#include "tps/io.hpp"
#include "tps/lm_client.hpp"
#include "tps/metric.hpp"
#include "tps/transport.hpp"

#ifndef TPS_VERSION
#define TPS_VERSION "0.0.0"
#endif

namespace tps::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view version() { return TPS_VERSION; }

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json file_hash(const std::optional<fs::path>& path) {
  if (!path || !fs::exists(*path)) return nullptr;
  return lm::sha256_hex(io::read_file(*path));
}

struct Loaded {
  lm::BackendConfig backend;
  json experiment = json::object();
  std::optional<fs::path> dataset;
  std::optional<fs::path> template_dir;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

Loaded load_config(const std::optional<fs::path>& config) {
  json doc = json::object();
  fs::path base = fs::current_path();
  if (config) {
    doc = io::read_json_file(*config);
    base = config->parent_path();
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [key, _] : doc.items())
      if (key != "backend" && key != "experiment" && key != "templates")
        throw ValidationError("unknown top-level config key \"" + key + "\"");
  }
  Loaded l;
  l.backend = lm::parse_backend_config(doc.value("backend", json::object()));
  l.experiment = doc.value("experiment", json::object());
  if (!l.experiment.is_object()) throw ValidationError("\"experiment\" must be an object");
  if (l.experiment.contains("dataset")) {
    l.dataset = resolve(base, l.experiment.at("dataset").get<std::string>());
    l.experiment.erase("dataset");
  }
  if (doc.contains("templates")) l.template_dir = resolve(base, doc.at("templates").get<std::string>());
  return l;
}

struct CommonFlags {
  std::optional<fs::path> config;
  std::optional<fs::path> dataset;
  std::uint64_t seed = 0;
  std::optional<std::string> backend_url;
  std::optional<fs::path> fixture;
  std::optional<int> top_k;
  std::optional<std::string> residual;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool allow_fixture) {
  cmd->add_option("--config", f.config, "JSON config with \"backend\" and \"experiment\" objects");
  cmd->add_option("--dataset", f.dataset, "dataset file; overrides experiment.dataset");
  cmd->add_option("--seed", f.seed, "seed for every sampled choice")->default_val(0);
  auto* backend = cmd->add_option("--backend", f.backend_url, "base URL of a completions-style server");
  if (allow_fixture) {
    auto* fixture = cmd->add_option("--fixture", f.fixture, "replay recorded responses instead of a live server");
    fixture->excludes(backend);
  }
  cmd->add_option("--top-k", f.top_k, "log-probabilities requested per position");
  cmd->add_option("--residual", f.residual, "mass outside the answers: sentinel or renorm");
}

void apply_overrides(Loaded& l, const CommonFlags& f) {
  if (f.backend_url) l.backend.base_url = *f.backend_url;
  if (f.top_k) l.backend.top_k = *f.top_k;
  if (f.residual) l.backend.residual = parse_residual_mode(*f.residual);
  if (f.dataset) l.dataset = *f.dataset;
  l.backend.validate();
}

exp::RunOptions run_options(const Loaded& l, std::uint64_t seed) {
  if (!l.dataset) throw ValidationError("no dataset: pass --dataset or set experiment.dataset in the config");
  exp::RunOptions o;
  o.dataset = *l.dataset;
  o.params = l.experiment;
  o.seed = seed;
  o.templates = l.template_dir ? prompts::TemplateSet(*l.template_dir) : prompts::TemplateSet();
  return o;
}

std::string join_args(const std::vector<std::string>& args) {
  std::string s;
  for (const auto& a : args) s += (s.empty() ? "" : " ") + a;
  return s;
}

// ---- tps tps ----

struct TpsFlags {
  fs::path prior, conditional;
  std::string target;
  std::string cost = "basic";
  std::optional<fs::path> embeddings;
  std::optional<fs::path> plan_out;
};

AnswerDistribution read_distribution(const fs::path& path, SpaceDocument& space_doc) {
  const auto doc = io::read_json_file(path);
  space_doc = parse_space_document(doc);
  return parse_distribution_document(doc, space_doc.space);
}

int cmd_tps(const TpsFlags& f, std::ostream& out) {
  SpaceDocument ps, cs;
  auto prior = read_distribution(f.prior, ps);
  auto cond = read_distribution(f.conditional, cs);
  if (!same_space(ps.space, cs.space))
    throw ValidationError("prior and conditional are over different answer spaces");
  // Rebind the conditional to the prior's space object so every input shares one.
  cond = AnswerDistribution::from_probabilities(ps.space, {cond.probabilities().begin(), cond.probabilities().end()});

  const Answer target(f.target);
  if (!ps.space->index_of(f.target) || ps.space->is_sentinel(*ps.space->index_of(f.target)))
    throw ValidationError("target \"" + f.target + "\" is not an answer of the space");

  TpsResult r;
  if (f.cost == "basic") {
    r = basic_tps(prior, cond, target);
  } else if (f.cost == "ordinal") {
    if (!ps.scale) throw ValidationError("ordinal cost needs a \"scale\" in the distribution files");
    r = distance_tps(prior, cond, target, *ps.scale);
  } else if (f.cost == "semantic") {
    if (!f.embeddings) throw ValidationError("semantic cost needs --embeddings");
    r = semantic_tps(prior, cond, target, EmbeddingTable::load_jsonl(*f.embeddings));
  } else {
    auto cost = load_cost(ps.space, fs::path(f.cost));
    r = tps::tps(prior, cond, AnswerDistribution::point_mass(ps.space, f.target), cost, TpsVariant::custom);
  }

  if (f.plan_out) {
    auto cost = f.cost == "basic" ? basic_cost(ps.space, target)
                : f.cost == "ordinal" ? ordinal_cost(ps.space, *ps.scale)
                : f.cost == "semantic" ? semantic_cost(ps.space, EmbeddingTable::load_jsonl(*f.embeddings))
                                       : load_cost(ps.space, fs::path(f.cost));
    const auto w = wasserstein(cond, AnswerDistribution::point_mass(ps.space, f.target), cost);
    std::ostringstream buf;
    write_plan_csv(w.plan, buf);
    io::write_file_atomic(*f.plan_out, buf.str());
  }

  json j = {{"score", r.score},
            {"w_prior", r.w_prior},
            {"w_conditional", r.w_conditional},
            {"variant", to_string(r.variant)},
            {"method", to_string(r.method)}};
  out << j.dump(2) << "\n";
  return kExitOk;
}

// ---- tps experiment / record ----

struct ExperimentFlags {
  std::string name;
  fs::path out_dir;
};

int finish_harness(const exp::HarnessResult& result, std::ostream& err) {
  for (const auto& q : result.quarantined)
    err << "quarantined " << q.id << " (" << exp::to_string(q.kind) << "): " << q.message << "\n";
  return result.exit_code();
}

int cmd_experiment(const std::vector<std::string>& args, const CommonFlags& common, const ExperimentFlags& f,
                   std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel) {
  const auto& harness = exp::find_harness(f.name);
  auto loaded = load_config(common.config);
  apply_overrides(loaded, common);
  const auto options = run_options(loaded, common.seed);
  const auto started = utc_now();

  std::unique_ptr<lm::Backend> backend;
  if (common.fixture) {
    backend = lm::ReplayBackend::from_file(*common.fixture);
  } else {
    backend = lm::make_http_backend(loaded.backend);
  }
  lm::LmClient client(*backend, loaded.backend, cancel);
  auto result = harness.run(client, options);
  if (cancel && cancel->load()) {
    err << "interrupted: no result files written\n";
    return kExitInterrupted;
  }
  exp::write_outputs(f.out_dir, result);

  json outputs = json::object();
  for (const auto& suffix : {".csv", "_summary.json", "_samples.json"}) {
    const auto file = result.name + suffix;
    outputs[file] = lm::sha256_hex(io::read_file(f.out_dir / file));
  }
  json manifest = {{"command_line", join_args(args)},
                   {"experiment", harness.name},
                   {"tool_version", version()},
                   {"seed", common.seed},
                   {"config_hash", file_hash(common.config)},
                   {"dataset", options.dataset.string()},
                   {"dataset_hash", file_hash(options.dataset)},
                   {"fixture_hash", file_hash(common.fixture)},
                   {"backend", common.fixture ? json(nullptr) : json(loaded.backend.base_url)},
                   {"model", loaded.backend.model_name},
                   {"templates_hash", options.templates.fingerprint()},
                   {"outputs", outputs},
                   {"quarantined", result.quarantined.size()},
                   {"started_at", started},
                   {"finished_at", utc_now()}};
  io::write_file_atomic(f.out_dir / "run_manifest.json", io::dump_json(manifest));
  out << "wrote " << (f.out_dir / (result.name + ".csv")).string() << " (" << result.table.rows().size()
      << " rows, " << result.quarantined.size() << " quarantined)\n";
  return finish_harness(result, err);
}

int cmd_record(const CommonFlags& common, const ExperimentFlags& f, std::ostream& out, std::ostream& err,
               const std::atomic<bool>* cancel) {
  const auto& harness = exp::find_harness(f.name);
  auto loaded = load_config(common.config);
  apply_overrides(loaded, common);
  const auto options = run_options(loaded, common.seed);
  auto live = lm::make_http_backend(loaded.backend);
  lm::RecordingBackend recorder(*live);
  lm::LmClient client(recorder, loaded.backend, cancel);
  auto result = harness.run(client, options);
  recorder.save(f.out_dir);
  out << "recorded " << recorder.size() << " responses to " << f.out_dir.string() << "\n";
  if (cancel && cancel->load()) return kExitInterrupted;
  return finish_harness(result, err);
}

// ---- tps probe ----

int cmd_probe(const CommonFlags& common, const std::string& prompt, std::ostream& out) {
  auto loaded = load_config(common.config);
  apply_overrides(loaded, common);
  auto backend = lm::make_http_backend(loaded.backend);
  lm::LmClient client(*backend, loaded.backend);
  const auto response = backend->send(client.next_token_request(prompt));
  const auto top = client.parse_next_token(response).front();
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [token, lp] : top) ranked.emplace_back(lp, token);
  std::sort(ranked.rbegin(), ranked.rend());
  json j = {{"base_url", loaded.backend.base_url}, {"model", loaded.backend.model_name}, {"prompt", prompt}};
  auto tokens = json::array();
  for (const auto& [lp, token] : ranked) tokens.push_back({{"token", token}, {"logprob", lp}});
  j["top_logprobs"] = tokens;
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel) {
  CLI::App app{"Targeted persuasion scores for language-model contexts", "tps"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  TpsFlags tf;
  auto* tps_cmd = app.add_subcommand("tps", "score one prior/conditional pair and print JSON");
  tps_cmd->add_option("--prior", tf.prior, "prior distribution JSON")->required()->check(CLI::ExistingFile);
  tps_cmd->add_option("--conditional", tf.conditional, "conditional distribution JSON")
      ->required()
      ->check(CLI::ExistingFile);
  tps_cmd->add_option("--target", tf.target, "target answer (point mass)")->required();
  tps_cmd->add_option("--cost", tf.cost, "basic | ordinal | semantic | path to a cost CSV")->default_val("basic");
  tps_cmd->add_option("--embeddings", tf.embeddings, "JSON-lines embeddings for --cost semantic");
  tps_cmd->add_option("--plan-out", tf.plan_out, "write the conditional-to-target transport plan as CSV");

  CommonFlags ef_common;
  ExperimentFlags ef;
  auto* exp_cmd = app.add_subcommand("experiment", "run a harness and write CSV, summary, samples and manifest");
  exp_cmd->add_option("name", ef.name, "experiment name")->required();
  exp_cmd->add_option("--out", ef.out_dir, "output directory")->required();
  add_common(exp_cmd, ef_common, true);

  CommonFlags rf_common;
  ExperimentFlags rf;
  auto* rec_cmd = app.add_subcommand("record", "run a harness against a live server and save a replay fixture");
  rec_cmd->add_option("name", rf.name, "experiment name")->required();
  rec_cmd->add_option("--out", rf.out_dir, "fixture file to write")->required();
  add_common(rec_cmd, rf_common, false);

  CommonFlags pf_common;
  std::string probe_prompt = "Q: What is the capital of France?\nA:";
  auto* probe_cmd = app.add_subcommand("probe", "print the top next-token log-probabilities for one prompt");
  probe_cmd->add_option("--prompt", probe_prompt, "prompt text");
  add_common(probe_cmd, pf_common, false);

  app.add_subcommand("list", "list experiment names");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << "run `tps " << sub->get_name() << " --help` for usage\n";
    return kExitValidation;
  }

  try {
    if (*tps_cmd) return cmd_tps(tf, out);
    if (*exp_cmd) return cmd_experiment(args, ef_common, ef, out, err, cancel);
    if (*rec_cmd) return cmd_record(rf_common, rf, out, err, cancel);
    if (*probe_cmd) return cmd_probe(pf_common, probe_prompt, out);
    for (const auto& h : exp::harnesses()) out << h.name << "\t" << h.summary << "\n";
    return kExitOk;
  } catch (const lm::BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace tps::cli
