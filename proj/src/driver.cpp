#include "dsr/driver.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

#include "dsr/common.hpp"
#include "dsr/parallel.hpp"
#include "dsr/sql_text.hpp"

namespace dsr {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (dataset_path.empty()) throw Error(ErrorCode::kConfig, "a dataset path is required");
  if (!fs::exists(dataset_path)) throw Error(ErrorCode::kConfig, "dataset not found: " + dataset_path);
  if (db_root.empty()) throw Error(ErrorCode::kConfig, "a database root is required");
  if (out_dir.empty()) throw Error(ErrorCode::kConfig, "an output directory is required");
  selection.validate();
  if (evolve.max_iterations < 1) throw Error(ErrorCode::kConfig, "max_iterations must be at least 1");
  if (align.max_probes < 1) throw Error(ErrorCode::kConfig, "max_probes must be at least 1");
  if (workers < 1) throw Error(ErrorCode::kConfig, "workers must be at least 1");
  if (refine.jaccard_threshold <= 0.0 || refine.jaccard_threshold > 1.0)
    throw Error(ErrorCode::kConfig, "jaccard threshold must be in (0, 1]");
}

namespace {

struct ConfigValue {
  std::string text;
  bool quoted = false;
};

ConfigValue parse_value(std::string_view raw, std::size_t lineno) {
  raw = trim(raw);
  if (raw.empty()) throw Error(ErrorCode::kConfig, fmt::format("line {}: missing value", lineno));
  if (raw.front() != '"') {
    auto hash = raw.find('#');
    return {std::string(trim(raw.substr(0, hash))), false};
  }
  std::string out;
  for (std::size_t i = 1; i < raw.size(); ++i) {
    char c = raw[i];
    if (c == '\\' && i + 1 < raw.size()) {
      char n = raw[++i];
      out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
    } else if (c == '"') {
      auto rest = trim(raw.substr(i + 1));
      if (!rest.empty() && rest.front() != '#')
        throw Error(ErrorCode::kConfig, fmt::format("line {}: trailing text after string", lineno));
      return {out, true};
    } else {
      out.push_back(c);
    }
  }
  throw Error(ErrorCode::kConfig, fmt::format("line {}: unterminated string", lineno));
}

bool as_bool(const ConfigValue& v, const std::string& key) {
  if (v.text == "true") return true;
  if (v.text == "false") return false;
  throw Error(ErrorCode::kConfig, key + " expects true or false");
}

std::size_t as_count(const ConfigValue& v, const std::string& key) {
  try {
    std::size_t used = 0;
    long long n = std::stoll(v.text, &used);
    if (used == v.text.size() && n >= 0) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, key + " expects a non-negative integer");
}

double as_real(const ConfigValue& v, const std::string& key) {
  try {
    std::size_t used = 0;
    double d = std::stod(v.text, &used);
    if (used == v.text.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, key + " expects a number");
}

LlmMode llm_mode_from_string(const std::string& s) {
  if (s == "live") return LlmMode::kLive;
  if (s == "record") return LlmMode::kRecord;
  if (s == "replay") return LlmMode::kReplay;
  if (s == "scripted") return LlmMode::kScripted;
  throw Error(ErrorCode::kConfig, "unknown llm mode: " + s);
}

std::string_view llm_mode_name(LlmMode mode) {
  switch (mode) {
    case LlmMode::kLive: return "live";
    case LlmMode::kRecord: return "record";
    case LlmMode::kReplay: return "replay";
    case LlmMode::kScripted: return "scripted";
  }
  return "?";
}

void apply_key(RunConfig& c, const std::string& key, const ConfigValue& v) {
  using std::chrono::milliseconds;
  if (key == "run.dataset") c.dataset_path = v.text;
  else if (key == "run.db_root") c.db_root = v.text;
  else if (key == "run.out") c.out_dir = v.text;
  else if (key == "run.seed") c.seed = as_count(v, key);
  else if (key == "run.workers") c.workers = as_count(v, key);
  else if (key == "run.compare") c.compare_mode = compare_mode_from_string(v.text);
  else if (key == "llm.mode") c.llm.mode = llm_mode_from_string(v.text);
  else if (key == "llm.base_url") c.llm.endpoint.base_url = v.text;
  else if (key == "llm.model") c.llm.endpoint.model = v.text;
  else if (key == "llm.api_key_env") c.llm.endpoint.api_key_env = v.text;
  else if (key == "llm.timeout_s") c.llm.endpoint.timeout = std::chrono::seconds(as_count(v, key));
  else if (key == "llm.transcript") c.llm.transcript_path = v.text;
  else if (key == "llm.rules") c.llm.rules_path = v.text;
  else if (key == "llm.strict_replay") c.llm.strict_replay = as_bool(v, key);
  else if (key == "refine.jaccard") c.refine.jaccard_threshold = as_real(v, key);
  else if (key == "refine.prune_sample_rows") c.refine.prune_sample_rows = as_count(v, key);
  else if (key == "refine.knowledge_budget") c.refine.knowledge_budget = as_count(v, key);
  else if (key == "select.k") c.selection.k = as_count(v, key);
  else if (key == "select.theta_max") c.selection.theta_max = as_count(v, key);
  else if (key == "select.temperature") c.selection.temperature = as_real(v, key);
  else if (key == "select.concurrency") c.selection.concurrency = as_count(v, key);
  else if (key == "select.aggregation") {
    if (v.text == "union") c.selection.aggregation = CandidateAggregation::kUnion;
    else if (v.text == "majority") c.selection.aggregation = CandidateAggregation::kMajority;
    else throw Error(ErrorCode::kConfig, "select.aggregation expects union or majority");
  }
  else if (key == "align.max_probes") c.align.max_probes = as_count(v, key);
  else if (key == "align.row_cap") c.align.probe_row_cap = as_count(v, key);
  else if (key == "align.summary_cap") c.align.summary_token_cap = as_count(v, key);
  else if (key == "align.summary_template") c.align.summary_template = v.text;
  else if (key == "evolve.max_iterations") c.evolve.max_iterations = as_count(v, key);
  else if (key == "evolve.correction_rounds") c.evolve.correction_rounds = as_count(v, key);
  else if (key == "evolve.temperature") c.evolve.temperature = as_real(v, key);
  else if (key == "exec.timeout_ms") c.evolve.limits.timeout = milliseconds(as_count(v, key));
  else if (key == "exec.row_cap") c.evolve.limits.row_cap = as_count(v, key);
  else if (key == "ablation.no_skr") c.no_refine = as_bool(v, key);
  else if (key == "ablation.no_ass") c.no_select = as_bool(v, key);
  else if (key == "ablation.no_saa") c.no_align = as_bool(v, key);
  else if (key == "ablation.dc_baseline") c.dc_baseline = as_bool(v, key);
  else throw Error(ErrorCode::kConfig, "unknown config key: " + key);
}

}  // namespace

void apply_config_text(RunConfig& config, std::string_view text) {
  std::string section;
  std::size_t lineno = 0;
  for (const auto& raw_line : split(text, '\n')) {
    ++lineno;
    auto line = trim(raw_line);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      auto close = line.find(']');
      if (close == std::string_view::npos)
        throw Error(ErrorCode::kConfig, fmt::format("line {}: unterminated section header", lineno));
      section = std::string(trim(line.substr(1, close - 1)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::kConfig, fmt::format("line {}: expected key = value", lineno));
    auto key = std::string(trim(line.substr(0, eq)));
    apply_key(config, section.empty() ? key : section + "." + key, parse_value(line.substr(eq + 1), lineno));
  }
}

void apply_config_file(RunConfig& config, const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kConfig, "config file not found: " + path);
  apply_config_text(config, read_file(path));
}

nlohmann::json config_snapshot(const RunConfig& c) {
  return {{"dataset", c.dataset_path},
          {"db_root", c.db_root},
          {"seed", c.seed},
          {"workers", c.workers},
          {"compare", to_string(c.compare_mode)},
          {"llm", {{"mode", llm_mode_name(c.llm.mode)},
                   {"model", c.llm.endpoint.model},
                   {"transcript", c.llm.transcript_path},
                   {"rules", c.llm.rules_path},
                   {"strict_replay", c.llm.strict_replay}}},
          {"refine", {{"jaccard", c.refine.jaccard_threshold},
                      {"prune_sample_rows", c.refine.prune_sample_rows},
                      {"knowledge_budget", c.refine.knowledge_budget}}},
          {"select", {{"k", c.selection.k},
                      {"theta_max", c.selection.theta_max},
                      {"temperature", c.selection.temperature},
                      {"aggregation", c.selection.aggregation == CandidateAggregation::kUnion ? "union" : "majority"}}},
          {"align", {{"max_probes", c.align.max_probes},
                     {"row_cap", c.align.probe_row_cap},
                     {"summary_cap", c.align.summary_token_cap}}},
          {"evolve", {{"max_iterations", c.evolve.max_iterations},
                      {"correction_rounds", c.evolve.correction_rounds},
                      {"temperature", c.evolve.temperature}}},
          {"exec", {{"timeout_ms", c.evolve.limits.timeout.count()}, {"row_cap", c.evolve.limits.row_cap}}},
          {"ablation", {{"no_skr", c.no_refine},
                        {"no_ass", c.no_select},
                        {"no_saa", c.no_align},
                        {"dc_baseline", c.dc_baseline}}}};
}

std::optional<fs::path> find_database(const std::string& root, const std::string& db_id) {
  for (auto candidate : {fs::path(root) / db_id / (db_id + ".sqlite"), fs::path(root) / (db_id + ".sqlite")})
    if (fs::exists(candidate)) return candidate;
  return std::nullopt;
}

namespace {

// Question ids become file names.
std::string file_stem(const std::string& id) {
  std::string out;
  for (char c : id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_');
  return out;
}

}  // namespace

fs::path ArtifactLayout::refined(const std::string& db_id) const {
  return root / "refine" / (file_stem(db_id) + ".catalog.json");
}
fs::path ArtifactLayout::selection(const std::string& q) const { return root / "select" / (file_stem(q) + ".json"); }
fs::path ArtifactLayout::selection_log() const { return root / "select" / "selection.jsonl"; }
fs::path ArtifactLayout::probe_cache(const std::string& q) const {
  return root / "align" / "probes" / (file_stem(q) + ".jsonl");
}
fs::path ArtifactLayout::alignment(const std::string& q) const { return root / "align" / (file_stem(q) + ".json"); }
fs::path ArtifactLayout::alignment_summary(const std::string& q) const {
  return root / "align" / (file_stem(q) + ".summary.txt");
}
fs::path ArtifactLayout::trajectory(const std::string& q) const {
  return root / "generate" / (file_stem(q) + ".trajectory.jsonl");
}
fs::path ArtifactLayout::final_sql(const std::string& q) const { return root / "generate" / (file_stem(q) + ".sql"); }
fs::path ArtifactLayout::manifest() const { return root / "manifest.json"; }
fs::path ArtifactLayout::report_json() const { return root / "eval" / "report.json"; }
fs::path ArtifactLayout::report_text() const { return root / "eval" / "report.txt"; }

std::size_t RunManifest::failures() const {
  std::size_t n = 0;
  for (const auto& q : questions) n += q.status != "OK";
  return n;
}

nlohmann::json manifest_to_json(const RunManifest& manifest, bool include_timings) {
  auto questions = nlohmann::json::array();
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& q : manifest.questions) {
    nlohmann::json j = {{"question_id", q.question_id},
                        {"db_id", q.db_id},
                        {"status", q.status},
                        {"artifacts", q.artifacts}};
    if (q.error) j["error"] = *q.error;
    questions.push_back(std::move(j));
    timings[q.question_id] = q.timings_ms;
  }
  nlohmann::json out = {{"config", manifest.config}, {"questions", questions}, {"llm_calls", manifest.llm_calls}};
  if (manifest.report) {
    out["ex"] = manifest.report->ex();
    out["matched"] = manifest.report->matched;
    out["evaluable"] = manifest.report->evaluable;
  }
  // Kept apart so everything else is reproducible byte for byte.
  if (include_timings) out["timings_ms"] = timings;
  return out;
}

Pipeline::Pipeline(RunConfig config, std::shared_ptr<LlmClient> llm)
    : config_(std::move(config)), llm_(std::move(llm)) {
  config_.validate();
  layout_.root = config_.out_dir;
  dataset_ = load_dataset(config_.dataset_path);
}

LlmClient& Pipeline::llm() {
  std::lock_guard lock(llm_mutex_);
  if (!llm_) llm_ = make_llm_client(config_.llm);
  return *llm_;
}

std::shared_ptr<ExecBackend> Pipeline::backend(const std::string& db_id) {
  std::lock_guard lock(backend_mutex_);
  if (auto it = backends_.find(db_id); it != backends_.end()) return it->second;
  auto path = find_database(config_.db_root, db_id);
  if (!path) throw Error(ErrorCode::kConnection, fmt::format("database {} not found under {}", db_id, config_.db_root));
  auto backend = std::make_shared<SqliteBackend>(path->string());
  backends_[db_id] = backend;
  return backend;
}

namespace {

nlohmann::json refine_artifact_json(const std::string& hash, bool passthrough,
                                    const std::pair<RefinedSchema, RefinedKnowledge>& r) {
  return {{"catalog_hash", hash},
          {"passthrough", passthrough},
          {"refined", refined_schema_to_json(r.first)},
          {"knowledge", {{"text", r.second.text}, {"source_digest", r.second.source_digest}}}};
}

std::pair<RefinedSchema, RefinedKnowledge> refine_artifact_from_json(const nlohmann::json& j) {
  std::pair<RefinedSchema, RefinedKnowledge> r;
  r.first = refined_schema_from_json(j.at("refined"));
  r.second.text = j.at("knowledge").value("text", "");
  r.second.source_digest = j.at("knowledge").value("source_digest", "");
  return r;
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, fmt::format("cannot parse {}: {}", path.string(), e.what()));
  }
}

}  // namespace

const std::pair<RefinedSchema, RefinedKnowledge>& Pipeline::refined(const std::string& db_id) {
  std::lock_guard lock(refine_mutex_);
  if (auto it = refined_.find(db_id); it != refined_.end()) return *it->second;

  auto exec = backend(db_id);
  IngestOptions opts;
  opts.seed = config_.seed;
  opts.db_id = db_id;
  auto sidecar = description_sidecar_path(exec->locator());
  if (fs::exists(sidecar)) opts.descriptions = read_json(sidecar);
  auto catalog = ingest_catalog(*exec, opts);
  // The cache key covers the ingested catalog and the refinement settings.
  auto hash = sha256_hex(catalog_hash(catalog) + config_snapshot(config_)["refine"].dump() +
                         (config_.no_refine ? "passthrough" : "refined"));

  auto path = layout_.refined(db_id);
  if (fs::exists(path)) {
    auto j = read_json(path);
    if (j.value("catalog_hash", "") == hash) {
      auto& slot = refined_[db_id];
      slot = std::make_unique<std::pair<RefinedSchema, RefinedKnowledge>>(refine_artifact_from_json(j));
      return *slot;
    }
  }

  std::pair<RefinedSchema, RefinedKnowledge> result;
  if (config_.no_refine) {
    result.first.catalog = catalog;
    result.first.source_table_count = catalog.tables.size();
    result.second.text = catalog.knowledge.value_or("");
    result.second.source_digest = sha256_hex(result.second.text);
  } else {
    result = refine_schema(catalog, *exec, llm(), config_.refine);
  }
  write_file(path.string(), refine_artifact_json(hash, config_.no_refine, result).dump(2) + "\n");
  auto& slot = refined_[db_id];
  slot = std::make_unique<std::pair<RefinedSchema, RefinedKnowledge>>(std::move(result));
  return *slot;
}

const std::pair<RefinedSchema, RefinedKnowledge>& Pipeline::refined_artifact(const std::string& db_id) {
  std::lock_guard lock(refine_mutex_);
  if (auto it = refined_.find(db_id); it != refined_.end()) return *it->second;
  auto path = layout_.refined(db_id);
  if (!fs::exists(path))
    throw Error(ErrorCode::kMissingArtifact,
                fmt::format("no refined schema for {} at {}; run `dsr refine` first", db_id, path.string()));
  auto& slot = refined_[db_id];
  slot = std::make_unique<std::pair<RefinedSchema, RefinedKnowledge>>(refine_artifact_from_json(read_json(path)));
  return *slot;
}

std::string Pipeline::knowledge_for(const DatasetItem& item, const RefinedKnowledge& knowledge) const {
  std::string out = knowledge.text;
  if (item.evidence) out += (out.empty() ? "" : "\n") + *item.evidence;
  return out;
}

SelectionTrace Pipeline::run_select(const DatasetItem& item, const RefinedSchema& refined,
                                    const RefinedKnowledge& knowledge) {
  SelectionTrace trace;
  if (config_.no_select) {
    trace.branch = SelectionBranch::kDisabled;
    trace.candidates = trace.final_tables = refined.catalog.table_names();
  } else {
    RefinedKnowledge k{knowledge_for(item, knowledge), knowledge.source_digest};
    trace = select_schema(item.question, refined, k, llm(), config_.selection).trace;
  }
  write_file(layout_.selection(item.question_id).string(),
             selection_record(item.question_id, trace).dump(2) + "\n");
  return trace;
}

SelectionTrace Pipeline::load_selection(const DatasetItem& item) const {
  auto path = layout_.selection(item.question_id);
  if (!fs::exists(path))
    throw Error(ErrorCode::kMissingArtifact,
                fmt::format("no selection for question {}; run `dsr select` first", item.question_id));
  return selection_trace_from_json(read_json(path));
}

AlignmentSummary Pipeline::run_align(const DatasetItem& item, const RefinedSchema& refined,
                                     const SelectionTrace& selection) {
  if (config_.no_align) return {};
  SchemaView s_sub(refined.catalog, selection.final_tables);
  auto digest = sha256_hex(item.question + "\n" + render(s_sub) +
                           config_snapshot(config_)["align"].dump());

  auto path = layout_.alignment(item.question_id);
  if (fs::exists(path)) {
    auto j = read_json(path);
    if (j.value("input_digest", "") == digest)
      return {j.value("summary", ""), j.value("probe_count", std::size_t{0})};
  }

  auto probes = generate_probes(item.question, s_sub, llm(), config_.align.max_probes);
  ProbeCache cache(layout_.probe_cache(item.question_id).string());
  auto results = run_probes(probes, *backend(item.db_id), config_.align, &cache, item.question_id);
  auto summary = summarize_alignment(item.question, results, llm(), config_.align);

  auto probe_list = nlohmann::json::array();
  for (const auto& p : probes) probe_list.push_back({{"sql", p.sql}, {"purpose", p.purpose}});
  write_file(path.string(), nlohmann::json{{"question_id", item.question_id},
                                           {"input_digest", digest},
                                           {"probes", probe_list},
                                           {"probe_count", summary.probe_count},
                                           {"summary", summary.text}}
                                    .dump(2) + "\n");
  write_file(layout_.alignment_summary(item.question_id).string(), summary.text);
  return summary;
}

std::string Pipeline::load_alignment(const DatasetItem& item) const {
  if (config_.no_align) return "";
  auto path = layout_.alignment(item.question_id);
  if (!fs::exists(path))
    throw Error(ErrorCode::kMissingArtifact,
                fmt::format("no alignment for question {}; run `dsr align` first", item.question_id));
  return read_json(path).value("summary", "");
}

Trajectory Pipeline::run_generate(const DatasetItem& item, const RefinedSchema& refined,
                                  const RefinedKnowledge& knowledge, const SelectionTrace& selection,
                                  const std::string& alignment) {
  GenerationContext ctx;
  ctx.question = item.question;
  ctx.schema_text = render(SchemaView(refined.catalog, selection.final_tables));
  ctx.knowledge = knowledge_for(item, knowledge);
  ctx.alignment = alignment;
  auto exec = backend(item.db_id);
  auto trajectory = config_.dc_baseline ? divide_and_conquer(ctx, llm(), *exec, config_.evolve)
                                        : evolve(ctx, llm(), *exec, config_.evolve);
  write_file(layout_.trajectory(item.question_id).string(), trajectory_jsonl(item.question_id, trajectory));
  write_file(layout_.final_sql(item.question_id).string(), trajectory.final_sql + "\n");
  return trajectory;
}

std::vector<std::optional<std::string>> Pipeline::for_each_question(
    const std::function<void(const DatasetItem&, QuestionRecord&)>& fn, std::vector<QuestionRecord>* records) {
  std::vector<std::optional<std::string>> errors(dataset_.size());
  std::vector<QuestionRecord> local(dataset_.size());
  parallel_for(dataset_.size(), config_.workers, [&](std::size_t i) {
    auto& rec = local[i];
    rec.question_id = dataset_[i].question_id;
    rec.db_id = dataset_[i].db_id;
    try {
      fn(dataset_[i], rec);
    } catch (const Error& e) {
      errors[i] = fmt::format("{}: {}", to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
    if (errors[i]) {
      rec.status = "FAILED";
      rec.error = errors[i];
    }
  });
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i]) fmt::print(stderr, "question {}: {}\n", dataset_[i].question_id, *errors[i]);
  if (records) *records = std::move(local);
  return errors;
}

namespace {

std::size_t count_errors(const std::vector<std::optional<std::string>>& errors) {
  std::size_t n = 0;
  for (const auto& e : errors) n += e.has_value();
  return n;
}

}  // namespace

std::size_t Pipeline::stage_refine() {
  std::vector<std::string> dbs;
  for (const auto& item : dataset_)
    if (std::find(dbs.begin(), dbs.end(), item.db_id) == dbs.end()) dbs.push_back(item.db_id);
  std::size_t failures = 0;
  for (const auto& db : dbs) {
    try {
      refined(db);
    } catch (const Error& e) {
      fmt::print(stderr, "database {}: {}: {}\n", db, to_string(e.code()), e.what());
      ++failures;
    }
  }
  return failures;
}

void Pipeline::write_selection_log() const {
  std::string out;
  for (const auto& item : dataset_) {
    auto path = layout_.selection(item.question_id);
    if (fs::exists(path)) out += read_json(path).dump() + "\n";
  }
  write_file(layout_.selection_log().string(), out);
}

std::size_t Pipeline::stage_select() {
  auto errors = for_each_question([&](const DatasetItem& item, QuestionRecord&) {
    const auto& [schema, knowledge] = refined_artifact(item.db_id);
    run_select(item, schema, knowledge);
  });
  write_selection_log();
  return count_errors(errors);
}

std::size_t Pipeline::stage_align() {
  return count_errors(for_each_question([&](const DatasetItem& item, QuestionRecord&) {
    const auto& schema = refined_artifact(item.db_id).first;
    run_align(item, schema, load_selection(item));
  }));
}

std::size_t Pipeline::stage_generate() {
  return count_errors(for_each_question([&](const DatasetItem& item, QuestionRecord&) {
    const auto& [schema, knowledge] = refined_artifact(item.db_id);
    auto selection = load_selection(item);
    run_generate(item, schema, knowledge, selection, load_alignment(item));
  }));
}

std::map<std::string, Prediction> Pipeline::load_predictions() const {
  std::map<std::string, Prediction> out;
  for (const auto& item : dataset_) {
    auto sql_path = layout_.final_sql(item.question_id);
    if (!fs::exists(sql_path)) continue;
    Prediction p;
    p.sql = std::string(trim(read_file(sql_path.string())));
    auto traj = layout_.trajectory(item.question_id);
    if (fs::exists(traj)) {
      auto summary = read_trajectory_summary(traj.string());
      p.path_type = summary.path_type;
      p.termination = summary.termination;
    }
    out[item.question_id] = std::move(p);
  }
  return out;
}

std::optional<SelectionReport> Pipeline::selection_summary() {
  std::map<std::string, SelectionTrace> selections;
  std::map<std::string, std::set<std::string>> gold;
  for (const auto& item : dataset_) {
    auto path = layout_.selection(item.question_id);
    if (!item.gold_sql || !fs::exists(path) || !fs::exists(layout_.refined(item.db_id))) continue;
    const auto& schema = refined_artifact(item.db_id).first;
    std::vector<std::string> known = schema.catalog.table_names();
    for (const auto& [canonical, series] : schema.provenance)
      known.insert(known.end(), series.members.begin(), series.members.end());
    std::set<std::string> g;
    for (const auto& t : tables_from_sql(*item.gold_sql, known))
      if (auto c = schema.resolve(t)) g.insert(*c);
    if (g.empty()) continue;
    selections[item.question_id] = selection_trace_from_json(read_json(path));
    gold[item.question_id] = std::move(g);
  }
  if (selections.empty()) return std::nullopt;
  return selection_report(selections, gold);
}

EvalReport Pipeline::stage_evaluate() {
  auto predictions = load_predictions();
  if (predictions.empty())
    throw Error(ErrorCode::kMissingArtifact,
                fmt::format("no generated SQL under {}; run `dsr generate` first", (layout_.root / "generate").string()));
  auto report = evaluate_run(dataset_, predictions, [this](const std::string& db) { return backend(db); },
                             config_.compare_mode, config_.evolve.limits, config_.workers);
  report.selection = selection_summary();
  write_file(layout_.report_json().string(), report_to_json(report).dump(2) + "\n");
  write_file(layout_.report_text().string(), report_text(report));
  return report;
}

std::string Pipeline::stats() {
  auto report = stage_evaluate();
  std::map<PathType, std::size_t> counts;
  std::map<Termination, std::size_t> terminations;
  for (const auto& item : dataset_) {
    auto path = layout_.trajectory(item.question_id);
    if (!fs::exists(path)) continue;
    auto s = read_trajectory_summary(path.string());
    ++counts[s.path_type];
    ++terminations[s.termination];
  }
  std::string out = report_text(report);
  out += fmt::format("\n{:<16} {:>8}\n", "Trajectory path", "Count");
  for (auto p : {PathType::kStraightforward, PathType::kRefinement, PathType::kExploratory})
    out += fmt::format("{:<16} {:>8}\n", to_string(p), counts[p]);
  out += fmt::format("\n{:<16} {:>8}\n", "Termination", "Count");
  for (auto t : {Termination::kFinalized, Termination::kIterationCap, Termination::kError})
    out += fmt::format("{:<16} {:>8}\n", to_string(t), terminations[t]);
  return out;
}

RunManifest Pipeline::run() {
  RunManifest manifest;
  manifest.config = config_snapshot(config_);
  using Clock = std::chrono::steady_clock;
  auto elapsed_ms = [](Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
  };
  auto rel = [this](const fs::path& p) { return fs::relative(p, layout_.root).generic_string(); };

  for_each_question(
      [&](const DatasetItem& item, QuestionRecord& rec) {
        auto start = Clock::now();
        const auto& [schema, knowledge] = refined(item.db_id);
        rec.artifacts["refine"] = rel(layout_.refined(item.db_id));
        rec.timings_ms["refine"] = elapsed_ms(start);

        start = Clock::now();
        auto selection = run_select(item, schema, knowledge);
        rec.artifacts["select"] = rel(layout_.selection(item.question_id));
        rec.timings_ms["select"] = elapsed_ms(start);

        start = Clock::now();
        auto alignment = run_align(item, schema, selection);
        if (!config_.no_align) {
          rec.artifacts["align"] = rel(layout_.alignment(item.question_id));
          rec.artifacts["probes"] = rel(layout_.probe_cache(item.question_id));
        }
        rec.timings_ms["align"] = elapsed_ms(start);

        start = Clock::now();
        run_generate(item, schema, knowledge, selection, alignment.text);
        rec.artifacts["trajectory"] = rel(layout_.trajectory(item.question_id));
        rec.artifacts["sql"] = rel(layout_.final_sql(item.question_id));
        rec.timings_ms["generate"] = elapsed_ms(start);
      },
      &manifest.questions);
  write_selection_log();
  manifest.llm_calls = llm_ ? llm_->call_count() : 0;

  if (std::any_of(dataset_.begin(), dataset_.end(), [](const DatasetItem& i) { return i.gold_sql.has_value(); }) &&
      fs::exists(layout_.root / "generate")) {
    manifest.report = stage_evaluate();
  }
  write_file(layout_.manifest().string(), manifest_to_json(manifest).dump(2) + "\n");
  return manifest;
}

RunManifest run_pipeline(const RunConfig& config) {
  Pipeline pipeline(config);
  return pipeline.run();
}

}  // namespace dsr
