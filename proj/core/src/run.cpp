#include "compass/run.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "compass/error.hpp"
#include "compass/http.hpp"
#include "compass/util.hpp"
#include "json.hpp"

namespace compass {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(ScorerKind kind) { return kind == ScorerKind::compass ? "compass" : "likelihood"; }

ScorerKind parse_scorer_kind(std::string_view text) {
  if (text == "compass") return ScorerKind::compass;
  if (text == "likelihood") return ScorerKind::likelihood;
  throw ConfigError("unknown scorer '" + std::string(text) + "'");
}

namespace {

const std::set<std::string>& known_emit_formats() {
  static const std::set<std::string> formats{"json", "csv", "md"};
  return formats;
}

std::string_view pooling_kind_name(PoolingStrategy::Kind kind) {
  switch (kind) {
    case PoolingStrategy::Kind::cls_first: return "cls_first";
    case PoolingStrategy::Kind::eos_last: return "eos_last";
    case PoolingStrategy::Kind::last_token: return "last_token";
    case PoolingStrategy::Kind::prompt_reps: return "prompt_reps";
  }
  return "last_token";
}

EnsembleStrategy strategy_of(const RunConfig& config) {
  EnsembleStrategy s;
  s.kind = config.ensemble;
  s.template_ids = config.template_ids;
  s.dev_fraction = config.dev_fraction;
  return s;
}

template <typename F>
auto staged(const std::string& stage, const std::string& instance_id, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(e.kind(), stage, instance_id, e.what());
  } catch (const std::exception& e) {
    throw StageError(ErrorKind::data, stage, instance_id, e.what());
  }
}

ordered_json method_to_json(const MethodDescriptor& m) {
  ordered_json j;
  j["scorer"] = m.scorer;
  j["ensemble"] = m.ensemble;
  j["template_ids"] = m.template_ids;
  j["backend_id"] = m.backend_id;
  j["model_name"] = m.model_name;
  j["pooling"] = m.pooling;
  j["measure"] = to_string(m.measure);
  return j;
}

MethodDescriptor method_from_json(const json& j) {
  MethodDescriptor m;
  m.scorer = j.value("scorer", m.scorer);
  m.ensemble = j.value("ensemble", m.ensemble);
  m.template_ids = j.value("template_ids", std::vector<std::string>{});
  m.backend_id = j.value("backend_id", "");
  m.model_name = j.value("model_name", "");
  m.pooling = j.value("pooling", "");
  m.measure = parse_similarity_measure(j.value("measure", "cosine"));
  return m;
}

TemplateBank load_bank(const RunConfig& config) {
  if (config.templates == "builtin") return builtin_bank();
  if (config.templates == "builtin:collocation") return builtin_collocation_bank();
  return load_template_bank(config.templates);
}

std::shared_ptr<EmbeddingBackend> make_backend(const RunConfig& config, const Services& services) {
  if (services.backend) return services.backend;
  if (config.backend.kind == BackendKind::mock) {
    return std::make_shared<MockBackend>(config.seed, config.backend.dims.value_or(64));
  }
  return std::make_shared<HttpEmbeddingBackend>(config.backend.endpoint, HttpOptions{config.api_key});
}

std::shared_ptr<Embedder> make_embedder(const RunConfig& config, const Services& services) {
  std::shared_ptr<const EmbeddingCache> cache;
  if (!config.cache_dir.empty()) cache = std::make_shared<EmbeddingCache>(config.cache_dir / "embeddings");
  RetryPolicy retry;
  retry.initial_backoff = std::chrono::milliseconds(config.retry_backoff_ms);
  return std::make_shared<Embedder>(config.backend, make_backend(config, services), cache, retry);
}

std::shared_ptr<ChatClient> make_chat(const RunConfig& config, const Services& services) {
  if (services.chat) return services.chat;
  if (config.chat_endpoint.empty()) return nullptr;
  return std::make_shared<HttpChatClient>(config.chat_endpoint, HttpOptions{config.api_key});
}

std::unique_ptr<TransformCache> make_transform_cache(const RunConfig& config) {
  if (config.cache_dir.empty()) return std::make_unique<TransformCache>();
  return std::make_unique<TransformCache>(config.cache_dir / "transforms.jsonl");
}

std::optional<Group> group_of(const EvaluationInstance& instance, const GroupThresholds& thresholds) {
  try {
    return classify_group(instance, thresholds);
  } catch (const DataError&) {
    return std::nullopt;
  }
}

std::string instance_record(const ScoredCandidates& scored, const InstanceResult& result,
                            const EvaluationInstance& instance) {
  ordered_json rec;
  rec["instance_id"] = scored.instance_id;
  rec["group"] = result.group ? ordered_json(to_string(*result.group)) : ordered_json(nullptr);
  rec["scores"] = scored.scores;
  rec["ranking"] = scored.ranking;
  rec["ground_truth"] = instance.ground_truth;
  ordered_json pairs = ordered_json::array();
  for (const auto& [a, b] : derive_pairs(instance)) pairs.push_back({a, b});
  rec["pairs"] = std::move(pairs);
  rec["rho"] = result.rho ? ordered_json(*result.rho) : ordered_json(nullptr);
  rec["pair_correct"] = result.pair_correct;
  rec["pair_total"] = result.pair_total;
  rec["method"] = method_to_json(scored.method);
  return rec.dump();
}

void write_reports(const DatasetReport& report, const std::filesystem::path& dir, const std::set<std::string>& emit) {
  if (emit.contains("json")) write_file_atomic(dir / kReportJson, report_to_json(report));
  if (emit.contains("csv")) write_file_atomic(dir / kReportCsv, report_to_csv(report));
  if (emit.contains("md")) write_file_atomic(dir / kReportMarkdown, report_to_markdown(report));
}

/// Overall method descriptor for the report: what the run was configured to do.
MethodDescriptor run_method(const RunConfig& config, const std::vector<ScoredCandidates>& scored) {
  MethodDescriptor m;
  m.scorer = std::string(to_string(config.scorer));
  m.ensemble = strategy_of(config).name();
  m.template_ids = config.template_ids;
  m.measure = config.measure;
  if (config.scorer == ScorerKind::compass) {
    m.backend_id = config.backend.backend_id;
    m.model_name = config.backend.model_name;
    m.pooling = config.backend.pooling_tag();
  } else {
    m.backend_id = "logprob";
    m.model_name = config.logprob_model;
    m.pooling = "none";
  }
  if (m.template_ids.empty() && config.ensemble == EnsembleStrategy::Kind::single) {
    std::set<std::string> used;
    for (const auto& s : scored) used.insert(s.method.template_ids.begin(), s.method.template_ids.end());
    m.template_ids.assign(used.begin(), used.end());
  }
  return m;
}

}  // namespace

std::string config_to_json(const RunConfig& c) {
  ordered_json j;
  j["dataset"] = {{"path", c.dataset_path.string()}, {"format", to_string(c.dataset_format)}, {"name", c.dataset_name}};
  j["templates"] = c.templates;
  ordered_json backend;
  backend["backend_id"] = c.backend.backend_id;
  backend["endpoint"] = c.backend.endpoint;
  backend["model_name"] = c.backend.model_name;
  backend["kind"] = to_string(c.backend.kind);
  if (c.backend.pooling) {
    backend["pooling"] = {{"kind", pooling_kind_name(c.backend.pooling->kind)},
                          {"suffix", c.backend.pooling->elicitation_suffix}};
  } else {
    backend["pooling"] = nullptr;
  }
  backend["dims"] = c.backend.dims ? ordered_json(*c.backend.dims) : ordered_json(nullptr);
  backend["normalize_on_receipt"] = c.backend.normalize_on_receipt;
  j["backend"] = std::move(backend);
  j["measure"] = to_string(c.measure);
  j["ensemble"] = strategy_of(c).name();
  j["template_ids"] = c.template_ids;
  j["dev_fraction"] = c.dev_fraction;
  j["scorer"] = to_string(c.scorer);
  j["logprob_endpoint"] = c.logprob_endpoint;
  j["logprob_model"] = c.logprob_model;
  j["chat_endpoint"] = c.chat_endpoint;
  j["cache_dir"] = c.cache_dir.string();
  j["output_dir"] = c.output_dir.string();
  j["max_in_flight"] = c.max_in_flight;
  j["emit"] = std::vector<std::string>(c.emit.begin(), c.emit.end());
  j["thresholds"] = {{"single_min_top1", c.thresholds.single_min_top1},
                     {"multi_min_top4", c.thresholds.multi_min_top4}};
  j["seed"] = c.seed;
  j["retry_backoff_ms"] = c.retry_backoff_ms;
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigError("config is not a JSON object");
  if (doc.contains("config") && doc.at("config").is_object()) doc = doc.at("config");

  RunConfig c;
  try {
    if (doc.contains("dataset")) {
      const auto& d = doc.at("dataset");
      if (d.contains("path")) c.dataset_path = d.at("path").get<std::string>();
      if (d.contains("format")) c.dataset_format = parse_dataset_format(d.at("format").get<std::string>());
      if (d.contains("name")) c.dataset_name = d.at("name").get<std::string>();
    }
    c.templates = doc.value("templates", c.templates);
    if (doc.contains("backend")) {
      const auto& b = doc.at("backend");
      c.backend.backend_id = b.value("backend_id", c.backend.backend_id);
      c.backend.endpoint = b.value("endpoint", c.backend.endpoint);
      c.backend.model_name = b.value("model_name", c.backend.model_name);
      if (b.contains("kind")) c.backend.kind = parse_backend_kind(b.at("kind").get<std::string>());
      if (b.contains("pooling") && !b.at("pooling").is_null()) {
        const auto& p = b.at("pooling");
        auto strategy = PoolingStrategy::parse(p.is_string() ? p.get<std::string>() : p.at("kind").get<std::string>());
        if (p.is_object() && p.contains("suffix") && strategy.kind == PoolingStrategy::Kind::prompt_reps) {
          strategy.elicitation_suffix = p.at("suffix").get<std::string>();
        }
        c.backend.pooling = strategy;
      }
      if (b.contains("dims") && !b.at("dims").is_null()) c.backend.dims = b.at("dims").get<std::size_t>();
      c.backend.normalize_on_receipt = b.value("normalize_on_receipt", c.backend.normalize_on_receipt);
    }
    if (doc.contains("measure")) c.measure = parse_similarity_measure(doc.at("measure").get<std::string>());
    if (doc.contains("ensemble")) c.ensemble = parse_ensemble_kind(doc.at("ensemble").get<std::string>());
    c.template_ids = doc.value("template_ids", c.template_ids);
    c.dev_fraction = doc.value("dev_fraction", c.dev_fraction);
    if (doc.contains("scorer")) c.scorer = parse_scorer_kind(doc.at("scorer").get<std::string>());
    c.logprob_endpoint = doc.value("logprob_endpoint", c.logprob_endpoint);
    c.logprob_model = doc.value("logprob_model", c.logprob_model);
    c.chat_endpoint = doc.value("chat_endpoint", c.chat_endpoint);
    if (doc.contains("cache_dir")) c.cache_dir = doc.at("cache_dir").get<std::string>();
    if (doc.contains("output_dir")) c.output_dir = doc.at("output_dir").get<std::string>();
    c.max_in_flight = doc.value("max_in_flight", c.max_in_flight);
    if (doc.contains("emit")) {
      const auto formats = doc.at("emit").get<std::vector<std::string>>();
      c.emit = std::set<std::string>(formats.begin(), formats.end());
    }
    if (doc.contains("thresholds")) {
      const auto& t = doc.at("thresholds");
      c.thresholds.single_min_top1 = t.value("single_min_top1", c.thresholds.single_min_top1);
      c.thresholds.multi_min_top4 = t.value("multi_min_top4", c.thresholds.multi_min_top4);
    }
    c.seed = doc.value("seed", c.seed);
    c.retry_backoff_ms = doc.value("retry_backoff_ms", c.retry_backoff_ms);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(config_to_json(config)); }

namespace {

void validate_config_impl(const RunConfig& c, const Services& services) {
  if (c.dataset_path.empty()) throw ConfigError("no dataset path given");
  if (!std::filesystem::exists(c.dataset_path)) throw ConfigError("dataset '" + c.dataset_path.string() + "' does not exist");
  if (c.templates != "builtin" && c.templates != "builtin:collocation" && !std::filesystem::exists(c.templates)) {
    throw ConfigError("template bank '" + c.templates + "' does not exist");
  }
  if (c.output_dir.empty()) throw ConfigError("no output directory given");
  if (c.max_in_flight == 0) throw ConfigError("max_in_flight must be at least 1");
  for (const auto& f : c.emit) {
    if (!known_emit_formats().contains(f)) throw ConfigError("unknown emit format '" + f + "'");
  }
  for (double t : {c.thresholds.single_min_top1, c.thresholds.multi_min_top4}) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("group thresholds must lie in (0, 1]");
  }
  if (c.retry_backoff_ms < 0) throw ConfigError("retry_backoff_ms must be non-negative");

  auto strategy = strategy_of(c);
  if (strategy.kind == EnsembleStrategy::Kind::single) {
    if (strategy.template_ids.size() > 1) throw ConfigError("single strategy takes at most one template id");
  } else {
    strategy.validate();
  }

  if (c.scorer == ScorerKind::likelihood) {
    if (c.logprob_endpoint.empty() && !services.logprob) throw ConfigError("likelihood scorer requires a logprob endpoint");
    if (c.ensemble != EnsembleStrategy::Kind::single) throw ConfigError("likelihood scorer supports the single strategy only");
  } else if (!services.backend) {
    c.backend.validate();
  } else if (c.backend.backend_id.empty() || c.backend.model_name.empty()) {
    throw ConfigError("backend_id and model_name must not be empty");
  }
  if (c.scorer == ScorerKind::compass && c.backend.kind == BackendKind::hidden_state_api && !c.backend.pooling) {
    throw ConfigError("hidden_state_api backends require a pooling strategy");
  }
}

}  // namespace

void validate_config(const RunConfig& config) { validate_config_impl(config, Services{}); }

EvaluateResult run_evaluate(const RunConfig& config, const Services& services) {
  staged("config", "", [&] { validate_config_impl(config, services); });

  const auto instances = staged("load", "", [&] { return load_dataset(config.dataset_path, config.dataset_format); });
  if (instances.empty()) throw StageError(ErrorKind::data, "load", "", "dataset is empty");
  const auto bank = staged("templates", "", [&] { return load_bank(config); });

  std::shared_ptr<Embedder> embedder;
  std::shared_ptr<LogprobClient> logprob;
  if (config.scorer == ScorerKind::compass) {
    embedder = staged("backend", "", [&] { return make_embedder(config, services); });
  } else {
    logprob = services.logprob ? services.logprob
                               : std::make_shared<HttpLogprobClient>(config.logprob_endpoint, config.logprob_model,
                                                                     HttpOptions{config.api_key});
  }
  const auto chat = staged("backend", "", [&] { return make_chat(config, services); });
  const auto transform_cache = staged("cache", "", [&] { return make_transform_cache(config); });
  const QaTransform qa{chat.get(), &default_transform_prompt(), transform_cache.get()};

  EvaluateResult result;
  auto strategy = strategy_of(config);
  std::vector<const EvaluationInstance*> to_score;

  if (strategy.kind == EnsembleStrategy::Kind::best_on_dev) {
    std::map<std::string, std::vector<EvaluationInstance>> dev_by_property;
    for (const auto& inst : instances) {
      if (inst.task == TaskKind::attribute && in_dev_split(inst.id, strategy.dev_fraction, config.seed)) {
        dev_by_property[inst.context.property.name].push_back(inst);
      } else {
        to_score.push_back(&inst);
      }
    }
    if (dev_by_property.empty()) {
      throw StageError(ErrorKind::config, "select_template", "", "dev split is smaller than 1 instance");
    }
    if (to_score.empty()) throw StageError(ErrorKind::config, "select_template", "", "no instances left after the dev split");
    for (const auto& [property, dev] : dev_by_property) {
      result.selected_templates[property] = staged("select_template", "", [&] {
        return select_best_template(dev, bank, *embedder, config.measure, config.max_in_flight);
      });
    }
    for (const auto* inst : to_score) {
      if (inst->task == TaskKind::attribute && !result.selected_templates.contains(inst->context.property.name)) {
        throw StageError(ErrorKind::config, "select_template", inst->id,
                         "dev split has no instance for property '" + inst->context.property.name + "'");
      }
    }
  } else {
    for (const auto& inst : instances) to_score.push_back(&inst);
  }

  auto score_one = [&](const EvaluationInstance& inst) -> ScoredCandidates {
    if (inst.task == TaskKind::frame) {
      const SentenceSource source{nullptr, qa};
      if (config.scorer == ScorerKind::likelihood) return likelihood_score(inst, source, *logprob);
      return compass_score(inst, source, *embedder, config.measure);
    }
    if (strategy.kind == EnsembleStrategy::Kind::best_on_dev) {
      const auto& t = bank.at(result.selected_templates.at(inst.context.property.name));
      auto scored = compass_score(inst, SentenceSource{&t, qa}, *embedder, config.measure);
      scored.method.ensemble = "best_on_dev";
      return scored;
    }
    if (strategy.kind == EnsembleStrategy::Kind::single) {
      const Template& t = strategy.template_ids.empty() ? bank.default_for(inst.context.property)
                                                         : bank.at(strategy.template_ids.front());
      const SentenceSource source{&t, qa};
      if (config.scorer == ScorerKind::likelihood) return likelihood_score(inst, source, *logprob);
      return compass_score(inst, source, *embedder, config.measure);
    }
    return ensemble_score(inst, bank, strategy, *embedder, config.measure);
  };

  std::vector<std::optional<ScoredCandidates>> scored(to_score.size());
  parallel_for(to_score.size(), config.max_in_flight, [&](std::size_t i) {
    scored[i] = staged("score", to_score[i]->id, [&] { return score_one(*to_score[i]); });
  });

  for (std::size_t i = 0; i < to_score.size(); ++i) {
    const auto& inst = *to_score[i];
    result.results.push_back(staged("metrics", inst.id, [&] {
      return evaluate_instance(inst, scored[i]->scores, group_of(inst, config.thresholds));
    }));
    result.scored.push_back(*std::move(scored[i]));
  }

  const auto dataset_name =
      config.dataset_name.empty() ? config.dataset_path.stem().string() : config.dataset_name;
  result.report = staged("metrics", "", [&] {
    return aggregate_report(result.results, dataset_name, run_method(config, result.scored));
  });

  if (embedder) {
    result.stats.cache_hits = embedder->cache_hits();
    result.stats.cache_misses = embedder->cache_misses();
    result.stats.backend_requests = embedder->backend().request_count();
  }

  staged("write", "", [&] {
    std::filesystem::create_directories(config.output_dir);
    std::string lines;
    for (std::size_t i = 0; i < to_score.size(); ++i) {
      lines += instance_record(result.scored[i], result.results[i], *to_score[i]);
      lines += '\n';
    }
    write_file_atomic(config.output_dir / kInstancesFile, lines);
    write_reports(result.report, config.output_dir, config.emit);

    ordered_json manifest;
    manifest["tool"] = "compass";
    manifest["config_hash"] = config_hash(config);
    manifest["config"] = ordered_json::parse(config_to_json(config));
    manifest["backend"] = {{"backend_id", config.backend.backend_id},
                           {"model_name", config.backend.model_name},
                           {"kind", to_string(config.backend.kind)},
                           {"endpoint", config.backend.endpoint},
                           {"pooling", config.backend.pooling_tag()},
                           {"dims", embedder && embedder->dims() ? ordered_json(*embedder->dims()) : ordered_json(nullptr)}};
    manifest["method"] = method_to_json(result.report.method);
    manifest["selected_templates"] = result.selected_templates;
    manifest["stats"] = {{"cache_hits", result.stats.cache_hits},
                         {"cache_misses", result.stats.cache_misses},
                         {"backend_requests", result.stats.backend_requests},
                         {"transform_cache_entries", transform_cache->size()}};
    manifest["instances_scored"] = result.scored.size();
    write_file_atomic(config.output_dir / kManifestFile, manifest.dump(2) + "\n");
  });
  return result;
}

std::size_t run_convert(const std::filesystem::path& source, DatasetFormat format, const std::filesystem::path& dest) {
  const auto instances = staged("load", "", [&] { return load_dataset(source, format); });
  staged("write", "", [&] {
    if (dest.has_parent_path()) std::filesystem::create_directories(dest.parent_path());
    write_canonical(dest, instances);
  });
  return instances.size();
}

WarmResult run_cache_warm(const RunConfig& config, const Services& services,
                          const std::optional<std::filesystem::path>& texts_path) {
  if (config.scorer != ScorerKind::compass) {
    throw StageError(ErrorKind::config, "config", "", "cache-warm applies to the compass scorer only");
  }
  if (config.cache_dir.empty()) throw StageError(ErrorKind::config, "config", "", "cache-warm needs a cache directory");

  std::vector<std::string> texts;
  if (texts_path) {
    const auto body = staged("load", "", [&] { return read_file(*texts_path); });
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) texts.push_back(line);
    }
  } else {
    staged("config", "", [&] { validate_config_impl(config, services); });
  }
  const auto embedder = staged("backend", "", [&] { return make_embedder(config, services); });

  if (!texts_path) {
    const auto instances = staged("load", "", [&] { return load_dataset(config.dataset_path, config.dataset_format); });
    const auto bank = staged("templates", "", [&] { return load_bank(config); });
    const auto chat = make_chat(config, services);
    const auto transform_cache = make_transform_cache(config);
    const QaTransform qa{chat.get(), &default_transform_prompt(), transform_cache.get()};
    const auto strategy = strategy_of(config);

    std::set<std::string> seen;
    auto add = [&](const InstanceSentences& s) {
      for (const auto* group : {&s.anchors, &s.candidates}) {
        for (const auto& t : *group) {
          if (seen.insert(t).second) texts.push_back(t);
        }
      }
    };
    for (const auto& inst : instances) {
      staged("construct", inst.id, [&] {
        if (inst.task == TaskKind::frame) {
          add(build_sentences(inst, SentenceSource{nullptr, qa}));
          return;
        }
        std::vector<const Template*> used;
        switch (strategy.kind) {
          case EnsembleStrategy::Kind::best_on_dev: used = bank.in_scope(inst.context.property); break;
          case EnsembleStrategy::Kind::single:
            used.push_back(strategy.template_ids.empty() ? &bank.default_for(inst.context.property)
                                                         : &bank.at(strategy.template_ids.front()));
            break;
          default:
            for (const auto& id : strategy.template_ids) {
              const auto& t = bank.at(id);
              if (t.covers(inst.context.property)) used.push_back(&t);
            }
        }
        for (const auto* t : used) add(build_sentences(inst, SentenceSource{t, qa}));
      });
    }
  }

  const auto hits0 = embedder->cache_hits();
  const auto misses0 = embedder->cache_misses();
  const auto batch = staged("embed", "", [&] { return embedder->embed_batch(texts, config.max_in_flight); });
  for (std::size_t i = 0; i < texts.size(); ++i) {
    staged("embed", "", [&] { (void)batch.at(i); });
  }
  return WarmResult{embedder->cache_hits() - hits0, embedder->cache_misses() - misses0};
}

DatasetReport run_report(const std::filesystem::path& instances_path, const std::string& dataset_name,
                         const std::filesystem::path& output_dir, const std::set<std::string>& emit) {
  for (const auto& f : emit) {
    if (!known_emit_formats().contains(f)) throw StageError(ErrorKind::config, "config", "", "unknown emit format '" + f + "'");
  }
  const auto body = staged("load", "", [&] { return read_file(instances_path); });
  std::vector<InstanceResult> results;
  std::optional<MethodDescriptor> method;
  std::istringstream in(body);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    staged("load", "", [&] {
      const json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) throw ParseError(instances_path.string(), line_no, "malformed JSON");
      try {
        const auto scores = rec.at("scores").get<std::vector<double>>();
        const auto truth = rec.at("ground_truth").get<std::vector<double>>();
        std::vector<IndexPair> pairs;
        for (const auto& p : rec.at("pairs")) pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
        for (const auto& [a, b] : pairs) {
          if (a >= truth.size() || b >= truth.size() || scores.size() != truth.size()) {
            throw ParseError(instances_path.string(), line_no, "pair index out of range");
          }
        }
        InstanceResult r;
        r.instance_id = rec.at("instance_id").get<std::string>();
        r.rho = spearman_rho(scores, truth);
        const auto tally = binary_accuracy(scores, pairs, truth);
        r.pair_correct = tally.correct;
        r.pair_total = tally.total;
        if (rec.contains("group") && rec.at("group").is_string()) r.group = parse_group(rec.at("group").get<std::string>());
        if (!method) method = method_from_json(rec.at("method"));
        results.push_back(std::move(r));
      } catch (const json::exception& e) {
        throw ParseError(instances_path.string(), line_no, e.what());
      }
    });
  }
  if (results.empty()) throw StageError(ErrorKind::data, "load", "", "no per-instance records in '" + instances_path.string() + "'");
  // the run-level method lives in the manifest when the records came from evaluate
  if (const auto manifest = instances_path.parent_path() / kManifestFile; std::filesystem::exists(manifest)) {
    staged("load", "", [&] {
      const json m = json::parse(read_file(manifest), nullptr, false);
      if (m.is_object() && m.contains("method")) method = method_from_json(m.at("method"));
    });
  }

  auto report = staged("metrics", "", [&] { return aggregate_report(results, dataset_name, *method); });
  staged("write", "", [&] {
    std::filesystem::create_directories(output_dir);
    write_reports(report, output_dir, emit);
  });
  return report;
}

}  // namespace compass
