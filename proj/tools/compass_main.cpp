#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "compass/error.hpp"
#include "compass/run.hpp"
#include "compass/util.hpp"
#include "json.hpp"

namespace {

using namespace compass;

// Flags left unset fall through to the config file, then to RunConfig defaults.
struct Overrides {
  std::optional<std::string> config_file;
  std::optional<std::string> dataset, format, dataset_name, templates;
  std::optional<std::string> backend_id, endpoint, api_key, model, backend_kind, pooling, prompt_suffix;
  std::optional<std::size_t> dims;
  std::optional<bool> normalize;
  std::optional<std::string> measure, ensemble;
  std::vector<std::string> template_ids;
  std::optional<double> dev_fraction;
  std::optional<std::string> scorer, logprob_endpoint, logprob_model, chat_endpoint;
  std::optional<std::string> cache_dir, output_dir;
  std::optional<std::size_t> max_in_flight;
  std::vector<std::string> emit;
  std::optional<double> single_threshold, multi_threshold;
  std::optional<std::uint64_t> seed;
  std::optional<int> retry_backoff_ms;
};

void add_config_flags(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--config", o.config_file, "JSON config file (a run manifest also works)")->check(CLI::ExistingFile);
  cmd.add_option("--dataset", o.dataset, "Dataset path");
  cmd.add_option("--format", o.format, "Dataset format")->check(CLI::IsMember({"canonical", "coda", "vicomte", "cfc"}));
  cmd.add_option("--dataset-name", o.dataset_name, "Name used in reports");
  cmd.add_option("--templates", o.templates, "Template bank: builtin, builtin:collocation or a JSONL path");
  cmd.add_option("--backend-id", o.backend_id, "Backend identifier");
  cmd.add_option("--endpoint", o.endpoint, "Embedding service base URL")->envname("COMPASS_ENDPOINT");
  cmd.add_option("--api-key", o.api_key, "Bearer token")->envname("COMPASS_API_KEY");
  cmd.add_option("--model", o.model, "Model name")->envname("COMPASS_MODEL");
  cmd.add_option("--backend-kind", o.backend_kind, "Backend kind")
      ->check(CLI::IsMember({"vector_api", "hidden_state_api", "mock"}));
  cmd.add_option("--pooling", o.pooling, "Pooling for hidden-state backends")
      ->check(CLI::IsMember({"cls_first", "eos_last", "last_token", "prompt_reps"}));
  cmd.add_option("--prompt-suffix", o.prompt_suffix, "Elicitation suffix for prompt_reps pooling");
  cmd.add_option("--dims", o.dims, "Expected embedding dimensionality");
  cmd.add_option("--normalize", o.normalize, "L2-normalize vectors on receipt (true/false)");
  cmd.add_option("--measure", o.measure, "Similarity measure")->check(CLI::IsMember({"cosine", "dot"}));
  cmd.add_option("--ensemble", o.ensemble, "Ensemble strategy")
      ->check(CLI::IsMember({"single", "score_level", "representation_level", "best_on_dev"}));
  cmd.add_option("--template", o.template_ids, "Template id (repeatable)");
  cmd.add_option("--dev-fraction", o.dev_fraction, "Dev split fraction for best_on_dev");
  cmd.add_option("--scorer", o.scorer, "Scorer")->check(CLI::IsMember({"compass", "likelihood"}));
  cmd.add_option("--logprob-endpoint", o.logprob_endpoint, "Log-prob service base URL")
      ->envname("COMPASS_LOGPROB_ENDPOINT");
  cmd.add_option("--logprob-model", o.logprob_model, "Model for the log-prob service");
  cmd.add_option("--chat-endpoint", o.chat_endpoint, "Chat service base URL for QA transforms")
      ->envname("COMPASS_CHAT_ENDPOINT");
  cmd.add_option("--cache-dir", o.cache_dir, "Embedding and transform cache directory");
  cmd.add_option("--output-dir", o.output_dir, "Output directory");
  cmd.add_option("--max-in-flight", o.max_in_flight, "Concurrent instances")->check(CLI::PositiveNumber);
  cmd.add_option("--emit", o.emit, "Report formats (repeatable)")->check(CLI::IsMember({"json", "csv", "md"}));
  cmd.add_option("--single-threshold", o.single_threshold, "Top-1 mass for the single group");
  cmd.add_option("--multi-threshold", o.multi_threshold, "Top-4 mass for the multi group");
  cmd.add_option("--seed", o.seed, "Mock backend seed and dev split salt");
  cmd.add_option("--retry-backoff-ms", o.retry_backoff_ms, "Initial retry backoff");
}

RunConfig build_config(const Overrides& o) {
  RunConfig c;
  if (o.config_file) c = config_from_json(read_file(*o.config_file));
  if (o.dataset) c.dataset_path = *o.dataset;
  if (o.format) c.dataset_format = parse_dataset_format(*o.format);
  if (o.dataset_name) c.dataset_name = *o.dataset_name;
  if (o.templates) c.templates = *o.templates;
  if (o.backend_id) c.backend.backend_id = *o.backend_id;
  if (o.endpoint) c.backend.endpoint = *o.endpoint;
  if (o.api_key) c.api_key = *o.api_key;
  if (o.model) c.backend.model_name = *o.model;
  if (o.backend_kind) c.backend.kind = parse_backend_kind(*o.backend_kind);
  if (o.pooling) c.backend.pooling = PoolingStrategy::parse(*o.pooling);
  if (o.prompt_suffix) {
    if (!c.backend.pooling || c.backend.pooling->kind != PoolingStrategy::Kind::prompt_reps) {
      throw ConfigError("--prompt-suffix needs prompt_reps pooling");
    }
    c.backend.pooling->elicitation_suffix = *o.prompt_suffix;
  }
  if (o.dims) c.backend.dims = *o.dims;
  if (o.normalize) c.backend.normalize_on_receipt = *o.normalize;
  if (o.measure) c.measure = parse_similarity_measure(*o.measure);
  if (o.ensemble) c.ensemble = parse_ensemble_kind(*o.ensemble);
  if (!o.template_ids.empty()) c.template_ids = o.template_ids;
  if (o.dev_fraction) c.dev_fraction = *o.dev_fraction;
  if (o.scorer) c.scorer = parse_scorer_kind(*o.scorer);
  if (o.logprob_endpoint) c.logprob_endpoint = *o.logprob_endpoint;
  if (o.logprob_model) c.logprob_model = *o.logprob_model;
  if (o.chat_endpoint) c.chat_endpoint = *o.chat_endpoint;
  if (o.cache_dir) c.cache_dir = *o.cache_dir;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.max_in_flight) c.max_in_flight = *o.max_in_flight;
  if (!o.emit.empty()) c.emit = std::set<std::string>(o.emit.begin(), o.emit.end());
  if (o.single_threshold) c.thresholds.single_min_top1 = *o.single_threshold;
  if (o.multi_threshold) c.thresholds.multi_min_top4 = *o.multi_threshold;
  if (o.seed) c.seed = *o.seed;
  if (o.retry_backoff_ms) c.retry_backoff_ms = *o.retry_backoff_ms;
  return c;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::backend: return 3;
  }
  return 1;
}

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::backend: return "backend";
  }
  return "config";
}

int report_error(ErrorKind kind, const std::string& stage, const std::string& instance_id, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind_name(kind);
  j["exit_code"] = exit_code(kind);
  j["stage"] = stage.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(stage);
  j["instance_id"] = instance_id.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(instance_id);
  j["message"] = message;
  std::cerr << j.dump() << "\n";
  return exit_code(kind);
}

void print_summary(const DatasetReport& r, const std::filesystem::path& dir) {
  std::printf("%s: %zu instances, rho %s%%, accuracy %s -> %s\n", r.dataset_name.c_str(), r.instance_count,
              format_percent(r.mean_rho).c_str(), r.accuracy ? (format_percent(*r.accuracy) + "%").c_str() : "n/a",
              dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compass: commonsense plausibility scoring by semantic shift"};
  app.require_subcommand(1);

  Overrides eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "Score a dataset and write reports");
  add_config_flags(*evaluate, eval_flags);

  Overrides warm_flags;
  std::optional<std::string> texts;
  auto* warm = app.add_subcommand("cache-warm", "Embed every sentence an evaluation would need");
  add_config_flags(*warm, warm_flags);
  warm->add_option("--texts", texts, "Embed the lines of this file instead")->check(CLI::ExistingFile);

  std::string convert_from, convert_to, convert_format;
  auto* convert = app.add_subcommand("convert", "Convert a source dataset to canonical JSONL");
  convert->add_option("--from", convert_from, "Source file")->required();
  convert->add_option("--format", convert_format, "Source format")
      ->required()
      ->check(CLI::IsMember({"canonical", "coda", "vicomte", "cfc"}));
  convert->add_option("--to", convert_to, "Destination JSONL")->required();

  std::string report_instances, report_name, report_dir;
  std::vector<std::string> report_emit;
  auto* report = app.add_subcommand("report", "Re-render metrics from a per-instance artifact file");
  report->add_option("--instances", report_instances, "instances.jsonl from an evaluate run")->required();
  report->add_option("--dataset-name", report_name, "Name used in reports")->required();
  report->add_option("--output-dir", report_dir, "Output directory")->required();
  report->add_option("--emit", report_emit, "Report formats (repeatable)")->check(CLI::IsMember({"json", "csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return report_error(ErrorKind::config, "usage", "", e.what());
  }

  try {
    if (*evaluate) {
      const auto config = build_config(eval_flags);
      const auto result = run_evaluate(config);
      print_summary(result.report, config.output_dir);
      std::printf("cache hits %llu, misses %llu, backend requests %llu\n",
                  static_cast<unsigned long long>(result.stats.cache_hits),
                  static_cast<unsigned long long>(result.stats.cache_misses),
                  static_cast<unsigned long long>(result.stats.backend_requests));
    } else if (*warm) {
      const auto config = build_config(warm_flags);
      std::optional<std::filesystem::path> texts_path;
      if (texts) texts_path = *texts;
      const auto r = run_cache_warm(config, {}, texts_path);
      std::printf("hits %llu, misses %llu\n", static_cast<unsigned long long>(r.hits),
                  static_cast<unsigned long long>(r.misses));
    } else if (*convert) {
      const auto n = run_convert(convert_from, parse_dataset_format(convert_format), convert_to);
      std::printf("%zu instances -> %s\n", n, convert_to.c_str());
    } else if (*report) {
      std::set<std::string> emit{"json", "csv", "md"};
      if (!report_emit.empty()) emit = std::set<std::string>(report_emit.begin(), report_emit.end());
      const auto r = run_report(report_instances, report_name, report_dir, emit);
      print_summary(r, report_dir);
    }
  } catch (const StageError& e) {
    return report_error(e.kind(), e.stage(), e.instance_id(), e.message());
  } catch (const Error& e) {
    return report_error(e.kind(), "", "", e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorKind::data, "", "", e.what());
  }
  return 0;
}
