#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "compass/dataset.hpp"
#include "compass/embedding.hpp"
#include "compass/metrics.hpp"
#include "compass/scoring.hpp"
#include "compass/templating.hpp"

namespace compass {

enum class ScorerKind { compass, likelihood };

/// Everything one evaluation run depends on. Serializes to the `config` block of the run manifest.
struct RunConfig {
  std::filesystem::path dataset_path;
  DatasetFormat dataset_format = DatasetFormat::canonical;
  std::string dataset_name;  // defaults to the dataset file stem

  std::string templates = "builtin";  // "builtin", "builtin:collocation" or a JSONL path

  BackendDescriptor backend;
  std::string api_key;  // never serialized

  SimilarityMeasure measure = SimilarityMeasure::cosine;
  EnsembleStrategy::Kind ensemble = EnsembleStrategy::Kind::single;
  std::vector<std::string> template_ids;  // empty + single = per-property default template
  double dev_fraction = 0.2;

  ScorerKind scorer = ScorerKind::compass;
  std::string logprob_endpoint;
  std::string logprob_model;
  std::string chat_endpoint;

  std::filesystem::path cache_dir;   // empty disables the embedding cache
  std::filesystem::path output_dir = "compass-out";
  std::size_t max_in_flight = 4;
  std::set<std::string> emit = {"json", "csv", "md"};
  GroupThresholds thresholds;
  std::uint64_t seed = 0;
  int retry_backoff_ms = 200;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string_view to_string(ScorerKind kind);
ScorerKind parse_scorer_kind(std::string_view text);

/// Canonical JSON (fixed key order). The API key is omitted.
std::string config_to_json(const RunConfig& config);
/// Accepts a config object or a run manifest carrying one under "config". Missing keys keep defaults.
RunConfig config_from_json(const std::string& text);
std::string config_hash(const RunConfig& config);

/// Checks invariants that need no network: scorer/endpoint pairing, ensemble template lists,
/// path existence, emit formats. Throws ConfigError.
void validate_config(const RunConfig& config);

/// Client overrides; anything left null is built from the config.
struct Services {
  std::shared_ptr<EmbeddingBackend> backend;
  std::shared_ptr<ChatClient> chat;
  std::shared_ptr<LogprobClient> logprob;
};

struct RunStats {
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t backend_requests = 0;
};

struct EvaluateResult {
  DatasetReport report;
  std::vector<ScoredCandidates> scored;
  std::vector<InstanceResult> results;
  std::map<std::string, std::string> selected_templates;  // property -> template id (best_on_dev)
  RunStats stats;
};

/// Output file names inside RunConfig::output_dir.
inline constexpr const char* kInstancesFile = "instances.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kReportMarkdown = "report.md";

/// load -> construct -> score -> metrics -> write. Errors are StageError with stage and instance id.
EvaluateResult run_evaluate(const RunConfig& config, const Services& services = {});

/// Converts a source-format dataset to canonical JSONL; returns the number of instances written.
std::size_t run_convert(const std::filesystem::path& source, DatasetFormat format, const std::filesystem::path& dest);

struct WarmResult {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
};

/// Embeds every sentence the evaluation would need (or each line of `texts_path` when given).
WarmResult run_cache_warm(const RunConfig& config, const Services& services = {},
                          const std::optional<std::filesystem::path>& texts_path = std::nullopt);

/// Re-renders metrics from a per-instance artifact file into `output_dir`.
DatasetReport run_report(const std::filesystem::path& instances_path, const std::string& dataset_name,
                         const std::filesystem::path& output_dir, const std::set<std::string>& emit);

}  // namespace compass
