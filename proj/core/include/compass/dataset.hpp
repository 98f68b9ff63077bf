#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace compass {

enum class TaskKind { attribute, frame };

enum class Group { single, multi, any };

/// Object property queried by attribute tasks. `other` keeps its name in `Property::name`.
struct Property {
  enum class Kind { color, shape, material, other };
  Kind kind = Kind::color;
  std::string name = "color";

  static Property parse(std::string_view text);
  friend bool operator==(const Property& a, const Property& b) = default;
};

/// Either an (object, property) pair or a free-form question, depending on the task.
struct Context {
  std::string object;
  Property property;
  std::string question;

  friend bool operator==(const Context&, const Context&) = default;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

struct EvaluationInstance {
  std::string id;
  TaskKind task = TaskKind::attribute;
  Context context;
  std::vector<std::string> candidates;
  std::vector<double> ground_truth;
  std::optional<Group> group;
  std::optional<std::vector<IndexPair>> pairs;
  std::map<std::size_t, std::string> pretransformed;

  [[nodiscard]] std::size_t size() const noexcept { return candidates.size(); }
  friend bool operator==(const EvaluationInstance&, const EvaluationInstance&) = default;
};

struct GroupThresholds {
  double single_min_top1 = 0.8;
  double multi_min_top4 = 0.9;
  friend bool operator==(const GroupThresholds&, const GroupThresholds&) = default;
};

enum class DatasetFormat { canonical, coda, vicomte, cfc };

std::string_view to_string(TaskKind kind);
std::string_view to_string(Group group);
std::string_view to_string(DatasetFormat format);
std::optional<Group> parse_group(std::string_view text);
/// Throws ConfigError for unknown names.
DatasetFormat parse_dataset_format(std::string_view text);

/// Every violated invariant, in a stable order. Empty means the instance is valid.
std::vector<std::string> validate_instance(const EvaluationInstance& instance);

/// Explicit pairs if the instance carries them, else all (i, j), i < j, with distinct truth.
std::vector<IndexPair> derive_pairs(const EvaluationInstance& instance);

/// Dataset label wins; otherwise thresholds are applied to the normalized truth.
/// Throws DataError when the ground truth sums to zero.
Group classify_group(const EvaluationInstance& instance, const GroupThresholds& thresholds);

/// Parses one canonical JSONL record. `source`/`line` only decorate errors.
EvaluationInstance parse_canonical_record(std::string_view json_line, const std::string& source = "<memory>",
                                          std::size_t line = 0);
/// Serializes to a single canonical JSONL line (no trailing newline).
std::string to_canonical_record(const EvaluationInstance& instance);

/// Loads and validates every record. Blank lines are skipped.
std::vector<EvaluationInstance> load_dataset(const std::filesystem::path& path, DatasetFormat format);

/// Parses already-read text; used by `load_dataset` and handy in tests.
std::vector<EvaluationInstance> parse_dataset(std::string_view text, DatasetFormat format,
                                              const std::string& source = "<memory>");

void write_canonical(const std::filesystem::path& path, const std::vector<EvaluationInstance>& instances);

/// The fixed 11-colour vocabulary used by CoDa-style records, in label order.
const std::vector<std::string>& coda_colors();

}  // namespace compass
