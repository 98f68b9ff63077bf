#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compass/dataset.hpp"
#include "compass/method.hpp"

namespace compass {

/// Fractional ranks, 1 = largest value; ties share the mean of their positions.
/// Throws DataError on NaN.
std::vector<double> average_rank(std::span<const double> values);

/// Pearson correlation of the fractional ranks, clamped to [-1, 1].
/// nullopt when either rank vector is constant. Throws DataError on length mismatch, n < 2 or NaN.
std::optional<double> spearman_rho(std::span<const double> predicted, std::span<const double> ground_truth);

struct PairTally {
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// A pair is correct only when the candidate with strictly higher truth also has a strictly higher score.
PairTally binary_accuracy(std::span<const double> scores, std::span<const IndexPair> pairs,
                          std::span<const double> ground_truth);

struct InstanceResult {
  std::string instance_id;
  std::optional<double> rho;
  std::size_t pair_total = 0;
  std::size_t pair_correct = 0;
  std::optional<Group> group;

  friend bool operator==(const InstanceResult&, const InstanceResult&) = default;
};

/// Scores one instance against its ground truth using derive_pairs for the binary comparisons.
InstanceResult evaluate_instance(const EvaluationInstance& instance, std::span<const double> scores,
                                 std::optional<Group> group);

struct GroupSummary {
  std::optional<double> mean_rho;
  std::optional<double> accuracy;
  std::size_t count = 0;
  std::size_t undefined_rho_count = 0;
  std::size_t pair_correct = 0;
  std::size_t pair_total = 0;
};

struct DatasetReport {
  std::string dataset_name;
  MethodDescriptor method;
  double mean_rho = 0.0;
  std::optional<double> accuracy;  // nullopt when no instance has comparison pairs
  std::size_t instance_count = 0;
  std::size_t undefined_rho_count = 0;
  std::size_t pair_correct = 0;
  std::size_t pair_total = 0;
  /// Keys: "single", "multi", "any", "unclassified"; only groups that occur.
  std::vector<std::pair<std::string, GroupSummary>> per_group;
};

/// Unweighted mean of defined per-instance rho; accuracy pooled over pairs.
/// Throws DataError on empty input or when no instance has a defined rho.
DatasetReport aggregate_report(std::span<const InstanceResult> results, std::string dataset_name,
                               MethodDescriptor method);

/// Two decimals, scaled by 100: 0.62871 -> "62.87".
std::string format_percent(double fraction);

std::string report_to_json(const DatasetReport& report);
std::string report_to_csv(const DatasetReport& report);
std::string report_to_markdown(const DatasetReport& report);

}  // namespace compass
