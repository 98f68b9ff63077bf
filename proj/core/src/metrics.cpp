#include "compass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "compass/error.hpp"
#include "json.hpp"

namespace compass {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(SimilarityMeasure measure) { return measure == SimilarityMeasure::cosine ? "cosine" : "dot"; }

SimilarityMeasure parse_similarity_measure(std::string_view text) {
  if (text == "cosine") return SimilarityMeasure::cosine;
  if (text == "dot") return SimilarityMeasure::dot;
  throw ConfigError("unknown similarity measure '" + std::string(text) + "'");
}

std::vector<double> average_rank(std::span<const double> values) {
  const auto n = values.size();
  for (double v : values) {
    if (std::isnan(v)) throw DataError("cannot rank NaN values");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });

  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i+1 .. j share their mean rank.
    const double shared = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    i = j;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> predicted, std::span<const double> ground_truth) {
  if (predicted.size() != ground_truth.size()) {
    throw DataError("spearman_rho: length mismatch (" + std::to_string(predicted.size()) + " vs " +
                    std::to_string(ground_truth.size()) + ")");
  }
  const auto n = predicted.size();
  if (n < 2) throw DataError("spearman_rho: need at least 2 observations");

  const auto rp = average_rank(predicted);
  const auto rt = average_rank(ground_truth);
  const double mean = static_cast<double>(n + 1) / 2.0;

  double cross = 0.0;
  double var_p = 0.0;
  double var_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = rp[i] - mean;
    const double dt = rt[i] - mean;
    cross += dp * dt;
    var_p += dp * dp;
    var_t += dt * dt;
  }
  if (var_p == 0.0 || var_t == 0.0) return std::nullopt;
  const double rho = cross / std::sqrt(var_p * var_t);
  return std::clamp(rho, -1.0, 1.0);
}

PairTally binary_accuracy(std::span<const double> scores, std::span<const IndexPair> pairs,
                          std::span<const double> ground_truth) {
  PairTally tally;
  for (const auto& [a, b] : pairs) {
    ++tally.total;
    const auto hi = ground_truth[a] > ground_truth[b] ? a : b;
    const auto lo = hi == a ? b : a;
    if (ground_truth[hi] > ground_truth[lo] && scores[hi] > scores[lo]) ++tally.correct;
  }
  return tally;
}

InstanceResult evaluate_instance(const EvaluationInstance& instance, std::span<const double> scores,
                                 std::optional<Group> group) {
  InstanceResult out;
  out.instance_id = instance.id;
  out.rho = spearman_rho(scores, instance.ground_truth);
  const auto pairs = derive_pairs(instance);
  const auto tally = binary_accuracy(scores, pairs, instance.ground_truth);
  out.pair_correct = tally.correct;
  out.pair_total = tally.total;
  out.group = group;
  return out;
}

namespace {

GroupSummary summarize(std::span<const InstanceResult* const> results) {
  GroupSummary s;
  double rho_sum = 0.0;
  std::size_t defined = 0;
  for (const auto* r : results) {
    ++s.count;
    if (r->rho) {
      rho_sum += *r->rho;
      ++defined;
    } else {
      ++s.undefined_rho_count;
    }
    s.pair_correct += r->pair_correct;
    s.pair_total += r->pair_total;
  }
  if (defined > 0) s.mean_rho = rho_sum / static_cast<double>(defined);
  if (s.pair_total > 0) s.accuracy = static_cast<double>(s.pair_correct) / static_cast<double>(s.pair_total);
  return s;
}

std::string group_key(const std::optional<Group>& g) { return g ? std::string(to_string(*g)) : "unclassified"; }

ordered_json method_json(const MethodDescriptor& m) {
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

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }
ordered_json optional_percent(const std::optional<double>& v) {
  return v ? ordered_json(format_percent(*v)) : ordered_json(nullptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::string number_text(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

DatasetReport aggregate_report(std::span<const InstanceResult> results, std::string dataset_name,
                               MethodDescriptor method) {
  if (results.empty()) throw DataError("cannot aggregate an empty result set");

  std::vector<const InstanceResult*> all;
  all.reserve(results.size());
  for (const auto& r : results) all.push_back(&r);
  const auto overall = summarize(all);
  if (!overall.mean_rho) throw DataError("every instance has an undefined rho");

  DatasetReport report;
  report.dataset_name = std::move(dataset_name);
  report.method = std::move(method);
  report.mean_rho = *overall.mean_rho;
  report.accuracy = overall.accuracy;
  report.instance_count = overall.count;
  report.undefined_rho_count = overall.undefined_rho_count;
  report.pair_correct = overall.pair_correct;
  report.pair_total = overall.pair_total;

  for (const std::optional<Group> g :
       {std::optional<Group>(Group::single), std::optional<Group>(Group::multi), std::optional<Group>(Group::any),
        std::optional<Group>()}) {
    std::vector<const InstanceResult*> members;
    for (const auto& r : results) {
      if (r.group == g) members.push_back(&r);
    }
    if (!members.empty()) report.per_group.emplace_back(group_key(g), summarize(members));
  }
  return report;
}

std::string format_percent(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  std::string out = buf;
  if (out == "-0.00") out = "0.00";
  return out;
}

std::string report_to_json(const DatasetReport& report) {
  ordered_json j;
  j["dataset"] = report.dataset_name;
  j["method"] = method_json(report.method);
  j["instance_count"] = report.instance_count;
  j["undefined_rho_count"] = report.undefined_rho_count;
  j["mean_rho"] = report.mean_rho;
  j["accuracy"] = optional_number(report.accuracy);
  j["pair_correct"] = report.pair_correct;
  j["pair_total"] = report.pair_total;
  j["mean_rho_pct"] = format_percent(report.mean_rho);
  j["accuracy_pct"] = optional_percent(report.accuracy);
  ordered_json groups = ordered_json::object();
  for (const auto& [name, s] : report.per_group) {
    ordered_json g;
    g["count"] = s.count;
    g["undefined_rho_count"] = s.undefined_rho_count;
    g["mean_rho"] = optional_number(s.mean_rho);
    g["accuracy"] = optional_number(s.accuracy);
    g["pair_correct"] = s.pair_correct;
    g["pair_total"] = s.pair_total;
    g["mean_rho_pct"] = optional_percent(s.mean_rho);
    g["accuracy_pct"] = optional_percent(s.accuracy);
    groups[name] = std::move(g);
  }
  j["per_group"] = std::move(groups);
  return j.dump(2) + "\n";
}

std::string report_to_csv(const DatasetReport& report) {
  std::ostringstream out;
  out << "dataset,scorer,ensemble,templates,backend,model,pooling,measure,group,count,undefined_rho,"
         "mean_rho,accuracy,mean_rho_pct,accuracy_pct,pair_correct,pair_total\n";
  const auto& m = report.method;
  const std::string prefix = csv_field(report.dataset_name) + "," + csv_field(m.scorer) + "," + csv_field(m.ensemble) +
                             "," + csv_field(join(m.template_ids, ";")) + "," + csv_field(m.backend_id) + "," +
                             csv_field(m.model_name) + "," + csv_field(m.pooling) + "," +
                             std::string(to_string(m.measure));
  auto row = [&](const std::string& group, std::size_t count, std::size_t undefined, std::optional<double> rho,
                 std::optional<double> acc, std::size_t correct, std::size_t total) {
    out << prefix << "," << group << "," << count << "," << undefined << "," << number_text(rho) << ","
        << number_text(acc) << "," << (rho ? format_percent(*rho) : "") << "," << (acc ? format_percent(*acc) : "")
        << "," << correct << "," << total << "\n";
  };
  row("all", report.instance_count, report.undefined_rho_count, report.mean_rho, report.accuracy, report.pair_correct,
      report.pair_total);
  for (const auto& [name, s] : report.per_group) {
    row(name, s.count, s.undefined_rho_count, s.mean_rho, s.accuracy, s.pair_correct, s.pair_total);
  }
  return out.str();
}

std::string report_to_markdown(const DatasetReport& report) {
  std::ostringstream out;
  const auto& m = report.method;
  out << "## " << report.dataset_name << "\n\n";
  out << "Method: " << m.scorer << " / " << m.ensemble << " / " << m.backend_id << " (" << m.model_name << ")";
  if (!m.template_ids.empty()) out << " / templates: " << join(m.template_ids, ", ");
  out << "\n\n";
  out << "| Group | Instances | Undefined ρ | ρ (%) | Accuracy (%) |\n";
  out << "|---|---:|---:|---:|---:|\n";
  auto row = [&](const std::string& name, std::size_t count, std::size_t undefined, std::optional<double> rho,
                 std::optional<double> acc) {
    out << "| " << name << " | " << count << " | " << undefined << " | " << (rho ? format_percent(*rho) : "n/a")
        << " | " << (acc ? format_percent(*acc) : "n/a") << " |\n";
  };
  row("all", report.instance_count, report.undefined_rho_count, report.mean_rho, report.accuracy);
  for (const auto& [name, s] : report.per_group) row(name, s.count, s.undefined_rho_count, s.mean_rho, s.accuracy);
  return out.str();
}

}  // namespace compass
