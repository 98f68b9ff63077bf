#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compass/dataset.hpp"
#include "compass/embedding.hpp"
#include "compass/method.hpp"
#include "compass/templating.hpp"

namespace compass {

/// Cosine is clamped to [-1, 1]. Throws DataError on dimension mismatch or a zero vector under cosine.
double similarity(std::span<const double> a, std::span<const double> b, SimilarityMeasure measure);
double similarity(const EmbeddingVector& a, const EmbeddingVector& b, SimilarityMeasure measure);

/// Indices by descending score; equal scores keep ascending index order. Throws DataError on NaN.
std::vector<std::size_t> rank_candidates(std::span<const double> scores);

struct ScoredCandidates {
  std::string instance_id;
  std::vector<double> scores;
  MethodDescriptor method;
  std::vector<std::size_t> ranking;
};

/// How sentences are built: a template for attribute instances, the QA transform for frame instances.
struct SentenceSource {
  const Template* tmpl = nullptr;
  QaTransform qa;
};

/// Anchor and candidate sentences for every candidate of one instance.
/// Attribute instances share one anchor; frame instances get one blanked anchor per candidate.
struct InstanceSentences {
  std::vector<std::string> anchors;  // size 1 (shared) or K
  std::vector<std::string> candidates;

  [[nodiscard]] const std::string& anchor_for(std::size_t i) const { return anchors.size() == 1 ? anchors[0] : anchors[i]; }
};

InstanceSentences build_sentences(const EvaluationInstance& instance, const SentenceSource& source);

/// Semantic-shift score: p_i = sim(anchor, candidate_i). Any failure aborts the whole instance.
ScoredCandidates compass_score(const EvaluationInstance& instance, const SentenceSource& source, Embedder& embedder,
                               SimilarityMeasure measure = SimilarityMeasure::cosine, std::size_t max_in_flight = 1);

struct EnsembleStrategy {
  enum class Kind { single, score_level, representation_level, best_on_dev };
  Kind kind = Kind::single;
  std::vector<std::string> template_ids;
  double dev_fraction = 0.2;

  static EnsembleStrategy single(std::string id) { return {Kind::single, {std::move(id)}, 0.2}; }
  static EnsembleStrategy score_level(std::vector<std::string> ids);
  static EnsembleStrategy representation_level(std::vector<std::string> ids);
  static EnsembleStrategy best_on_dev(double fraction) { return {Kind::best_on_dev, {}, fraction}; }

  /// Throws ConfigError for an empty explicit list or a dev fraction outside (0, 1).
  void validate() const;
  [[nodiscard]] std::string name() const;
};

EnsembleStrategy::Kind parse_ensemble_kind(std::string_view text);

/// Per-instance ensemble over templates from `bank`. best_on_dev needs the whole dataset; see score_dataset.
ScoredCandidates ensemble_score(const EvaluationInstance& instance, const TemplateBank& bank,
                                const EnsembleStrategy& strategy, Embedder& embedder,
                                SimilarityMeasure measure = SimilarityMeasure::cosine, std::size_t max_in_flight = 1);

/// Returns the in-scope template with the highest mean per-instance rho; earlier bank position wins ties.
std::string select_best_template(std::span<const EvaluationInstance> instances, const TemplateBank& bank,
                                 Embedder& embedder, SimilarityMeasure measure = SimilarityMeasure::cosine,
                                 std::size_t max_in_flight = 1);

/// True when `id` lands in the dev split for the given salt and fraction.
bool in_dev_split(std::string_view id, double dev_fraction, std::uint64_t salt);

/// Per-token log-probabilities of a text under a causal model.
class LogprobClient {
 public:
  virtual ~LogprobClient() = default;
  /// nullopt when the service does not expose log-probabilities.
  virtual std::optional<std::vector<double>> token_logprobs(const std::string& text) = 0;
  [[nodiscard]] virtual std::string model_name() const { return "logprob"; }
};

/// Length-normalized sentence log-likelihood of each candidate sentence.
ScoredCandidates likelihood_score(const EvaluationInstance& instance, const SentenceSource& source,
                                  LogprobClient& client);

}  // namespace compass
