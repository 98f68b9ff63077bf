#include "compass/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "compass/error.hpp"
#include "compass/metrics.hpp"
#include "compass/util.hpp"

namespace compass {

double similarity(std::span<const double> a, std::span<const double> b, SimilarityMeasure measure) {
  if (a.size() != b.size()) {
    throw DataError("similarity: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                    ")");
  }
  const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  if (measure == SimilarityMeasure::dot) return dot;
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DataError("similarity: cosine of a zero vector");
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double similarity(const EmbeddingVector& a, const EmbeddingVector& b, SimilarityMeasure measure) {
  return similarity(std::span<const double>(a.values), std::span<const double>(b.values), measure);
}

std::vector<std::size_t> rank_candidates(std::span<const double> scores) {
  for (double s : scores) {
    if (std::isnan(s)) throw DataError("rank_candidates: NaN score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

InstanceSentences build_sentences(const EvaluationInstance& instance, const SentenceSource& source) {
  InstanceSentences out;
  out.candidates.reserve(instance.size());
  if (instance.task == TaskKind::attribute) {
    if (!source.tmpl) throw ConfigError("instance '" + instance.id + "': attribute task needs a template");
    for (std::size_t i = 0; i < instance.size(); ++i) {
      auto pair = construct_triplet_pair(instance.context, instance.candidates[i], *source.tmpl, instance.id, i);
      if (i == 0) out.anchors.push_back(std::move(pair.anchor));
      out.candidates.push_back(std::move(pair.candidate));
    }
  } else {
    out.anchors.reserve(instance.size());
    for (std::size_t i = 0; i < instance.size(); ++i) {
      auto pair = construct_qa_pair(instance, i, source.qa);
      out.anchors.push_back(std::move(pair.anchor));
      out.candidates.push_back(std::move(pair.candidate));
    }
  }
  return out;
}

namespace {

MethodDescriptor describe(const Embedder& embedder, SimilarityMeasure measure, std::string ensemble,
                          std::vector<std::string> template_ids) {
  MethodDescriptor m;
  m.scorer = "compass";
  m.ensemble = std::move(ensemble);
  m.template_ids = std::move(template_ids);
  m.backend_id = embedder.descriptor().backend_id;
  m.model_name = embedder.descriptor().model_name;
  m.pooling = embedder.descriptor().pooling_tag();
  m.measure = measure;
  return m;
}

struct EmbeddedSentences {
  std::vector<std::vector<double>> anchors;  // shared anchor stored once
  std::vector<std::vector<double>> candidates;
};

EmbeddedSentences embed_sentences(const InstanceSentences& sentences, Embedder& embedder, std::size_t max_in_flight) {
  std::vector<std::string> texts = sentences.anchors;
  texts.insert(texts.end(), sentences.candidates.begin(), sentences.candidates.end());
  const auto batch = embedder.embed_batch(texts, max_in_flight);

  EmbeddedSentences out;
  for (std::size_t i = 0; i < sentences.anchors.size(); ++i) out.anchors.push_back(batch.at(i).values);
  for (std::size_t i = 0; i < sentences.candidates.size(); ++i) {
    out.candidates.push_back(batch.at(sentences.anchors.size() + i).values);
  }
  return out;
}

std::vector<double> score_embedded(const EmbeddedSentences& e, SimilarityMeasure measure) {
  std::vector<double> scores(e.candidates.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& anchor = e.anchors.size() == 1 ? e.anchors[0] : e.anchors[i];
    scores[i] = similarity(anchor, e.candidates[i], measure);
  }
  return scores;
}

/// Referenced templates, deduplicated, in bank order, restricted to the instance's property.
std::vector<const Template*> resolve_templates(const TemplateBank& bank, const std::vector<std::string>& ids,
                                               const Property& property) {
  std::set<std::size_t> positions;
  for (const auto& id : ids) {
    const auto pos = bank.index_of(id);
    if (!pos) throw ConfigError("unknown template id '" + id + "'");
    positions.insert(*pos);
  }
  std::vector<const Template*> out;
  for (auto pos : positions) {
    const auto& t = bank.templates()[pos];
    if (t.covers(property)) out.push_back(&t);
  }
  if (out.empty()) throw ConfigError("empty template set after scope filtering for property '" + property.name + "'");
  return out;
}

std::vector<std::string> ids_of(const std::vector<const Template*>& templates) {
  std::vector<std::string> ids;
  for (const auto* t : templates) ids.push_back(t->id);
  return ids;
}

void normalize_in_place(std::vector<double>& v) {
  const double norm = l2_norm(v);
  if (!(norm > 0.0)) throw DataError("fused representation is a zero vector");
  for (auto& x : v) x /= norm;
}

}  // namespace

ScoredCandidates compass_score(const EvaluationInstance& instance, const SentenceSource& source, Embedder& embedder,
                               SimilarityMeasure measure, std::size_t max_in_flight) {
  const auto sentences = build_sentences(instance, source);
  const auto embedded = embed_sentences(sentences, embedder, max_in_flight);

  ScoredCandidates out;
  out.instance_id = instance.id;
  out.scores = score_embedded(embedded, measure);
  out.ranking = rank_candidates(out.scores);
  std::vector<std::string> ids;
  if (instance.task == TaskKind::attribute) ids.push_back(source.tmpl->id);
  out.method = describe(embedder, measure, instance.task == TaskKind::attribute ? "single" : "qa_transform", ids);
  return out;
}

EnsembleStrategy EnsembleStrategy::score_level(std::vector<std::string> ids) {
  return {Kind::score_level, std::move(ids), 0.2};
}

EnsembleStrategy EnsembleStrategy::representation_level(std::vector<std::string> ids) {
  return {Kind::representation_level, std::move(ids), 0.2};
}

void EnsembleStrategy::validate() const {
  switch (kind) {
    case Kind::single:
      if (template_ids.size() != 1) throw ConfigError("single ensemble needs exactly one template id");
      break;
    case Kind::score_level:
    case Kind::representation_level:
      if (template_ids.empty()) throw ConfigError(name() + " ensemble needs at least one template id");
      break;
    case Kind::best_on_dev:
      if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ConfigError("dev_fraction must lie in (0, 1)");
      break;
  }
}

std::string EnsembleStrategy::name() const {
  switch (kind) {
    case Kind::single: return "single";
    case Kind::score_level: return "score_level";
    case Kind::representation_level: return "representation_level";
    case Kind::best_on_dev: return "best_on_dev";
  }
  return "single";
}

EnsembleStrategy::Kind parse_ensemble_kind(std::string_view text) {
  if (text == "single") return EnsembleStrategy::Kind::single;
  if (text == "score_level") return EnsembleStrategy::Kind::score_level;
  if (text == "representation_level") return EnsembleStrategy::Kind::representation_level;
  if (text == "best_on_dev") return EnsembleStrategy::Kind::best_on_dev;
  throw ConfigError("unknown ensemble strategy '" + std::string(text) + "'");
}

ScoredCandidates ensemble_score(const EvaluationInstance& instance, const TemplateBank& bank,
                                const EnsembleStrategy& strategy, Embedder& embedder, SimilarityMeasure measure,
                                std::size_t max_in_flight) {
  strategy.validate();
  if (instance.task != TaskKind::attribute) {
    throw ConfigError("instance '" + instance.id + "': template ensembles apply to attribute instances only");
  }
  if (strategy.kind == EnsembleStrategy::Kind::best_on_dev) {
    throw ConfigError("best_on_dev selects a template over a dataset; use score_dataset");
  }

  const auto templates = resolve_templates(bank, strategy.template_ids, instance.context.property);
  if (strategy.kind == EnsembleStrategy::Kind::single) {
    return compass_score(instance, SentenceSource{templates.front(), {}}, embedder, measure, max_in_flight);
  }

  ScoredCandidates out;
  out.instance_id = instance.id;
  out.method = describe(embedder, measure, strategy.name(), ids_of(templates));

  if (strategy.kind == EnsembleStrategy::Kind::score_level) {
    std::vector<double> sum(instance.size(), 0.0);
    for (const auto* t : templates) {
      const auto scored = compass_score(instance, SentenceSource{t, {}}, embedder, measure, max_in_flight);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += scored.scores[i];
    }
    const auto n = static_cast<double>(templates.size());
    out.scores.resize(sum.size());
    std::transform(sum.begin(), sum.end(), out.scores.begin(), [n](double s) { return s / n; });
  } else {
    if (templates.size() == 1) {
      auto single = compass_score(instance, SentenceSource{templates.front(), {}}, embedder, measure, max_in_flight);
      single.method = out.method;
      return single;
    }
    EmbeddedSentences fused;
    for (const auto* t : templates) {
      const auto embedded = embed_sentences(build_sentences(instance, SentenceSource{t, {}}), embedder, max_in_flight);
      if (fused.anchors.empty()) {
        fused = embedded;
        continue;
      }
      auto accumulate = [](std::vector<std::vector<double>>& into, const std::vector<std::vector<double>>& from) {
        for (std::size_t r = 0; r < into.size(); ++r) {
          if (into[r].size() != from[r].size()) throw DataError("representation ensemble: dimension mismatch");
          for (std::size_t d = 0; d < into[r].size(); ++d) into[r][d] += from[r][d];
        }
      };
      accumulate(fused.anchors, embedded.anchors);
      accumulate(fused.candidates, embedded.candidates);
    }
    const auto n = static_cast<double>(templates.size());
    for (auto* rows : {&fused.anchors, &fused.candidates}) {
      for (auto& row : *rows) {
        for (auto& x : row) x /= n;
        if (measure == SimilarityMeasure::cosine) normalize_in_place(row);
      }
    }
    out.scores = score_embedded(fused, measure);
  }
  out.ranking = rank_candidates(out.scores);
  return out;
}

std::string select_best_template(std::span<const EvaluationInstance> instances, const TemplateBank& bank,
                                 Embedder& embedder, SimilarityMeasure measure, std::size_t max_in_flight) {
  if (instances.empty()) throw DataError("select_best_template: no instances");
  std::vector<const Template*> candidates;
  for (const auto& t : bank.templates()) {
    const bool covers_all = std::all_of(instances.begin(), instances.end(), [&](const EvaluationInstance& inst) {
      return inst.task == TaskKind::attribute && t.covers(inst.context.property);
    });
    if (covers_all) candidates.push_back(&t);
  }
  if (candidates.empty()) throw ConfigError("select_best_template: no template covers every instance");

  const Template* best = nullptr;
  double best_rho = -std::numeric_limits<double>::infinity();
  for (const auto* t : candidates) {
    double sum = 0.0;
    std::size_t defined = 0;
    for (const auto& inst : instances) {
      const auto scored = compass_score(inst, SentenceSource{t, {}}, embedder, measure, max_in_flight);
      if (auto rho = spearman_rho(scored.scores, inst.ground_truth)) {
        sum += *rho;
        ++defined;
      }
    }
    const double mean = defined ? sum / static_cast<double>(defined) : -std::numeric_limits<double>::infinity();
    if (!best || mean > best_rho) {
      best = t;
      best_rho = mean;
    }
  }
  return best->id;
}

bool in_dev_split(std::string_view id, double dev_fraction, std::uint64_t salt) {
  std::string material = std::to_string(salt);
  material.push_back('\0');
  material.append(id);
  constexpr std::uint64_t kBuckets = 1'000'000;
  const auto bucket = stable_hash64(material) % kBuckets;
  return static_cast<double>(bucket) < dev_fraction * static_cast<double>(kBuckets);
}

ScoredCandidates likelihood_score(const EvaluationInstance& instance, const SentenceSource& source,
                                  LogprobClient& client) {
  const auto sentences = build_sentences(instance, source);
  ScoredCandidates out;
  out.instance_id = instance.id;
  out.scores.reserve(sentences.candidates.size());
  for (const auto& text : sentences.candidates) {
    const auto logprobs = client.token_logprobs(text);
    if (!logprobs) throw CapabilityError("log-prob client '" + client.model_name() + "' does not expose token log-probabilities");
    if (logprobs->empty()) throw BackendError("log-prob client returned zero tokens for '" + text + "'");
    double sum = 0.0;
    for (double lp : *logprobs) {
      if (!std::isfinite(lp)) throw BackendError("log-prob client returned a non-finite log-probability");
      sum += lp;
    }
    out.scores.push_back(sum / static_cast<double>(logprobs->size()));
  }
  out.ranking = rank_candidates(out.scores);
  out.method.scorer = "likelihood";
  out.method.ensemble = instance.task == TaskKind::attribute ? "single" : "qa_transform";
  if (instance.task == TaskKind::attribute) out.method.template_ids = {source.tmpl->id};
  out.method.backend_id = "logprob";
  out.method.model_name = client.model_name();
  out.method.pooling = "none";
  return out;
}

}  // namespace compass
