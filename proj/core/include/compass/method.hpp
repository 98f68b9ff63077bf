#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace compass {

enum class SimilarityMeasure { cosine, dot };

std::string_view to_string(SimilarityMeasure measure);
SimilarityMeasure parse_similarity_measure(std::string_view text);

/// What produced a score vector. Serialized into every report and per-instance artifact.
struct MethodDescriptor {
  std::string scorer = "compass";  // "compass" or "likelihood"
  std::string ensemble = "single";
  std::vector<std::string> template_ids;
  std::string backend_id;
  std::string model_name;
  std::string pooling;
  SimilarityMeasure measure = SimilarityMeasure::cosine;

  friend bool operator==(const MethodDescriptor&, const MethodDescriptor&) = default;
};

}  // namespace compass
