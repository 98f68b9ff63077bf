#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace compass {

/// Instruction appended to the text for prompt_reps pooling; the final hidden state of the
/// suffixed sequence stands in for the next-token representation.
inline constexpr std::string_view kDefaultPromptRepsSuffix =
    "\nThis sentence in one word is: \"";

struct PoolingStrategy {
  enum class Kind { cls_first, eos_last, last_token, prompt_reps };
  Kind kind = Kind::last_token;
  std::string elicitation_suffix;

  static PoolingStrategy cls_first() { return {Kind::cls_first, {}}; }
  static PoolingStrategy eos_last() { return {Kind::eos_last, {}}; }
  static PoolingStrategy last_token() { return {Kind::last_token, {}}; }
  static PoolingStrategy prompt_reps(std::string suffix = std::string(kDefaultPromptRepsSuffix)) {
    return {Kind::prompt_reps, std::move(suffix)};
  }
  /// "cls_first", "eos_last", "last_token" or "prompt_reps". Throws ConfigError otherwise.
  static PoolingStrategy parse(std::string_view name);

  /// Stable tag used in cache keys and vector metadata. prompt_reps includes the suffix.
  [[nodiscard]] std::string tag() const;
  friend bool operator==(const PoolingStrategy&, const PoolingStrategy&) = default;
};

enum class BackendKind { vector_api, hidden_state_api, mock };

std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

struct BackendDescriptor {
  std::string backend_id = "mock";
  std::string endpoint;
  std::string model_name = "mock";
  BackendKind kind = BackendKind::mock;
  std::optional<PoolingStrategy> pooling;
  std::optional<std::size_t> dims;
  bool normalize_on_receipt = true;

  /// Throws ConfigError when the descriptor is unusable (e.g. hidden_state_api without pooling).
  void validate() const;
  /// Pooling tag as recorded in cache keys; vector backends pool internally.
  [[nodiscard]] std::string pooling_tag() const;
  friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

struct TokenHiddenStates {
  std::vector<std::vector<double>> states;
  std::size_t dims = 0;
};

struct EmbeddingVector {
  std::vector<double> values;
  std::string backend_id;
  std::string model_name;
  std::string pooling_used;
  std::string text_hash;

  [[nodiscard]] std::size_t dims() const noexcept { return values.size(); }
};

/// Selects one row of the hidden states. Throws DataError on empty input.
EmbeddingVector pool(const TokenHiddenStates& hidden, const PoolingStrategy& strategy);

/// Transport to a model server. The descriptor's kind decides which entry point is used.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  /// Sentence vector from a vector API. Default: CapabilityError.
  virtual std::vector<double> embed_text(const BackendDescriptor& descriptor, const std::string& text);
  /// Per-token hidden states. Default: CapabilityError.
  virtual TokenHiddenStates hidden_states(const BackendDescriptor& descriptor, const std::string& text);

  /// Number of requests issued so far, successful or not.
  [[nodiscard]] std::uint64_t request_count() const noexcept { return requests_.load(); }

 protected:
  void count_request() noexcept { requests_.fetch_add(1); }

 private:
  std::atomic<std::uint64_t> requests_{0};
};

/// Seeded hash-to-vector backend. Each text maps to a fixed pseudo-random vector;
/// hidden states give one row per whitespace token plus two boundary tokens.
class MockBackend : public EmbeddingBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0, std::size_t dims = 64) : seed_(seed), dims_(dims) {}

  std::vector<double> embed_text(const BackendDescriptor& descriptor, const std::string& text) override;
  TokenHiddenStates hidden_states(const BackendDescriptor& descriptor, const std::string& text) override;

 private:
  [[nodiscard]] std::vector<double> vector_for(std::string_view material, std::size_t dims) const;
  std::uint64_t seed_;
  std::size_t dims_;
};

/// Content-addressed on-disk store: <root>/<hh>/<sha256>.json.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root);

  /// SHA-256 over backend id, model name, pooling tag and the exact text bytes.
  static std::string key(const BackendDescriptor& descriptor, std::string_view text);

  [[nodiscard]] std::filesystem::path path_for(const std::string& key) const;
  [[nodiscard]] std::optional<EmbeddingVector> load(const std::string& key) const;
  void store(const std::string& key, const EmbeddingVector& vector) const;
  [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

struct BatchResult {
  std::vector<std::optional<EmbeddingVector>> vectors;
  std::vector<std::string> errors;  // empty string where the text succeeded
  std::vector<std::exception_ptr> exceptions;

  [[nodiscard]] bool all_ok() const;
  /// Rethrows the recorded failure for index `i`.
  [[nodiscard]] const EmbeddingVector& at(std::size_t i) const;
};

/// Embeds text through a backend with caching, retries, dimension checks and normalization.
/// Shareable across threads.
class Embedder {
 public:
  Embedder(BackendDescriptor descriptor, std::shared_ptr<EmbeddingBackend> backend,
           std::shared_ptr<const EmbeddingCache> cache = nullptr, RetryPolicy retry = {});

  EmbeddingVector embed(const std::string& text);
  /// Results follow input order. Duplicate texts are fetched once. Throws only if every text fails, with the first failure's kind.
  BatchResult embed_batch(std::span<const std::string> texts, std::size_t max_in_flight = 1);

  [[nodiscard]] const BackendDescriptor& descriptor() const noexcept { return descriptor_; }
  [[nodiscard]] EmbeddingBackend& backend() const noexcept { return *backend_; }
  [[nodiscard]] std::uint64_t cache_hits() const noexcept { return hits_.load(); }
  [[nodiscard]] std::uint64_t cache_misses() const noexcept { return misses_.load(); }
  [[nodiscard]] std::optional<std::size_t> dims() const noexcept;

 private:
  EmbeddingVector fetch(const std::string& text);
  void check_dims(std::size_t got);

  BackendDescriptor descriptor_;
  std::shared_ptr<EmbeddingBackend> backend_;
  std::shared_ptr<const EmbeddingCache> cache_;
  RetryPolicy retry_;
  std::atomic<std::size_t> dims_{0};
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

double l2_norm(std::span<const double> values);

}  // namespace compass
