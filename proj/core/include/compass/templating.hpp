#pragma once

#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "compass/dataset.hpp"

namespace compass {

inline constexpr std::string_view kObjectSlot = "[o]";
inline constexpr std::string_view kCandidateSlot = "[c]";
/// Stands in for the answer span in frame-task anchor sentences.
inline constexpr std::string_view kBlankToken = "___";

enum class TemplateScope { color, shape, material, any };
enum class TemplateForm { sentence, collocation };

struct Template {
  std::string id;
  std::string anchor_text;
  std::string candidate_text;
  TemplateScope scope = TemplateScope::any;
  TemplateForm form = TemplateForm::sentence;

  [[nodiscard]] bool covers(const Property& property) const;
  friend bool operator==(const Template&, const Template&) = default;
};

std::string_view to_string(TemplateScope scope);
std::string_view to_string(TemplateForm form);

/// Placeholder-count violations for one template; empty when valid.
std::vector<std::string> validate_template(const Template& t);

class TemplateBank {
 public:
  TemplateBank() = default;
  /// Throws ConfigError on duplicate ids, invalid templates, or an empty list.
  explicit TemplateBank(std::vector<Template> templates);

  [[nodiscard]] const std::vector<Template>& templates() const noexcept { return templates_; }
  [[nodiscard]] const Template& at(std::string_view id) const;
  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view id) const;
  /// Templates usable for `property`, in bank order.
  [[nodiscard]] std::vector<const Template*> in_scope(const Property& property) const;
  /// First in-scope template for the property. Throws ConfigError if none.
  [[nodiscard]] const Template& default_for(const Property& property) const;
  [[nodiscard]] bool empty() const noexcept { return templates_.empty(); }

 private:
  std::vector<Template> templates_;
};

/// The shipped bank: every color, shape and material row from the original template table, in order.
const TemplateBank& builtin_bank();
/// Word-collocation variant ("[o]" vs "[c] [o]") for the template-format comparison.
const TemplateBank& builtin_collocation_bank();

/// JSONL, one Template per line: {"id","anchor_text","candidate_text","property_scope","form"}.
TemplateBank load_template_bank(const std::filesystem::path& path);
TemplateBank parse_template_bank(std::string_view text, const std::string& source = "<memory>");
std::string to_template_record(const Template& t);

struct Bindings {
  std::optional<std::string> object;
  std::optional<std::string> candidate;
};

/// Single-pass substitution of [o]/[c]. Bound values are inserted verbatim and never re-expanded.
/// Throws DataError for a missing or empty binding; an unused binding is reported via `warnings`.
std::string render_template(std::string_view text, const Bindings& bindings,
                            std::vector<std::string>* warnings = nullptr);

struct SentencePair {
  std::string anchor;
  std::string candidate;
  std::optional<std::string> template_id;
  std::string instance_id;
  std::size_t candidate_index = 0;
};

SentencePair construct_triplet_pair(const Context& context, std::string_view candidate, const Template& tmpl,
                                    std::string instance_id = {}, std::size_t candidate_index = 0);

// ---------------------------------------------------------------------------
// Question-answer transformation

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string system;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Returns the assistant completion text. Throws TransportError/BackendError.
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct FewShotExample {
  std::string question;
  std::string answer;
  std::string statement;
};

struct TransformPrompt {
  std::string instruction;
  std::vector<FewShotExample> examples;

  /// Renders the user turn for one question-answer pair.
  [[nodiscard]] std::string render_input(std::string_view question, std::string_view answer) const;
  [[nodiscard]] ChatRequest build_request(std::string_view question, std::string_view answer) const;
  /// Hash over instruction, examples and input rendering; part of every cache key.
  [[nodiscard]] std::string hash() const;
};

/// Instruction plus three worked examples. Reconstructed, not a verbatim copy of any published prompt.
const TransformPrompt& default_transform_prompt();

/// Statements keyed by (prompt hash, question, answer). Persisted as JSONL of
/// {key_hash, question, answer, statement}; concurrent callers of one key wait for a single producer.
class TransformCache {
 public:
  TransformCache() = default;
  /// Loads existing entries from `path` (if it exists) and persists new ones there.
  explicit TransformCache(std::filesystem::path path);

  static std::string key_hash(std::string_view prompt_hash, std::string_view question, std::string_view answer);

  [[nodiscard]] std::optional<std::string> lookup(const std::string& key) const;

  /// Returns the cached statement or runs `produce` once per key, stores and persists the result.
  template <typename Produce>
  std::string get_or_produce(const std::string& key, std::string_view question, std::string_view answer,
                             Produce&& produce);

  [[nodiscard]] std::size_t size() const;

 private:
  struct Entry {
    std::string question;
    std::string answer;
    std::string statement;
  };
  void store_locked(const std::string& key, Entry entry);

  std::optional<std::filesystem::path> path_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::string, Entry> entries_;
  std::set<std::string> in_flight_;
};

/// One declarative sentence for (question, answer). Throws BackendError for empty or multi-line output.
std::string transform_qa(std::string_view question, std::string_view answer, ChatClient& llm,
                         const TransformPrompt& prompt = default_transform_prompt(), TransformCache* cache = nullptr);

/// Replaces the first case-insensitive occurrence of `answer` with the blank token,
/// preferring a whole-token match. Throws DataError when the answer is absent.
std::string blank_answer(std::string_view sentence, std::string_view answer);

/// How frame-task candidate sentences are obtained when no pretransformed text exists.
struct QaTransform {
  ChatClient* client = nullptr;
  const TransformPrompt* prompt = &default_transform_prompt();
  TransformCache* cache = nullptr;
};

SentencePair construct_qa_pair(const EvaluationInstance& instance, std::size_t candidate_index,
                               const QaTransform& transform = {});

// ---------------------------------------------------------------------------

template <typename Produce>
std::string TransformCache::get_or_produce(const std::string& key, std::string_view question, std::string_view answer,
                                           Produce&& produce) {
  {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !in_flight_.contains(key); });
    if (auto it = entries_.find(key); it != entries_.end()) return it->second.statement;
    in_flight_.insert(key);
  }
  try {
    std::string statement = produce();
    std::lock_guard lock(mutex_);
    store_locked(key, Entry{std::string(question), std::string(answer), statement});
    in_flight_.erase(key);
    cv_.notify_all();
    return statement;
  } catch (...) {
    std::lock_guard lock(mutex_);
    in_flight_.erase(key);
    cv_.notify_all();
    throw;
  }
}

}  // namespace compass
