#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "compass/dataset.hpp"
#include "compass/embedding.hpp"
#include "compass/error.hpp"
#include "compass/scoring.hpp"
#include "compass/templating.hpp"

namespace compass::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("compass-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Text -> vector lookup; unknown texts are a test bug, so they throw.
class PlantedBackend : public EmbeddingBackend {
 public:
  void plant(const std::string& text, std::vector<double> v) {
    std::lock_guard lock(mutex_);
    table_[text] = std::move(v);
  }

  std::vector<double> embed_text(const BackendDescriptor&, const std::string& text) override {
    count_request();
    std::lock_guard lock(mutex_);
    auto it = table_.find(text);
    if (it == table_.end()) throw DataError("planted backend has no vector for '" + text + "'");
    return it->second;
  }

  [[nodiscard]] std::size_t planted() const {
    std::lock_guard lock(mutex_);
    return table_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<double>> table_;
};

inline std::vector<double> unit_at_angle(double theta, std::size_t dims = 8) {
  std::vector<double> v(dims, 0.0);
  v[0] = std::cos(theta);
  v[1] = std::sin(theta);
  return v;
}

inline Property property_from_index(std::size_t i) {
  static const char* names[] = {"color", "shape", "material"};
  return Property::parse(names[i % 3]);
}

// Instances with distinct ground truth, and a backend whose anchor/candidate cosine falls
// strictly with ground-truth rank for every in-scope template of `bank`.
struct PlantedSuite {
  std::vector<EvaluationInstance> instances;
  std::shared_ptr<PlantedBackend> backend = std::make_shared<PlantedBackend>();
};

inline PlantedSuite make_planted_suite(std::size_t count, std::uint32_t seed, const TemplateBank& bank,
                                       std::size_t min_k = 2, std::size_t max_k = 18) {
  PlantedSuite suite;
  std::mt19937 rng(seed);
  std::uniform_int_distribution<std::size_t> k_dist(min_k, max_k);
  for (std::size_t n = 0; n < count; ++n) {
    EvaluationInstance inst;
    inst.id = "planted-" + std::to_string(n);
    inst.context.object = "object" + std::to_string(n);
    inst.context.property = property_from_index(n);
    const auto k = k_dist(rng);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    inst.ground_truth.assign(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      inst.candidates.push_back("cand" + std::to_string(i));
      // order[i] is candidate i's truth rank; rank 0 gets the largest value.
      inst.ground_truth[i] = static_cast<double>(k - order[i]) / static_cast<double>(k);
    }

    std::size_t j = 0;
    for (const auto* t : bank.in_scope(inst.context.property)) {
      const auto s = build_sentences(inst, SentenceSource{t, {}});
      const double spread = 1.0 + 0.25 * static_cast<double>(j++);
      suite.backend->plant(s.anchors[0], unit_at_angle(0.0));
      for (std::size_t i = 0; i < k; ++i) {
        const double theta = spread * (0.05 + 0.08 * static_cast<double>(order[i]));
        suite.backend->plant(s.candidates[i], unit_at_angle(theta));
      }
    }
    suite.instances.push_back(std::move(inst));
  }
  return suite;
}

inline BackendDescriptor planted_descriptor() {
  BackendDescriptor d;
  d.backend_id = "planted";
  d.model_name = "planted";
  d.kind = BackendKind::mock;
  return d;
}

class ScriptedChat : public ChatClient {
 public:
  explicit ScriptedChat(std::map<std::string, std::string> by_answer) : by_answer_(std::move(by_answer)) {}
  ScriptedChat(std::initializer_list<std::pair<const std::string, std::string>> by_answer) : by_answer_(by_answer) {}

  std::string complete(const ChatRequest& request) override {
    calls.fetch_add(1);
    const auto& input = request.messages.back().content;
    for (const auto& [answer, statement] : by_answer_) {
      if (input.find("Answer: " + answer + "\n") != std::string::npos) return statement;
    }
    return "";
  }

  std::atomic<int> calls{0};

 private:
  std::map<std::string, std::string> by_answer_;
};

class UniformLogprob : public LogprobClient {
 public:
  explicit UniformLogprob(double value) : value_(value) {}
  std::optional<std::vector<double>> token_logprobs(const std::string& text) override {
    std::istringstream in(text);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(value_);
    return out;
  }

 private:
  double value_;
};

class NoLogprob : public LogprobClient {
 public:
  std::optional<std::vector<double>> token_logprobs(const std::string&) override { return std::nullopt; }
};

}  // namespace compass::testing
