#include "compass/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <thread>

#include "compass/error.hpp"
#include "compass/util.hpp"
#include "json.hpp"

namespace compass {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::string_view> split_ws(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto start = text.find_first_not_of(" \t\n\r", pos);
    if (start == std::string_view::npos) break;
    auto end = text.find_first_of(" \t\n\r", start);
    if (end == std::string_view::npos) end = text.size();
    out.push_back(text.substr(start, end - start));
    pos = end;
  }
  return out;
}

}  // namespace

PoolingStrategy PoolingStrategy::parse(std::string_view name) {
  if (name == "cls_first") return cls_first();
  if (name == "eos_last") return eos_last();
  if (name == "last_token") return last_token();
  if (name == "prompt_reps") return prompt_reps();
  throw ConfigError("unknown pooling strategy '" + std::string(name) + "'");
}

std::string PoolingStrategy::tag() const {
  switch (kind) {
    case Kind::cls_first: return "cls_first";
    case Kind::eos_last: return "eos_last";
    case Kind::last_token: return "last_token";
    case Kind::prompt_reps: return "prompt_reps(" + elicitation_suffix + ")";
  }
  return "last_token";
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::vector_api: return "vector_api";
    case BackendKind::hidden_state_api: return "hidden_state_api";
    case BackendKind::mock: return "mock";
  }
  return "mock";
}

BackendKind parse_backend_kind(std::string_view text) {
  if (text == "vector_api") return BackendKind::vector_api;
  if (text == "hidden_state_api") return BackendKind::hidden_state_api;
  if (text == "mock") return BackendKind::mock;
  throw ConfigError("unknown backend kind '" + std::string(text) + "'");
}

void BackendDescriptor::validate() const {
  if (backend_id.empty()) throw ConfigError("backend_id must not be empty");
  if (model_name.empty()) throw ConfigError("model_name must not be empty");
  if (kind == BackendKind::hidden_state_api && !pooling) throw ConfigError("hidden_state_api backends require a pooling strategy");
  if (pooling && pooling->kind == PoolingStrategy::Kind::prompt_reps && pooling->elicitation_suffix.empty()) {
    throw ConfigError("prompt_reps pooling requires a non-empty elicitation suffix");
  }
  if (dims && *dims == 0) throw ConfigError("dims must be positive");
  if (kind != BackendKind::mock && endpoint.empty()) throw ConfigError("backend '" + backend_id + "' needs an endpoint");
}

std::string BackendDescriptor::pooling_tag() const {
  if (kind == BackendKind::hidden_state_api && pooling) return pooling->tag();
  return "backend_internal";
}

EmbeddingVector pool(const TokenHiddenStates& hidden, const PoolingStrategy& strategy) {
  if (hidden.states.empty()) throw DataError("cannot pool an empty hidden-state sequence");
  EmbeddingVector out;
  switch (strategy.kind) {
    case PoolingStrategy::Kind::cls_first: out.values = hidden.states.front(); break;
    case PoolingStrategy::Kind::eos_last:
    case PoolingStrategy::Kind::last_token:
    case PoolingStrategy::Kind::prompt_reps: out.values = hidden.states.back(); break;
  }
  out.pooling_used = strategy.tag();
  return out;
}

std::vector<double> EmbeddingBackend::embed_text(const BackendDescriptor& descriptor, const std::string&) {
  throw CapabilityError("backend '" + descriptor.backend_id + "' does not serve sentence vectors");
}

TokenHiddenStates EmbeddingBackend::hidden_states(const BackendDescriptor& descriptor, const std::string&) {
  throw CapabilityError("backend '" + descriptor.backend_id + "' does not serve hidden states");
}

std::vector<double> MockBackend::vector_for(std::string_view material, std::size_t dims) const {
  std::string keyed = std::to_string(seed_);
  keyed.push_back('\0');
  keyed.append(material);
  std::uint64_t state = stable_hash64(keyed);
  std::vector<double> out(dims);
  for (auto& v : out) {
    // 53 random mantissa bits mapped onto [-1, 1).
    v = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
  }
  return out;
}

std::vector<double> MockBackend::embed_text(const BackendDescriptor& descriptor, const std::string& text) {
  count_request();
  return vector_for(text, descriptor.dims.value_or(dims_));
}

TokenHiddenStates MockBackend::hidden_states(const BackendDescriptor& descriptor, const std::string& text) {
  count_request();
  const auto dims = descriptor.dims.value_or(dims_);
  TokenHiddenStates out;
  out.dims = dims;
  out.states.push_back(vector_for("<bos>", dims));
  std::string prefix;
  for (auto token : split_ws(text)) {
    prefix.append(token).push_back(' ');
    out.states.push_back(vector_for(prefix, dims));
  }
  out.states.push_back(vector_for(prefix + "<eos>", dims));
  return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path root) : root_(std::move(root)) {}

std::string EmbeddingCache::key(const BackendDescriptor& descriptor, std::string_view text) {
  std::string material;
  material.append(descriptor.backend_id).push_back('\0');
  material.append(descriptor.model_name).push_back('\0');
  material.append(descriptor.pooling_tag()).push_back('\0');
  material.append(text);
  return sha256_hex(material);
}

std::filesystem::path EmbeddingCache::path_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".json");
}

std::optional<EmbeddingVector> EmbeddingCache::load(const std::string& key) const {
  const auto path = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  const json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw DataError("corrupt cache entry '" + path.string() + "'");
  try {
    EmbeddingVector out;
    out.values = doc.at("values").get<std::vector<double>>();
    if (doc.at("dims").get<std::size_t>() != out.values.size()) throw DataError("cache entry dims disagree with values");
    const auto& meta = doc.at("meta");
    out.backend_id = meta.value("backend_id", "");
    out.model_name = meta.value("model_name", "");
    out.pooling_used = meta.value("pooling", "");
    out.text_hash = meta.value("text_hash", "");
    return out;
  } catch (const json::exception& e) {
    throw DataError("corrupt cache entry '" + path.string() + "': " + e.what());
  }
}

void EmbeddingCache::store(const std::string& key, const EmbeddingVector& vector) const {
  ordered_json doc;
  doc["dims"] = vector.values.size();
  doc["values"] = vector.values;
  doc["meta"] = {{"backend_id", vector.backend_id},
                 {"model_name", vector.model_name},
                 {"pooling", vector.pooling_used},
                 {"text_hash", vector.text_hash}};
  write_file_atomic(path_for(key), doc.dump());
}

bool BatchResult::all_ok() const {
  for (const auto& v : vectors) {
    if (!v) return false;
  }
  return true;
}

const EmbeddingVector& BatchResult::at(std::size_t i) const {
  if (!vectors.at(i)) {
    if (i < exceptions.size() && exceptions[i]) std::rethrow_exception(exceptions[i]);
    throw BackendError(errors.at(i));
  }
  return *vectors[i];
}

double l2_norm(std::span<const double> values) {
  return std::sqrt(std::inner_product(values.begin(), values.end(), values.begin(), 0.0));
}

Embedder::Embedder(BackendDescriptor descriptor, std::shared_ptr<EmbeddingBackend> backend,
                   std::shared_ptr<const EmbeddingCache> cache, RetryPolicy retry)
    : descriptor_(std::move(descriptor)), backend_(std::move(backend)), cache_(std::move(cache)), retry_(retry) {
  descriptor_.validate();
  if (!backend_) throw ConfigError("no backend client for '" + descriptor_.backend_id + "'");
  if (descriptor_.dims) dims_.store(*descriptor_.dims);
}

std::optional<std::size_t> Embedder::dims() const noexcept {
  const auto d = dims_.load();
  if (d == 0) return std::nullopt;
  return d;
}

void Embedder::check_dims(std::size_t got) {
  if (got == 0) throw BackendError("backend '" + descriptor_.backend_id + "' returned an empty vector");
  std::size_t expected = 0;
  if (dims_.compare_exchange_strong(expected, got)) return;
  if (expected != got) {
    throw BackendError("dimension mismatch from backend '" + descriptor_.backend_id + "': expected " +
                       std::to_string(expected) + ", got " + std::to_string(got));
  }
}

EmbeddingVector Embedder::fetch(const std::string& text) {
  auto backoff = retry_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      if (descriptor_.kind == BackendKind::hidden_state_api) {
        const auto& strategy = *descriptor_.pooling;
        const std::string request_text =
            strategy.kind == PoolingStrategy::Kind::prompt_reps ? text + strategy.elicitation_suffix : text;
        auto hidden = backend_->hidden_states(descriptor_, request_text);
        for (const auto& row : hidden.states) {
          if (row.size() != hidden.states.front().size()) throw BackendError("hidden states have non-uniform width");
        }
        return pool(hidden, strategy);
      }
      EmbeddingVector out;
      out.values = backend_->embed_text(descriptor_, text);
      out.pooling_used = "backend_internal";
      return out;
    } catch (const TransportError&) {
      if (attempt >= retry_.attempts) throw;
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * retry_.multiplier));
  }
}

EmbeddingVector Embedder::embed(const std::string& text) {
  if (text.empty()) throw DataError("cannot embed empty text");
  const auto key = EmbeddingCache::key(descriptor_, text);
  if (cache_) {
    if (auto hit = cache_->load(key)) {
      check_dims(hit->dims());
      hits_.fetch_add(1);
      return *std::move(hit);
    }
  }
  misses_.fetch_add(1);

  EmbeddingVector out = fetch(text);
  check_dims(out.values.size());
  for (double v : out.values) {
    if (!std::isfinite(v)) throw BackendError("backend '" + descriptor_.backend_id + "' returned a non-finite component");
  }
  if (descriptor_.normalize_on_receipt) {
    const double norm = l2_norm(out.values);
    if (!(norm > 0.0)) throw BackendError("backend '" + descriptor_.backend_id + "' returned a zero vector");
    for (auto& v : out.values) v /= norm;
  }
  out.backend_id = descriptor_.backend_id;
  out.model_name = descriptor_.model_name;
  out.text_hash = sha256_hex(text);
  if (cache_) cache_->store(key, out);
  return out;
}

BatchResult Embedder::embed_batch(std::span<const std::string> texts, std::size_t max_in_flight) {
  if (max_in_flight == 0) throw ConfigError("max_in_flight must be at least 1");

  std::map<std::string_view, std::size_t> slot_of;
  std::vector<std::size_t> slot_for_input(texts.size());
  std::vector<std::string_view> unique;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto [it, inserted] = slot_of.emplace(texts[i], unique.size());
    if (inserted) unique.push_back(texts[i]);
    slot_for_input[i] = it->second;
  }

  std::vector<std::optional<EmbeddingVector>> fetched(unique.size());
  std::vector<std::string> errors(unique.size());
  std::vector<std::exception_ptr> exceptions(unique.size());
  parallel_for(unique.size(), max_in_flight, [&](std::size_t i) {
    try {
      fetched[i] = embed(std::string(unique[i]));
    } catch (const std::exception& e) {
      errors[i] = e.what();
      exceptions[i] = std::current_exception();
    }
  });

  BatchResult out;
  out.vectors.reserve(texts.size());
  out.errors.reserve(texts.size());
  for (auto slot : slot_for_input) {
    out.vectors.push_back(fetched[slot]);
    out.errors.push_back(errors[slot]);
    out.exceptions.push_back(exceptions[slot]);
  }
  if (!texts.empty() && std::all_of(fetched.begin(), fetched.end(), [](const auto& v) { return !v.has_value(); })) {
    const auto message = "every text in the batch failed; first error: " + errors.front();
    try {
      std::rethrow_exception(exceptions.front());
    } catch (const TransportError&) {
      throw TransportError(message);
    } catch (const CapabilityError&) {
      throw CapabilityError(message);
    } catch (const ConfigError&) {
      throw ConfigError(message);
    } catch (const DataError&) {
      throw DataError(message);
    } catch (...) {
      throw BackendError(message);
    }
  }
  return out;
}

}  // namespace compass
