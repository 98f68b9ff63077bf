#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "compass/embedding.hpp"
#include "compass/scoring.hpp"
#include "compass/templating.hpp"

namespace compass {

/// Base URL split into what cpp-httplib wants: "scheme://host:port" and a path prefix.
struct Endpoint {
  std::string origin;
  std::string path_prefix;

  /// Throws ConfigError for anything that is not http(s)://host[:port][/prefix].
  static Endpoint parse(const std::string& url);
};

struct HttpOptions {
  std::string api_key;  // sent as "Authorization: Bearer <key>" when non-empty
  std::chrono::seconds timeout{60};
};

/// JSON POST helper shared by the clients. 5xx/429 and connection failures raise TransportError,
/// other non-2xx statuses and unparsable bodies raise BackendError.
std::string post_json(const Endpoint& endpoint, const std::string& path, const std::string& body,
                      const HttpOptions& options);

/// vector_api: POST /embed {"model","texts"} -> {"vectors","dims"};
/// hidden_state_api: POST /hidden_states {"model","text"} -> {"states","dims"}.
class HttpEmbeddingBackend : public EmbeddingBackend {
 public:
  HttpEmbeddingBackend(const std::string& endpoint, HttpOptions options = {});

  std::vector<double> embed_text(const BackendDescriptor& descriptor, const std::string& text) override;
  TokenHiddenStates hidden_states(const BackendDescriptor& descriptor, const std::string& text) override;

 private:
  Endpoint endpoint_;
  HttpOptions options_;
};

/// POST /chat {"system","messages":[{"role","content"}],"temperature"} -> {"content"}.
class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(const std::string& endpoint, HttpOptions options = {});
  std::string complete(const ChatRequest& request) override;

 private:
  Endpoint endpoint_;
  HttpOptions options_;
};

/// POST /logprobs {"model","text"} -> {"token_logprobs":[...]}. A missing field means no capability.
class HttpLogprobClient : public LogprobClient {
 public:
  HttpLogprobClient(const std::string& endpoint, std::string model, HttpOptions options = {});
  std::optional<std::vector<double>> token_logprobs(const std::string& text) override;
  [[nodiscard]] std::string model_name() const override { return model_; }

 private:
  Endpoint endpoint_;
  std::string model_;
  HttpOptions options_;
};

}  // namespace compass
