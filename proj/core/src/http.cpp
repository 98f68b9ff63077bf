#include "compass/http.hpp"

#include "compass/error.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"

namespace compass {

using json = nlohmann::json;

Endpoint Endpoint::parse(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' lacks a scheme");
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("endpoint '" + url + "' must use http or https");
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint out;
  out.origin = url.substr(0, path_start);
  if (out.origin.size() <= scheme_end + 3) throw ConfigError("endpoint '" + url + "' lacks a host");
  if (path_start != std::string::npos) {
    out.path_prefix = url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  }
  return out;
}

std::string post_json(const Endpoint& endpoint, const std::string& path, const std::string& body,
                      const HttpOptions& options) {
  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);
  client.set_write_timeout(options.timeout);
  httplib::Headers headers;
  if (!options.api_key.empty()) headers.emplace("Authorization", "Bearer " + options.api_key);

  const auto full_path = endpoint.path_prefix + path;
  auto res = client.Post(full_path, headers, body, "application/json");
  if (!res) {
    throw TransportError("POST " + endpoint.origin + full_path + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status >= 500 || res->status == 429) {
    throw TransportError("POST " + endpoint.origin + full_path + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendError("POST " + endpoint.origin + full_path + " returned HTTP " + std::to_string(res->status) + ": " +
                       res->body);
  }
  return res->body;
}

namespace {

json parse_response(const std::string& body, const char* what) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw BackendError(std::string(what) + ": response is not a JSON object");
  return doc;
}

std::vector<double> number_row(const json& row, const char* what) {
  if (!row.is_array()) throw BackendError(std::string(what) + ": expected an array of numbers");
  std::vector<double> out;
  out.reserve(row.size());
  for (const auto& v : row) {
    if (!v.is_number()) throw BackendError(std::string(what) + ": non-numeric component");
    out.push_back(v.get<double>());
  }
  return out;
}

void check_declared_dims(const json& doc, std::size_t actual, const char* what) {
  if (doc.contains("dims") && doc.at("dims").is_number_integer() && doc.at("dims").get<std::size_t>() != actual) {
    throw BackendError(std::string(what) + ": declared dims " + std::to_string(doc.at("dims").get<std::size_t>()) +
                       " disagree with vector length " + std::to_string(actual));
  }
}

}  // namespace

HttpEmbeddingBackend::HttpEmbeddingBackend(const std::string& endpoint, HttpOptions options)
    : endpoint_(Endpoint::parse(endpoint)), options_(std::move(options)) {}

std::vector<double> HttpEmbeddingBackend::embed_text(const BackendDescriptor& descriptor, const std::string& text) {
  count_request();
  const json req = {{"model", descriptor.model_name}, {"texts", {text}}};
  const auto doc = parse_response(post_json(endpoint_, "/embed", req.dump(), options_), "/embed");
  if (!doc.contains("vectors") || !doc.at("vectors").is_array() || doc.at("vectors").size() != 1) {
    throw BackendError("/embed: expected exactly one vector");
  }
  auto vec = number_row(doc.at("vectors")[0], "/embed");
  check_declared_dims(doc, vec.size(), "/embed");
  return vec;
}

TokenHiddenStates HttpEmbeddingBackend::hidden_states(const BackendDescriptor& descriptor, const std::string& text) {
  count_request();
  const json req = {{"model", descriptor.model_name}, {"text", text}};
  const auto doc = parse_response(post_json(endpoint_, "/hidden_states", req.dump(), options_), "/hidden_states");
  if (!doc.contains("states") || !doc.at("states").is_array()) throw BackendError("/hidden_states: missing 'states'");
  TokenHiddenStates out;
  for (const auto& row : doc.at("states")) out.states.push_back(number_row(row, "/hidden_states"));
  if (out.states.empty()) throw BackendError("/hidden_states: empty state sequence");
  out.dims = out.states.front().size();
  check_declared_dims(doc, out.dims, "/hidden_states");
  return out;
}

HttpChatClient::HttpChatClient(const std::string& endpoint, HttpOptions options)
    : endpoint_(Endpoint::parse(endpoint)), options_(std::move(options)) {}

std::string HttpChatClient::complete(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  const json req = {{"system", request.system}, {"messages", messages}, {"temperature", request.temperature}};
  const auto doc = parse_response(post_json(endpoint_, "/chat", req.dump(), options_), "/chat");
  if (!doc.contains("content") || !doc.at("content").is_string()) throw BackendError("/chat: missing string 'content'");
  return doc.at("content").get<std::string>();
}

HttpLogprobClient::HttpLogprobClient(const std::string& endpoint, std::string model, HttpOptions options)
    : endpoint_(Endpoint::parse(endpoint)), model_(std::move(model)), options_(std::move(options)) {}

std::optional<std::vector<double>> HttpLogprobClient::token_logprobs(const std::string& text) {
  const json req = {{"model", model_}, {"text", text}};
  const auto doc = parse_response(post_json(endpoint_, "/logprobs", req.dump(), options_), "/logprobs");
  if (!doc.contains("token_logprobs") || doc.at("token_logprobs").is_null()) return std::nullopt;
  return number_row(doc.at("token_logprobs"), "/logprobs");
}

}  // namespace compass
