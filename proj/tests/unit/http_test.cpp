#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "compass/error.hpp"
#include "compass/http.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"

using namespace compass;
using json = nlohmann::json;

namespace {

class LocalServer {
 public:
  LocalServer() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread_.join();
  }
  [[nodiscard]] std::string url(const std::string& prefix = "") const {
    return "http://127.0.0.1:" + std::to_string(port_) + prefix;
  }

  httplib::Server server;

 private:
  int port_ = 0;
  std::thread thread_;
};

BackendDescriptor vector_descriptor(const std::string& endpoint) {
  BackendDescriptor d;
  d.backend_id = "local";
  d.model_name = "m";
  d.kind = BackendKind::vector_api;
  d.endpoint = endpoint;
  return d;
}

}  // namespace

TEST(Http, EndpointParse) {
  const auto e = Endpoint::parse("https://api.example.com:8443/v1/");
  EXPECT_EQ(e.origin, "https://api.example.com:8443");
  EXPECT_EQ(e.path_prefix, "/v1");
  EXPECT_THROW(Endpoint::parse("api.example.com"), ConfigError);
  EXPECT_THROW(Endpoint::parse("ftp://x"), ConfigError);
  EXPECT_THROW(Endpoint::parse("http://"), ConfigError);
}

TEST(Http, EmbedWireContract) {
  LocalServer s;
  json seen;
  std::string auth;
  s.server.Post("/v1/embed", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"vectors":[[3,4]],"dims":2})", "application/json");
  });
  HttpEmbeddingBackend backend(s.url("/v1"), HttpOptions{"secret"});
  const auto d = vector_descriptor(s.url("/v1"));
  EXPECT_EQ(backend.embed_text(d, "A photo of a penguin."), (std::vector<double>{3, 4}));
  EXPECT_EQ(seen, json::parse(R"({"model":"m","texts":["A photo of a penguin."]})"));
  EXPECT_EQ(auth, "Bearer secret");
}

TEST(Http, DeclaredDimsMustMatch) {
  LocalServer s;
  s.server.Post("/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"vectors":[[3,4]],"dims":3})", "application/json");
  });
  HttpEmbeddingBackend backend(s.url());
  EXPECT_THROW(backend.embed_text(vector_descriptor(s.url()), "x"), BackendError);
}

TEST(Http, HiddenStatesWireContract) {
  LocalServer s;
  json seen;
  s.server.Post("/hidden_states", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(R"({"states":[[1,0],[0,1],[1,1]],"dims":2})", "application/json");
  });
  auto d = vector_descriptor(s.url());
  d.kind = BackendKind::hidden_state_api;
  d.pooling = PoolingStrategy::cls_first();
  Embedder e(d, std::make_shared<HttpEmbeddingBackend>(s.url()));
  const auto v = e.embed("two words");
  EXPECT_EQ(v.values, (std::vector<double>{1, 0}));
  EXPECT_EQ(seen, json::parse(R"({"model":"m","text":"two words"})"));
}

TEST(Http, ChatWireContract) {
  LocalServer s;
  json seen;
  s.server.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(R"({"content":"They are at the farm."})", "application/json");
  });
  HttpChatClient chat(s.url());
  EXPECT_EQ(transform_qa("Where?", "farm", chat), "They are at the farm.");
  EXPECT_TRUE(seen.at("system").is_string());
  EXPECT_EQ(seen.at("temperature"), 0.0);
  EXPECT_EQ(seen.at("messages").back().at("role"), "user");
  EXPECT_EQ(seen.at("messages").back().at("content"), "Question: Where?\nAnswer: farm\nStatement:");
}

TEST(Http, LogprobWireContract) {
  LocalServer s;
  json seen;
  s.server.Post("/logprobs", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    if (seen.at("text") == "none") {
      res.set_content(R"({"tokens":["a"]})", "application/json");
    } else {
      res.set_content(R"({"token_logprobs":[-0.5,-1.5]})", "application/json");
    }
  });
  HttpLogprobClient client(s.url(), "lm");
  EXPECT_EQ(client.token_logprobs("some text"), (std::vector<double>{-0.5, -1.5}));
  EXPECT_EQ(seen, json::parse(R"({"model":"lm","text":"some text"})"));
  EXPECT_FALSE(client.token_logprobs("none"));
}

TEST(Http, StatusMapping) {
  LocalServer s;
  s.server.Post("/busy/embed", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  s.server.Post("/bad/embed", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  s.server.Post("/junk/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  EXPECT_THROW(HttpEmbeddingBackend(s.url("/busy")).embed_text(vector_descriptor(s.url()), "x"), TransportError);
  try {
    HttpEmbeddingBackend(s.url("/bad")).embed_text(vector_descriptor(s.url()), "x");
    FAIL();
  } catch (const TransportError&) {
    FAIL() << "4xx must not be retried";
  } catch (const BackendError&) {
  }
  EXPECT_THROW(HttpEmbeddingBackend(s.url("/junk")).embed_text(vector_descriptor(s.url()), "x"), BackendError);
}

TEST(Http, UnreachableIsTransport) {
  std::string url;
  {
    LocalServer gone;
    url = gone.url();
  }
  HttpEmbeddingBackend backend(url, HttpOptions{"", std::chrono::seconds(2)});
  EXPECT_THROW(backend.embed_text(vector_descriptor(url), "x"), TransportError);
}

TEST(Http, EmbedderRetriesServerErrors) {
  LocalServer s;
  std::atomic<int> calls{0};
  s.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    if (calls.fetch_add(1) < 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"vectors":[[0,2]],"dims":2})", "application/json");
  });
  Embedder e(vector_descriptor(s.url()), std::make_shared<HttpEmbeddingBackend>(s.url()), nullptr,
             RetryPolicy{3, std::chrono::milliseconds(1), 2.0});
  EXPECT_EQ(e.embed("x").values, (std::vector<double>{0, 1}));
  EXPECT_EQ(calls.load(), 3);
}
