#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <fmt/format.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "dsr/common.hpp"
#include "dsr/llm.hpp"

namespace dsr {

namespace {

std::atomic<std::size_t> g_connection_attempts{0};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorCode::kConfig, "base URL needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

}  // namespace

HttpChatTransport::HttpChatTransport(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.base_url.empty()) throw Error(ErrorCode::kConfig, "live mode needs a base URL");
  if (endpoint_.max_attempts < 1) endpoint_.max_attempts = 1;
}

std::size_t HttpChatTransport::connection_attempts() { return g_connection_attempts.load(); }

std::string HttpChatTransport::post(const CompletionRequest& request) {
  auto url = split_url(endpoint_.base_url);
  nlohmann::json body = {{"model", endpoint_.model},
                         {"temperature", request.temperature},
                         {"max_tokens", request.max_output_tokens},
                         {"messages", nlohmann::json::array()}};
  for (const auto& m : request.messages)
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  httplib::Headers headers;
  if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  std::string last_error;
  for (int attempt = 0; attempt < endpoint_.max_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::seconds(1 << (attempt - 1)));
    g_connection_attempts.fetch_add(1);
    httplib::Client client(url.origin);
    client.set_read_timeout(endpoint_.timeout);
    client.set_connection_timeout(std::chrono::seconds(10));
    auto res = client.Post(url.path + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200)
      throw Error(ErrorCode::kNetwork, fmt::format("HTTP {}: {}", res->status, res->body));
    try {
      auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kNetwork, std::string("malformed completion response: ") + e.what());
    }
  }
  throw Error(ErrorCode::kNetwork,
              fmt::format("completion failed after {} attempts: {}", endpoint_.max_attempts, last_error));
}

}  // namespace dsr
