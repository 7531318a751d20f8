#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace dsr {

inline constexpr double kDefaultTemperature = 0.2;

struct ChatMessage {
  std::string role;
  std::string content;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = kDefaultTemperature;
  std::size_t max_output_tokens = 4096;
  std::string tag;  // purpose label, e.g. "select.sample"
};

// Stable hash of (messages, temperature, tag). max_output_tokens is not part
// of it. A non-zero sample_index keeps the samples of one batch distinct;
// index 0 equals the plain request digest.
std::string request_digest(const CompletionRequest& request, std::size_t sample_index = 0);

// All message contents joined by newlines; what scripted rules match against.
std::string request_text(const CompletionRequest& request);

// Base client. complete() is thread-safe in every implementation.
class LlmClient {
 public:
  virtual ~LlmClient() = default;

  std::string complete(const CompletionRequest& request, std::size_t sample_index = 0);
  // k completions in index order; throws on the first failure.
  std::vector<std::string> sample(const CompletionRequest& request, std::size_t k);

  std::size_t call_count() const { return calls_.load(); }
  std::map<std::string, std::size_t> calls_by_tag() const;

 protected:
  virtual std::string do_complete(const CompletionRequest& request, std::size_t sample_index) = 0;

 private:
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex tag_mutex_;
  std::map<std::string, std::size_t> tag_calls_;
};

// Wire adapter for live mode.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string post(const CompletionRequest& request) = 0;
};

struct HttpEndpoint {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key_env = "DSR_API_KEY";
  std::chrono::seconds timeout{120};
  int max_attempts = 3;
};

// JSON chat-completions POST against {base_url}/chat/completions.
class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(HttpEndpoint endpoint);
  std::string post(const CompletionRequest& request) override;

  // Process-wide count of connection attempts; lets tests prove isolation.
  static std::size_t connection_attempts();

 private:
  HttpEndpoint endpoint_;
};

class LiveClient final : public LlmClient {
 public:
  explicit LiveClient(std::shared_ptr<ChatTransport> transport);

 protected:
  std::string do_complete(const CompletionRequest& request, std::size_t sample_index) override;

 private:
  std::shared_ptr<ChatTransport> transport_;
};

struct TranscriptEntry {
  std::string digest;
  std::string tag;
  double temperature = kDefaultTemperature;
  std::vector<ChatMessage> messages;
  std::string response;
  std::size_t sample_index = 0;
};

nlohmann::json transcript_entry_to_json(const TranscriptEntry& entry);
TranscriptEntry transcript_entry_from_json(const nlohmann::json& j);
std::vector<TranscriptEntry> load_transcript(const std::string& path);

// Forwards to an upstream client and appends each exchange to a JSON-lines
// transcript. Appends are serialized.
class RecordingClient final : public LlmClient {
 public:
  RecordingClient(std::shared_ptr<LlmClient> upstream, std::string transcript_path);

 protected:
  std::string do_complete(const CompletionRequest& request, std::size_t sample_index) override;

 private:
  std::shared_ptr<LlmClient> upstream_;
  std::string path_;
  std::mutex write_mutex_;
};

// Answers from a transcript by digest. A digest recorded several times is
// replayed in recording order, repeating the last response when exhausted.
class ReplayClient final : public LlmClient {
 public:
  explicit ReplayClient(const std::vector<TranscriptEntry>& entries, bool strict = true);
  static std::shared_ptr<ReplayClient> from_file(const std::string& path, bool strict = true);

 protected:
  std::string do_complete(const CompletionRequest& request, std::size_t sample_index) override;

 private:
  struct Slot {
    std::vector<std::string> responses;
    std::unique_ptr<std::atomic<std::size_t>> cursor;
  };
  std::unordered_map<std::string, Slot> slots_;
  bool strict_;
};

struct ScriptRule {
  std::string tag;  // exact tag, "prefix*", or "*"
  std::optional<std::regex> match;
  std::string match_source;
  std::vector<std::string> responses;
  bool cycle = false;
};

// Rule-table mock. The first rule whose tag and pattern match answers; each
// rule hands out its responses in order and then repeats the last one
// (or wraps around when cycle is set). A request with no matching rule fails
// with RULE_MISS.
class ScriptedClient final : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<ScriptRule> rules);
  static std::shared_ptr<ScriptedClient> from_json(const nlohmann::json& doc);
  static std::shared_ptr<ScriptedClient> from_file(const std::string& path);

 protected:
  std::string do_complete(const CompletionRequest& request, std::size_t sample_index) override;

 private:
  std::vector<ScriptRule> rules_;
  std::vector<std::size_t> cursors_;
  std::mutex mutex_;
};

enum class LlmMode { kLive, kRecord, kReplay, kScripted };

struct LlmConfig {
  LlmMode mode = LlmMode::kScripted;
  HttpEndpoint endpoint;
  std::string transcript_path;  // record target or replay source
  std::string rules_path;       // scripted rules; with kRecord, records the scripted output
  bool strict_replay = true;
};

std::shared_ptr<LlmClient> make_llm_client(const LlmConfig& config);

}  // namespace dsr
