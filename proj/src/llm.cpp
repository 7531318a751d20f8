#include "dsr/llm.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <fstream>

#include "dsr/common.hpp"

namespace dsr {

namespace {

nlohmann::json messages_to_json(const std::vector<ChatMessage>& messages) {
  auto out = nlohmann::json::array();
  for (const auto& m : messages) out.push_back({{"role", m.role}, {"content", m.content}});
  return out;
}

std::vector<ChatMessage> messages_from_json(const nlohmann::json& j) {
  std::vector<ChatMessage> out;
  for (const auto& m : j) out.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
  return out;
}

}  // namespace

std::string request_digest(const CompletionRequest& request, std::size_t sample_index) {
  // Temperature is formatted at fixed precision so 0.2 and 0.20000000001
  // from different config paths agree.
  nlohmann::json canonical = {{"messages", messages_to_json(request.messages)},
                              {"temperature", fmt::format("{:.4f}", request.temperature)},
                              {"tag", request.tag}};
  if (sample_index != 0) canonical["sample_index"] = sample_index;
  return sha256_hex(canonical.dump());
}

std::string request_text(const CompletionRequest& request) {
  std::string out;
  for (const auto& m : request.messages) {
    if (!out.empty()) out.push_back('\n');
    out += m.content;
  }
  return out;
}

std::string LlmClient::complete(const CompletionRequest& request, std::size_t sample_index) {
  if (request.messages.empty())
    throw Error(ErrorCode::kConfig, "completion request needs at least one message");
  if (request.temperature < 0.0)
    throw Error(ErrorCode::kConfig, "temperature must be non-negative");
  calls_.fetch_add(1);
  {
    std::lock_guard lock(tag_mutex_);
    ++tag_calls_[request.tag];
  }
  return do_complete(request, sample_index);
}

std::vector<std::string> LlmClient::sample(const CompletionRequest& request, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kConfig, "sample count must be at least 1");
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(complete(request, i));
  return out;
}

std::map<std::string, std::size_t> LlmClient::calls_by_tag() const {
  std::lock_guard lock(tag_mutex_);
  return tag_calls_;
}

LiveClient::LiveClient(std::shared_ptr<ChatTransport> transport) : transport_(std::move(transport)) {
  if (!transport_) throw Error(ErrorCode::kConfig, "live client needs a transport");
}

std::string LiveClient::do_complete(const CompletionRequest& request, std::size_t) {
  return transport_->post(request);
}

nlohmann::json transcript_entry_to_json(const TranscriptEntry& e) {
  return {{"digest", e.digest},
          {"tag", e.tag},
          {"temperature", e.temperature},
          {"sample_index", e.sample_index},
          {"messages", messages_to_json(e.messages)},
          {"response", e.response}};
}

TranscriptEntry transcript_entry_from_json(const nlohmann::json& j) {
  TranscriptEntry e;
  e.digest = j.at("digest").get<std::string>();
  e.tag = j.value("tag", "");
  e.temperature = j.value("temperature", kDefaultTemperature);
  e.sample_index = j.value("sample_index", std::size_t{0});
  if (j.contains("messages")) e.messages = messages_from_json(j.at("messages"));
  e.response = j.at("response").get<std::string>();
  return e;
}

std::vector<TranscriptEntry> load_transcript(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open transcript: " + path);
  std::vector<TranscriptEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(transcript_entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
  }
  return out;
}

RecordingClient::RecordingClient(std::shared_ptr<LlmClient> upstream, std::string transcript_path)
    : upstream_(std::move(upstream)), path_(std::move(transcript_path)) {
  auto parent = std::filesystem::path(path_).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

std::string RecordingClient::do_complete(const CompletionRequest& request, std::size_t sample_index) {
  auto response = upstream_->complete(request, sample_index);
  TranscriptEntry entry{request_digest(request, sample_index), request.tag, request.temperature,
                        request.messages, response, sample_index};
  std::lock_guard lock(write_mutex_);
  std::ofstream out(path_, std::ios::app);
  out << transcript_entry_to_json(entry).dump() << "\n";
  return response;
}

ReplayClient::ReplayClient(const std::vector<TranscriptEntry>& entries, bool strict) : strict_(strict) {
  for (const auto& e : entries) {
    auto& slot = slots_[e.digest];
    if (!slot.cursor) slot.cursor = std::make_unique<std::atomic<std::size_t>>(0);
    slot.responses.push_back(e.response);
  }
}

std::shared_ptr<ReplayClient> ReplayClient::from_file(const std::string& path, bool strict) {
  return std::make_shared<ReplayClient>(load_transcript(path), strict);
}

std::string ReplayClient::do_complete(const CompletionRequest& request, std::size_t sample_index) {
  auto digest = request_digest(request, sample_index);
  auto it = slots_.find(digest);
  if (it == slots_.end()) {
    if (strict_)
      throw Error(ErrorCode::kReplayMiss,
                  fmt::format("no recorded response for {} (tag {})", digest, request.tag));
    return {};
  }
  auto& slot = it->second;
  auto index = slot.cursor->fetch_add(1);
  return slot.responses[std::min(index, slot.responses.size() - 1)];
}

ScriptedClient::ScriptedClient(std::vector<ScriptRule> rules)
    : rules_(std::move(rules)), cursors_(rules_.size(), 0) {
  for (const auto& r : rules_)
    if (r.responses.empty())
      throw Error(ErrorCode::kConfig, "scripted rule for tag " + r.tag + " has no responses");
}

std::shared_ptr<ScriptedClient> ScriptedClient::from_json(const nlohmann::json& doc) {
  const auto& list = doc.is_array() ? doc : doc.at("rules");
  std::vector<ScriptRule> rules;
  for (const auto& j : list) {
    ScriptRule rule;
    rule.tag = j.value("tag", "*");
    if (auto it = j.find("match"); it != j.end() && !it->is_null()) {
      rule.match_source = it->get<std::string>();
      try {
        rule.match = std::regex(rule.match_source, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::kConfig, "bad rule pattern '" + rule.match_source + "': " + e.what());
      }
    }
    if (auto it = j.find("response"); it != j.end()) rule.responses.push_back(it->get<std::string>());
    if (auto it = j.find("responses"); it != j.end())
      for (const auto& r : *it) rule.responses.push_back(r.get<std::string>());
    rule.cycle = j.value("cycle", false);
    rules.push_back(std::move(rule));
  }
  return std::make_shared<ScriptedClient>(std::move(rules));
}

std::shared_ptr<ScriptedClient> ScriptedClient::from_file(const std::string& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "cannot parse rules file " + path + ": " + e.what());
  }
}

namespace {

bool tag_matches(std::string_view pattern, std::string_view tag) {
  if (pattern == "*") return true;
  if (!pattern.empty() && pattern.back() == '*')
    return tag.substr(0, pattern.size() - 1) == pattern.substr(0, pattern.size() - 1);
  return pattern == tag;
}

}  // namespace

std::string ScriptedClient::do_complete(const CompletionRequest& request, std::size_t) {
  auto text = request_text(request);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& rule = rules_[i];
    if (!tag_matches(rule.tag, request.tag)) continue;
    if (rule.match && !std::regex_search(text, *rule.match)) continue;
    std::lock_guard lock(mutex_);
    auto index = cursors_[i]++;
    if (rule.cycle) return rule.responses[index % rule.responses.size()];
    return rule.responses[std::min(index, rule.responses.size() - 1)];
  }
  throw Error(ErrorCode::kRuleMiss, "no scripted rule for tag " + request.tag);
}

std::shared_ptr<LlmClient> make_llm_client(const LlmConfig& config) {
  switch (config.mode) {
    case LlmMode::kLive:
      return std::make_shared<LiveClient>(std::make_shared<HttpChatTransport>(config.endpoint));
    case LlmMode::kScripted:
      return ScriptedClient::from_file(config.rules_path);
    case LlmMode::kReplay:
      return ReplayClient::from_file(config.transcript_path, config.strict_replay);
    case LlmMode::kRecord: {
      std::shared_ptr<LlmClient> upstream;
      if (!config.rules_path.empty()) {
        upstream = ScriptedClient::from_file(config.rules_path);
      } else {
        upstream = std::make_shared<LiveClient>(std::make_shared<HttpChatTransport>(config.endpoint));
      }
      return std::make_shared<RecordingClient>(std::move(upstream), config.transcript_path);
    }
  }
  throw Error(ErrorCode::kConfig, "unknown llm mode");
}

}  // namespace dsr
