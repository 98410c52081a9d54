#include "toolqp/chat_client.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace toolqp {

struct ChatClient::Impl {
  explicit Impl(const ChatClientConfig& config) : client(config.endpoint) {
    client.set_connection_timeout(config.timeout_seconds, 0);
    client.set_read_timeout(config.timeout_seconds, 0);
  }
  httplib::Client client;
};

ChatClient::ChatClient(ChatClientConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_)) {}

ChatClient::~ChatClient() = default;

std::string ChatClient::complete(const std::vector<ChatMessage>& messages) {
  nlohmann::json body;
  body["model"] = config_.model;
  body["temperature"] = config_.temperature;
  auto& list = body["messages"] = nlohmann::json::array();
  for (const ChatMessage& message : messages) {
    list.push_back({{"role", message.role}, {"content", message.content}});
  }
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  std::string failure;
  int delay_ms = config_.backoff_initial_ms;
  const int max_attempts = config_.max_retries + 1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    auto res = impl_->client.Post(config_.path, headers, payload, "application/json");
    if (!res) {
      failure = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 429 || res->status >= 500) {
      failure = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw Error(ErrorCode::kBackend, "chat endpoint " + config_.endpoint + " returned HTTP " +
                                           std::to_string(res->status));
    } else {
      try {
        nlohmann::json reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const std::exception& e) {
        throw Error(ErrorCode::kBackend,
                    "chat endpoint " + config_.endpoint + " returned unexpected JSON: " + e.what());
      }
    }
    if (attempt < max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
  throw Error(ErrorCode::kBackend, "chat endpoint " + config_.endpoint + " failed after " +
                                       std::to_string(max_attempts) + " attempts: " + failure);
}

}  // namespace toolqp
