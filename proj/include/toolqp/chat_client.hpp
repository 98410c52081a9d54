#pragma once

#include <memory>
#include <string>
#include <vector>

#include "toolqp/error.hpp"

namespace toolqp {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;

  bool operator==(const ChatMessage& other) const {
    return role == other.role && content == other.content;
  }
};

struct ChatClientConfig {
  std::string endpoint;  // e.g. "http://127.0.0.1:8080"
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key;
  double temperature = 0.0;
  int max_retries = 3;  // retries after the first attempt, for transport/5xx
  int backoff_initial_ms = 100;
  int timeout_seconds = 120;
};

// Minimal chat-completion client: sends the message list, returns the first
// choice's content. Transient failures retry with exponential backoff.
class ChatClient {
 public:
  explicit ChatClient(ChatClientConfig config);
  ~ChatClient();

  ChatClient(const ChatClient&) = delete;
  ChatClient& operator=(const ChatClient&) = delete;

  std::string complete(const std::vector<ChatMessage>& messages);

  const ChatClientConfig& config() const { return config_; }

 private:
  ChatClientConfig config_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace toolqp
