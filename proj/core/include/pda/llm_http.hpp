#pragma once

#include <string>

#include "pda/semantics.hpp"

namespace pda {

/// Client for an OpenAI-compatible `/v1/chat/completions` endpoint. Credentials
/// come from the environment variable named by `api_key_env`.
class ChatCompletionsClient : public LlmClient {
 public:
  struct Options {
    std::string base_url = "https://api.openai.com";
    std::string model = "gpt-4o";
    std::string provider = "openai";
    std::string api_key_env = "OPENAI_API_KEY";
    double temperature = 0.0;
    int timeout_seconds = 60;
  };

  explicit ChatCompletionsClient(Options options);

  std::string complete(const std::string& prompt) override;
  std::string provider() const override { return options_.provider; }
  std::string model() const override { return options_.model; }

 private:
  Options options_;
  std::string api_key_;
};

}  // namespace pda
