#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "pda/llm_http.hpp"

#include <cstdlib>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pda/errors.hpp"

namespace pda {

ChatCompletionsClient::ChatCompletionsClient(Options options) : options_(std::move(options)) {
  if (const char* key = std::getenv(options_.api_key_env.c_str())) api_key_ = key;
}

std::string ChatCompletionsClient::complete(const std::string& prompt) {
  if (api_key_.empty()) {
    throw ProviderError("environment variable " + options_.api_key_env + " is not set");
  }
  httplib::Client cli(options_.base_url);
  cli.set_connection_timeout(options_.timeout_seconds, 0);
  cli.set_read_timeout(options_.timeout_seconds, 0);

  const nlohmann::json body = {
      {"model", options_.model},
      {"temperature", options_.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
  };
  const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
  auto res = cli.Post("/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    throw ProviderError(options_.provider + ": request failed (" +
                        httplib::to_string(res.error()) + ")");
  }
  if (res->status != 200) {
    throw ProviderError(options_.provider + ": HTTP " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200));
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(options_.provider + ": malformed response: " + e.what());
  }
}

}  // namespace pda
