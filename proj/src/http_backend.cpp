#include "cotfaith/http_backend.hpp"

#include "cotfaith/text.hpp"

#include <cmath>
#include <cstdlib>

#include <httplib.h>

namespace cotfaith {

struct HttpBackend::Impl {
  explicit Impl(const std::string& url) : client(url) {}
  httplib::Client client;
};

HttpBackend::HttpBackend(HttpBackendConfig config) : cfg_(std::move(config)) {
  if (cfg_.url.empty()) throw ValidationError("http backend: url is required");
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key) api_key_ = key;
  }
  impl_ = std::make_unique<Impl>(cfg_.url);
  impl_->client.set_connection_timeout(cfg_.timeout_seconds);
  impl_->client.set_read_timeout(cfg_.timeout_seconds);
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::post_chat(const nlohmann::json& body) const {
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = impl_->client.Post("/v1/chat/completions", headers, body.dump(),
                                "application/json");
  if (!res)
    throw TransportError("http backend: no response from " + cfg_.url + " (" +
                         httplib::to_string(res.error()) + ")");
  if (res->status >= 500 || res->status == 429)
    throw TransportError("http backend: status " + std::to_string(res->status) + ": " +
                         res->body);
  if (res->status != 200) {
    const std::string lowered = to_lower(res->body);
    if (lowered.find("context length") != std::string::npos ||
        lowered.find("maximum context") != std::string::npos ||
        lowered.find("context window") != std::string::npos)
      throw ContextOverflowError("http backend: " + res->body);
    throw BackendError("http backend: status " + std::to_string(res->status) + ": " +
                           res->body,
                       false);
  }
  return res->body;
}

static nlohmann::json parse_body(const std::string& body) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("http backend: unparseable response: ") + e.what(),
                       false);
  }
}

std::string HttpBackend::complete(const std::string& text, const SamplerConfig& sampler,
                                  int sample_index) {
  sampler.validate();
  nlohmann::json body{
      {"model", cfg_.model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", text}}})},
      {"max_tokens", sampler.max_new_tokens},
  };
  if (sampler.mode == SamplerConfig::Mode::Greedy) {
    body["temperature"] = 0.0;
  } else {
    body["temperature"] = sampler.temperature;
    body["top_p"] = sampler.top_p;
    body["seed"] = sampler.seed + static_cast<uint64_t>(sample_index);
  }
  auto j = parse_body(post_chat(body));
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("http backend: malformed completion: ") + e.what(),
                       false);
  }
}

std::map<std::string, double> HttpBackend::answer_distribution(
    const std::string& prompt, const std::string& cot,
    const std::vector<std::string>& labels) {
  nlohmann::json body{
      {"model", cfg_.model},
      {"messages",
       nlohmann::json::array(
           {{{"role", "user"}, {"content", compose_answer_text(prompt, cot)}}})},
      {"max_tokens", 1},
      {"temperature", 0.0},
      {"logprobs", true},
      {"top_logprobs", cfg_.top_logprobs},
  };
  auto j = parse_body(post_chat(body));
  std::map<std::string, double> out;
  for (const auto& label : labels) out[label] = 0.0;
  try {
    const auto& content = j.at("choices").at(0).at("logprobs").at("content");
    if (content.empty()) return out;
    for (const auto& cand : content.at(0).at("top_logprobs")) {
      const std::string tok = trim(cand.at("token").get<std::string>());
      const double p = std::exp(cand.at("logprob").get<double>());
      for (const auto& label : labels)
        if (tok == label) out[label] = std::max(out[label], p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("http backend: malformed logprobs: ") + e.what(),
                       false);
  }
  return out;
}

}  // namespace cotfaith
