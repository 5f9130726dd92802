#pragma once

#include "cotfaith/backend.hpp"

#include <memory>
#include <string>

namespace cotfaith {

// OpenAI-compatible chat/completions backend. Black-box: no white-box access,
// no parameter intervention, no sequence scoring — those raise
// CapabilityError. The API key is read from the environment variable named by
// api_key_env (never stored in config files).
struct HttpBackendConfig {
  std::string url;          // base URL, e.g. http://localhost:8000
  std::string api_key_env;  // name of the env var holding the key; may be empty
  std::string model;        // model identifier sent with each request
  int timeout_seconds = 120;
  int top_logprobs = 20;    // requested when scoring the answer slot
};

class HttpBackend : public ModelBackend {
public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  std::string name() const override { return "http:" + cfg_.model; }
  Capabilities capabilities() const override { return {}; }

  std::string complete(const std::string& text, const SamplerConfig& sampler,
                       int sample_index) override;
  std::map<std::string, double> answer_distribution(
      const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels) override;

private:
  std::string post_chat(const nlohmann::json& body) const;  // returns response body
  HttpBackendConfig cfg_;
  std::string api_key_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cotfaith
