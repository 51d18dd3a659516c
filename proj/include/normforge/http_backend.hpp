// Copyright 2026 The norm-forge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Live chat-completions backend over HTTP(S).

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"
// glibc <resolv.h> (pulled in by httplib) defines _res, which clashes with
// Eigen parameter names in later includes.
#ifdef _res
#undef _res
#endif

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>

#include "normforge/elicitation.hpp"

namespace normforge {

inline constexpr const char* kApiKeyEnv = "NORMFORGE_API_KEY";

struct EndpointUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline EndpointUrl split_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorKind::Config, "endpoint '" + url + "' has no scheme");
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") fail(ErrorKind::Config, "unsupported endpoint scheme '" + scheme + "'");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string api_key_from_env() {
  const char* key = std::getenv(kApiKeyEnv);
  if (!key || !*key) fail(ErrorKind::Credential, std::string(kApiKeyEnv) + " is not set");
  return key;
}

class HttpBackend : public Backend {
 public:
  HttpBackend(std::string endpoint, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(60))
      : url_(split_endpoint(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {
    if (api_key_.empty()) fail(ErrorKind::Credential, "empty API key");
  }

  BackendReply complete(const ChatRequest& request, const ItemContext&) override {
    httplib::Client client(url_.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    auto response = client.Post(url_.path, headers, request_body(request).dump(), "application/json");
    if (!response) fail(ErrorKind::Retryable, "transport failure: " + httplib::to_string(response.error()));
    int status = response->status;
    if (status == 401 || status == 403) fail(ErrorKind::Credential, "endpoint rejected credentials (HTTP " + std::to_string(status) + ")");
    if (status == 408 || status == 409 || status == 429 || status >= 500)
      fail(ErrorKind::Retryable, "HTTP " + std::to_string(status));
    if (status != 200) fail(ErrorKind::Protocol, "HTTP " + std::to_string(status) + ": " + response->body);
    return parse_chat_response(response->body);
  }

  bool uses_network() const override { return true; }

 private:
  EndpointUrl url_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

}  // namespace normforge
