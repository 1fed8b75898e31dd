#include "kgalign/llm_bridge.hpp"

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <json.hpp>

// After Eigen: OpenSSL headers define macros that clash with Eigen internals.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace kgalign {
namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("http backend: endpoint needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

bool retryable(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

struct HttpBackend::Impl {
  std::mutex mu;
  std::condition_variable cv;
  std::size_t in_flight = 0;
};

HttpBackend::HttpBackend(HttpConfig cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
  if (cfg_.endpoint.empty()) throw std::invalid_argument("http backend: endpoint is required");
  if (cfg_.concurrency == 0) throw std::invalid_argument("http backend: concurrency must be >= 1");
  split_endpoint(cfg_.endpoint);
  sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

HttpBackend::~HttpBackend() = default;

std::vector<std::string> HttpBackend::complete(std::string_view system, std::string_view user,
                                               std::size_t n) const {
  const Endpoint ep = split_endpoint(cfg_.endpoint);
  nlohmann::ordered_json body;
  body["model"] = cfg_.model;
  body["messages"] = nlohmann::ordered_json::array();
  if (!system.empty()) body["messages"].push_back({{"role", "system"}, {"content", std::string(system)}});
  body["messages"].push_back({{"role", "user"}, {"content", std::string(user)}});
  body["n"] = n;
  body["temperature"] = 0;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  {
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait(lock, [&] { return impl_->in_flight < cfg_.concurrency; });
    ++impl_->in_flight;
  }
  struct Release {
    Impl* impl;
    ~Release() {
      {
        std::lock_guard lock(impl->mu);
        --impl->in_flight;
      }
      impl->cv.notify_one();
    }
  } release{impl_.get()};

  std::string last_error;
  for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double secs = cfg_.backoff_seconds * double(1ULL << std::min<std::size_t>(attempt - 1, 20));
      sleep(std::chrono::milliseconds(static_cast<long long>(secs * 1000.0)));
    }
    httplib::Client cli(ep.origin);
    const auto timeout = std::chrono::duration<double>(cfg_.timeout_seconds);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = cli.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      if (!retryable(res->status)) break;
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      std::vector<std::string> out;
      for (const auto& choice : j.at("choices")) {
        out.push_back(choice.at("message").at("content").get<std::string>());
      }
      return out;
    } catch (const std::exception& e) {
      last_error = std::string("malformed completion response: ") + e.what();
      break;
    }
  }
  throw BackendError(last_error);
}

std::vector<Generation> HttpBackend::generate(const Prompt& prompt, const Tensor<float>&, std::size_t n) const {
  const auto texts = complete(prompt.system, textualize_slots(prompt), n);
  std::vector<Generation> out;
  for (std::size_t i = 0; i < texts.size() && i < n; ++i) out.push_back({texts[i], -double(i)});
  return out;
}

}  // namespace kgalign
