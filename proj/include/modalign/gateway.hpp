#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include "modalign/error.hpp"

namespace modalign {

enum class ChatRole { system, user, assistant };

std::string_view role_name(ChatRole role);

struct ChatMessage {
  ChatRole role = ChatRole::user;
  std::string content;
  /// Optional image reference (path or URL) attached to this turn.
  std::optional<std::string> image;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string backend_id;
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  int max_tokens = 4096;
  std::optional<std::int64_t> seed_hint;

  /// Throws ContractError unless the request is well formed.
  void validate() const;

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

/// Sampling parameters bound to one kind of call.
struct SamplingDefaults {
  double temperature;
  int max_tokens;
};

/// Translation, summarisation and augmentation calls.
inline constexpr SamplingDefaults kStageSampling{1.0, 4096};
/// Image caption calls.
inline constexpr SamplingDefaults kCaptionSampling{0.8, 300};

/// Compact JSON with sorted keys over the fields that identify a request:
/// backend_id, max_tokens, messages (content, image when present, role),
/// model, temperature. seed_hint is excluded.
std::string canonical_serialization(const ChatRequest& request);

/// SHA-256 hex of the canonical serialization.
std::string cache_key(const ChatRequest& request);

enum class FinishReason { stop, length, error };

std::string_view finish_reason_name(FinishReason reason);

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct Provenance {
  std::string backend_id;
  std::string model;
  bool cache_hit = false;
  std::string request_digest;
};

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  std::optional<Usage> usage;
  Provenance provenance;
};

/// Raw provider answer before the gateway attaches provenance.
struct ProviderReply {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  std::optional<Usage> usage;
};

/// Transient transport failure; the gateway retries these.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The provider answered with an error payload; surfaced verbatim.
class ProviderError : public Error {
 public:
  ProviderError(int status, std::string body)
      : Error("provider error (status " + std::to_string(status) + "): " + body), status_(status), body_(std::move(body)) {}
  int status() const { return status_; }
  const std::string& body() const { return body_; }

 private:
  int status_;
  std::string body_;
};

class ProviderUnreachable : public Error {
 public:
  using Error::Error;
};

/// Strict replay found no fixture for a digest.
class ReplayMiss : public Error {
 public:
  explicit ReplayMiss(const std::string& digest)
      : Error("replay miss: no fixture for request digest " + digest), digest_(digest) {}
  const std::string& digest() const { return digest_; }

 private:
  std::string digest_;
};

class UnknownBackend : public Error {
 public:
  using Error::Error;
};

/// A chat-completion source.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderReply invoke(const ChatRequest& request) = 0;
};

/// One UTF-8 file per digest, file name = digest hex, content = text.
class ReplayStore {
 public:
  explicit ReplayStore(std::filesystem::path directory);

  std::optional<std::string> lookup(const std::string& digest) const;
  void write(const std::string& digest, const std::string& text) const;
  const std::filesystem::path& directory() const { return directory_; }

 private:
  std::filesystem::path directory_;
};

enum class RunMode { live, replay, mock };

std::string_view run_mode_name(RunMode mode);
std::optional<RunMode> parse_run_mode(std::string_view name);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_delay{1000};
  double multiplier = 2.0;
};

struct BackendOptions {
  RunMode mode = RunMode::mock;
  std::size_t concurrency = 4;
  /// Cache directory; in replay mode it is the read-only fixture store.
  std::optional<std::filesystem::path> cache_dir;
  RetryPolicy retry;
  /// Write provider results into cache_dir. Always on in live mode.
  bool record = false;
};

struct BackendStats {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t provider_invocations = 0;
  std::size_t retries = 0;
};

/// Routes requests to registered backends. Consults the memory cache, then
/// the on-disk store, then the provider; concurrent misses on one digest
/// share a single provider call. Safe for concurrent callers.
class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway();
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// `provider` may be null only in replay mode.
  void register_backend(const std::string& backend_id, std::shared_ptr<Provider> provider, BackendOptions options);
  bool has_backend(const std::string& backend_id) const;

  Completion complete(const ChatRequest& request);

  BackendStats stats(const std::string& backend_id) const;

  /// Replaces the backoff sleep (tests use a no-op).
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

 private:
  struct Backend;
  Backend& backend(const std::string& backend_id) const;
  ProviderReply invoke_with_retry(Backend& b, const ChatRequest& request);

  std::map<std::string, std::unique_ptr<Backend>> backends_;
  Sleeper sleeper_;
};

/// HTTP provider speaking the common chat-completions JSON shape.
struct HttpProviderOptions {
  /// Scheme + host (+ port), e.g. "https://api.openai.com".
  std::string base_url;
  std::string path = "/v1/chat/completions";
  /// Name of the environment variable holding the bearer token.
  std::string auth_env = "OPENAI_API_KEY";
  std::chrono::seconds timeout{120};
  /// Relative image references resolve against this directory.
  std::filesystem::path image_root;
};

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderOptions options);
  ProviderReply invoke(const ChatRequest& request) override;

  /// Request body as sent on the wire; exposed for tests.
  static std::string request_body(const ChatRequest& request);
  /// Parses a chat-completions response body.
  static ProviderReply parse_response(const std::string& body);

 private:
  HttpProviderOptions options_;
};

}  // namespace modalign
