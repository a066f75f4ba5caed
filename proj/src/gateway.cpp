#include "modalign/gateway.hpp"

#include <thread>

#include <nlohmann/json.hpp>

#include "modalign/prompt_protocol.hpp"
#include "modalign/util/sha256.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {

std::string_view role_name(ChatRole role) {
  switch (role) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "user";
}

std::string_view finish_reason_name(FinishReason reason) {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "stop";
}

std::string_view run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::live: return "live";
    case RunMode::replay: return "replay";
    case RunMode::mock: return "mock";
  }
  return "mock";
}

std::optional<RunMode> parse_run_mode(std::string_view name) {
  if (name == "live") return RunMode::live;
  if (name == "replay") return RunMode::replay;
  if (name == "mock") return RunMode::mock;
  return std::nullopt;
}

std::string_view stage_name(LlmStage stage) {
  switch (stage) {
    case LlmStage::translate: return "TRANSLATE";
    case LlmStage::summarize: return "SUMMARIZE";
    case LlmStage::augment: return "AUGMENT";
  }
  return "TRANSLATE";
}

std::optional<LlmStage> parse_stage_name(std::string_view name) {
  if (name == "TRANSLATE") return LlmStage::translate;
  if (name == "SUMMARIZE") return LlmStage::summarize;
  if (name == "AUGMENT") return LlmStage::augment;
  return std::nullopt;
}

std::string stage_marker(LlmStage stage) { return "[[" + std::string(stage_name(stage)) + "]]"; }

std::optional<std::string> extract_tagged(std::string_view text, std::string_view open, std::string_view close) {
  const auto begin = text.find(open);
  if (begin == std::string_view::npos) return std::nullopt;
  auto start = begin + open.size();
  const auto end = text.find(close, start);
  if (end == std::string_view::npos) return std::nullopt;
  auto inner = text.substr(start, end - start);
  if (!inner.empty() && inner.front() == '\n') inner.remove_prefix(1);
  if (!inner.empty() && inner.back() == '\n') inner.remove_suffix(1);
  return std::string(inner);
}

void ChatRequest::validate() const {
  if (backend_id.empty()) throw ContractError("chat request: backend_id is empty");
  if (messages.empty()) throw ContractError("chat request: at least one message is required");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (messages[i].content.empty()) {
      throw ContractError("chat request: message " + std::to_string(i) + " has empty content");
    }
  }
  if (!(temperature >= 0.0)) throw ContractError("chat request: temperature must be >= 0");
  if (max_tokens <= 0) throw ContractError("chat request: max_tokens must be positive");
}

std::string canonical_serialization(const ChatRequest& request) {
  // nlohmann::json objects keep keys in std::map order, so dump() is sorted.
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    nlohmann::json entry{{"role", role_name(m.role)}, {"content", m.content}};
    if (m.image) entry["image"] = *m.image;
    messages.push_back(std::move(entry));
  }
  const nlohmann::json body{{"backend_id", request.backend_id},
                            {"model", request.model},
                            {"messages", std::move(messages)},
                            {"temperature", request.temperature},
                            {"max_tokens", request.max_tokens}};
  return body.dump();
}

std::string cache_key(const ChatRequest& request) { return util::sha256_hex(canonical_serialization(request)); }

ReplayStore::ReplayStore(std::filesystem::path directory) : directory_(std::move(directory)) {}

std::optional<std::string> ReplayStore::lookup(const std::string& digest) const {
  const auto path = directory_ / digest;
  if (!std::filesystem::is_regular_file(path)) return std::nullopt;
  return util::read_file(path.string());
}

void ReplayStore::write(const std::string& digest, const std::string& text) const {
  util::write_file((directory_ / digest).string(), text);
}

struct Gateway::Backend {
  std::string id;
  std::shared_ptr<Provider> provider;
  BackendOptions options;
  std::optional<ReplayStore> store;
  std::unique_ptr<std::counting_semaphore<>> slots;

  mutable std::mutex mutex;
  std::unordered_map<std::string, ProviderReply> memory;
  std::unordered_map<std::string, std::shared_future<ProviderReply>> in_flight;
  BackendStats stats;
};

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<>& s_;
};

}  // namespace

Gateway::Gateway() : sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

Gateway::~Gateway() = default;

void Gateway::register_backend(const std::string& backend_id, std::shared_ptr<Provider> provider,
                               BackendOptions options) {
  if (backend_id.empty()) throw ConfigError("backend id must not be empty");
  if (backends_.contains(backend_id)) throw ConfigError("backend '" + backend_id + "' registered twice");
  if (options.concurrency == 0) throw ConfigError("backend '" + backend_id + "': concurrency must be positive");
  if (options.retry.max_attempts < 1) throw ConfigError("backend '" + backend_id + "': retry attempts must be >= 1");
  if (options.mode == RunMode::replay && !options.cache_dir) {
    throw ConfigError("backend '" + backend_id + "': replay mode needs a fixture directory");
  }
  if (options.mode != RunMode::replay && !provider) {
    throw ConfigError("backend '" + backend_id + "': a provider is required outside replay mode");
  }
  auto b = std::make_unique<Backend>();
  b->id = backend_id;
  b->provider = std::move(provider);
  if (options.cache_dir) b->store.emplace(*options.cache_dir);
  b->slots = std::make_unique<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(options.concurrency));
  b->options = std::move(options);
  backends_.emplace(backend_id, std::move(b));
}

bool Gateway::has_backend(const std::string& backend_id) const { return backends_.contains(backend_id); }

Gateway::Backend& Gateway::backend(const std::string& backend_id) const {
  const auto it = backends_.find(backend_id);
  if (it == backends_.end()) throw UnknownBackend("unknown backend '" + backend_id + "'");
  return *it->second;
}

BackendStats Gateway::stats(const std::string& backend_id) const {
  const auto& b = backend(backend_id);
  std::lock_guard lock(b.mutex);
  return b.stats;
}

ProviderReply Gateway::invoke_with_retry(Backend& b, const ChatRequest& request) {
  auto delay = b.options.retry.initial_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      SlotGuard slot(*b.slots);
      {
        std::lock_guard lock(b.mutex);
        ++b.stats.provider_invocations;
      }
      return b.provider->invoke(request);
    } catch (const TransportError& e) {
      if (attempt >= b.options.retry.max_attempts) {
        throw ProviderUnreachable("backend '" + b.id + "' unreachable after " + std::to_string(attempt) +
                                  " attempts: " + e.what());
      }
    }
    {
      std::lock_guard lock(b.mutex);
      ++b.stats.retries;
    }
    sleeper_(delay);
    delay = std::chrono::milliseconds(
        static_cast<std::int64_t>(static_cast<double>(delay.count()) * b.options.retry.multiplier));
  }
}

Completion Gateway::complete(const ChatRequest& request) {
  request.validate();
  Backend& b = backend(request.backend_id);
  const std::string digest = cache_key(request);
  const auto finish = [&](const ProviderReply& reply, bool hit) {
    return Completion{reply.text, reply.finish_reason, reply.usage,
                      Provenance{request.backend_id, request.model, hit, digest}};
  };

  std::promise<ProviderReply> promise;
  {
    std::unique_lock lock(b.mutex);
    ++b.stats.requests;
    if (const auto it = b.memory.find(digest); it != b.memory.end()) {
      ++b.stats.cache_hits;
      return finish(it->second, true);
    }
    if (const auto it = b.in_flight.find(digest); it != b.in_flight.end()) {
      auto shared = it->second;
      lock.unlock();
      const ProviderReply reply = shared.get();
      std::lock_guard relock(b.mutex);
      ++b.stats.cache_hits;
      return finish(reply, true);
    }
    b.in_flight.emplace(digest, promise.get_future().share());
  }

  try {
    ProviderReply reply;
    bool hit = false;
    if (b.store) {
      if (auto text = b.store->lookup(digest)) {
        reply.text = std::move(*text);
        hit = true;
      }
    }
    if (!hit) {
      if (b.options.mode == RunMode::replay) throw ReplayMiss(digest);
      reply = invoke_with_retry(b, request);
      if (reply.finish_reason == FinishReason::length && reply.text.empty()) {
        throw ProviderError(0, "completion truncated by length with no text");
      }
      if (b.store && (b.options.record || b.options.mode == RunMode::live)) b.store->write(digest, reply.text);
    }
    {
      std::lock_guard lock(b.mutex);
      if (hit) ++b.stats.cache_hits;
      b.memory.emplace(digest, reply);
      b.in_flight.erase(digest);
    }
    promise.set_value(reply);
    return finish(reply, hit);
  } catch (...) {
    {
      std::lock_guard lock(b.mutex);
      b.in_flight.erase(digest);
    }
    promise.set_exception(std::current_exception());
    throw;
  }
}

}  // namespace modalign
