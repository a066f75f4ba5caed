#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "modalign/gateway.hpp"
#include "modalign/util/sha256.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {
namespace {

std::string image_url_for(const std::string& reference, const std::filesystem::path& root) {
  if (reference.starts_with("http://") || reference.starts_with("https://") || reference.starts_with("data:")) {
    return reference;
  }
  std::filesystem::path path(reference);
  if (path.is_relative() && !root.empty()) path = root / path;
  auto ext = util::to_lower_ascii(path.extension().string());
  if (!ext.empty()) ext.erase(0, 1);
  if (ext == "jpg") ext = "jpeg";
  if (ext.empty()) ext = "png";
  std::string bytes;
  try {
    bytes = util::read_file(path.string());
  } catch (const std::exception& e) {
    throw ContractError(std::string("image reference unreadable: ") + e.what());
  }
  return "data:image/" + ext + ";base64," + util::base64_encode(bytes);
}

nlohmann::json wire_messages(const ChatRequest& request, const std::filesystem::path& image_root) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    nlohmann::json entry{{"role", role_name(m.role)}};
    if (m.image) {
      entry["content"] = nlohmann::json::array(
          {{{"type", "text"}, {"text", m.content}},
           {{"type", "image_url"}, {"image_url", {{"url", image_url_for(*m.image, image_root)}}}}});
    } else {
      entry["content"] = m.content;
    }
    messages.push_back(std::move(entry));
  }
  return messages;
}

nlohmann::json wire_body(const ChatRequest& request, const std::filesystem::path& image_root) {
  nlohmann::json body{{"model", request.model},
                      {"messages", wire_messages(request, image_root)},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_tokens}};
  if (request.seed_hint) body["seed"] = *request.seed_hint;
  return body;
}

}  // namespace

HttpProvider::HttpProvider(HttpProviderOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) throw ConfigError("http provider: base_url is required");
}

std::string HttpProvider::request_body(const ChatRequest& request) { return wire_body(request, {}).dump(); }

ProviderReply HttpProvider::parse_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw ProviderError(200, body);
  }
  if (j.contains("error")) throw ProviderError(200, body);
  try {
    const auto& choice = j.at("choices").at(0);
    ProviderReply reply;
    const auto& content = choice.at("message").at("content");
    reply.text = content.is_null() ? std::string{} : content.get<std::string>();
    const auto finish = choice.value("finish_reason", std::string("stop"));
    reply.finish_reason = finish == "length" ? FinishReason::length : FinishReason::stop;
    if (j.contains("usage") && j.at("usage").is_object()) {
      const auto& u = j.at("usage");
      reply.usage = Usage{u.value("prompt_tokens", std::int64_t{0}), u.value("completion_tokens", std::int64_t{0})};
    }
    return reply;
  } catch (const nlohmann::json::exception&) {
    throw ProviderError(200, body);
  }
}

ProviderReply HttpProvider::invoke(const ChatRequest& request) {
  httplib::Client client(options_.base_url);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  httplib::Headers headers;
  if (!options_.auth_env.empty()) {
    if (const char* token = std::getenv(options_.auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const auto body = wire_body(request, options_.image_root).dump();
  const auto result = client.Post(options_.path, headers, body, "application/json");
  if (!result) throw TransportError("http transport failure: " + httplib::to_string(result.error()));
  const int status = result->status;
  if (status == 429 || status >= 500) {
    throw TransportError("http status " + std::to_string(status) + ": " + result->body);
  }
  if (status < 200 || status >= 300) throw ProviderError(status, result->body);
  return parse_response(result->body);
}

}  // namespace modalign
