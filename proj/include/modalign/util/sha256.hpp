#pragma once

#include <string>
#include <string_view>

namespace modalign::util {

/// Lowercase hex SHA-256 of the bytes of `data`.
std::string sha256_hex(std::string_view data);

/// Standard base64 (RFC 4648, with padding).
std::string base64_encode(std::string_view data);

}  // namespace modalign::util
