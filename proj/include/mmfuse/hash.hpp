#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mmfuse {

/// Lowercase hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view bytes);

/// First eight digest bytes as a big-endian integer.
std::uint64_t digest_prefix_u64(std::string_view bytes);

}  // namespace mmfuse
