#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lclip {

// Lowercase hex SHA-256 of a byte buffer.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::vector<uint8_t>& data);
std::string sha256_file(const std::string& path);

} // namespace lclip
