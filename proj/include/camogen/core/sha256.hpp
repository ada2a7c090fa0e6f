#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace camogen {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_hex(const std::vector<uint8_t>& v);
std::string sha256_file_hex(const std::string& path);  // throws on I/O error

}  // namespace camogen
