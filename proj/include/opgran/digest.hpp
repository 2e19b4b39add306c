#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace opgran {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lowercase hex SHA-256 of a file's contents. Throws DataError when unreadable.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace opgran
