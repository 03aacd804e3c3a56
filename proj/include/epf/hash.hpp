#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace epf {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Content hash in git's blob form: sha1("blob <size>\0" + content).
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace epf
