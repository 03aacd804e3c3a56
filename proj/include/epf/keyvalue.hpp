#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace epf {

/// Line-based `key=value` files. Blank lines and lines starting with '#'
/// are ignored; whitespace around keys and values is trimmed.
std::map<std::string, std::string> parse_key_values(std::istream& in);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const std::map<std::string, std::string>& values);

}  // namespace epf
