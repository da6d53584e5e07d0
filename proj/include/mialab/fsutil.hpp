#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mialab {

// Write-temp-then-rename so readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

void ensure_dir(const std::filesystem::path& dir);

}  // namespace mialab
