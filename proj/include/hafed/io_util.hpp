#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace hafed {

// Write-to-temp then rename, so a failed run never leaves a partial file.
void atomic_write_file(const std::filesystem::path& path,
                       std::string_view contents);

std::string read_file(const std::filesystem::path& path);

// FNV-1a 64-bit, hex-encoded; used for dataset/output content hashes.
std::uint64_t fnv1a(std::string_view bytes);
std::string fnv1a_hex(std::string_view bytes);

// Locale-independent round-trippable double formatting ("%.17g").
std::string format_double(double v);

}  // namespace hafed
