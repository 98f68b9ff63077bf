#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace compass {

/// Lower-case hex SHA-256 of the exact input bytes.
std::string sha256_hex(std::string_view bytes);

/// First 8 bytes of SHA-256, big-endian. Stable across platforms and runs.
std::uint64_t stable_hash64(std::string_view bytes);

/// Writes via a sibling temp file and rename, so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Runs body(i) for i in [0, n) on at most `max_workers` threads.
/// Exceptions are captured per index; the one with the lowest index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t max_workers, const std::function<void(std::size_t)>& body);

}  // namespace compass
