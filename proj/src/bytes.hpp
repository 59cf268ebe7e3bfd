#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Internal file and checksum helpers shared by the archive writers.

namespace fsm::detail {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& p);

void write_file_bytes(const std::filesystem::path& p, const void* data, size_t len);

uint32_t crc32_of(const unsigned char* data, size_t len);

}  // namespace fsm::detail
