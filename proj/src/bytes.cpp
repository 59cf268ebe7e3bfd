#include "bytes.hpp"

#include <zlib.h>

#include <fstream>

#include "fsm/error.hpp"

namespace fsm::detail {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    f.seekg(0, std::ios::end);
    auto len = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> buf(static_cast<size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) throw IoError("short read on " + p.string());
    return buf;
}

void write_file_bytes(const std::filesystem::path& p, const void* data, size_t len) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + p.string() + " for writing");
    if (len > 0) f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!f) throw IoError("short write on " + p.string());
}

uint32_t crc32_of(const unsigned char* data, size_t len) {
    uLong c = crc32(0L, Z_NULL, 0);
    if (len > 0) c = crc32(c, data, static_cast<uInt>(len));
    return static_cast<uint32_t>(c);
}

}  // namespace fsm::detail
