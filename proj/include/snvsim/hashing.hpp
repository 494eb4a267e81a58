// hashing.hpp - stable content hashing for manifests and provenance
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace snvsim {

// FNV-1a, 64 bit.  Not cryptographic; used to fingerprint inputs so reruns
// can prove they saw the same bytes.
inline uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

inline uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file for hashing: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a64(ss.str());
}

}  // namespace snvsim
