#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace soda {

struct Digest {
    std::array<uint8_t, 32> bytes{};

    std::string hex() const;
    static Digest from_hex(const std::string& hex);

    bool operator==(const Digest& other) const { return bytes == other.bytes; }
    bool operator!=(const Digest& other) const { return !(*this == other); }
};

// Incremental SHA-256 (OpenSSL EVP under the hood). All multi-byte values are
// fed little-endian so a fingerprint is a function of the data alone.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, size_t size);
    void update_u32(uint32_t v);
    void update_u64(uint64_t v);
    void update_double(double v);
    void update_doubles(const std::vector<double>& v);
    void update_string(const std::string& s);

    Digest finish();

private:
    void* ctx_;
};

}  // namespace soda
