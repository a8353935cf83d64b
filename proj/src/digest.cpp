#include "soda/digest.hpp"

#include <openssl/evp.h>

#include <bit>

#include "soda/error.hpp"

namespace soda {

std::string Digest::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (uint8_t b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

Digest Digest::from_hex(const std::string& hex) {
    if (hex.size() != 64) fail(ErrorCode::corruption, "fingerprint hex must be 64 characters");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        fail(ErrorCode::corruption, "fingerprint hex contains a non-hex character");
    };
    Digest d;
    for (size_t i = 0; i < 32; ++i) {
        d.bytes[i] = static_cast<uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
    }
    return d;
}

Sha256::Sha256() {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        fail(ErrorCode::io, "failed to initialize SHA-256 context");
    }
    ctx_ = ctx;
}

Sha256::~Sha256() {
    if (ctx_ != nullptr) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(const void* data, size_t size) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size) != 1)
        fail(ErrorCode::io, "SHA-256 update failed");
}

void Sha256::update_u32(uint32_t v) {
    uint8_t buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
    update(buf, 4);
}

void Sha256::update_u64(uint64_t v) {
    uint8_t buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
    update(buf, 8);
}

void Sha256::update_double(double v) { update_u64(std::bit_cast<uint64_t>(v)); }

void Sha256::update_doubles(const std::vector<double>& v) {
    for (double x : v) update_double(x);
}

void Sha256::update_string(const std::string& s) {
    update_u64(s.size());
    update(s.data(), s.size());
}

Digest Sha256::finish() {
    Digest d;
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), d.bytes.data(), &len) != 1 || len != 32)
        fail(ErrorCode::io, "SHA-256 finalize failed");
    return d;
}

}  // namespace soda
