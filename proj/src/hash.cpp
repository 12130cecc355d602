#include "kicrank/hash.hpp"

#include <openssl/evp.h>

#include "kicrank/errors.hpp"

namespace kicrank {

Digest sha256(std::span<const std::uint8_t> bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != out.size()) {
        throw Error("sha256 failed");
    }
    return out;
}

std::string sha256_hex(std::string_view text) {
    const auto digest =
        sha256({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    static const char* kHex = "0123456789abcdef";
    std::string hex;
    hex.reserve(64);
    for (auto b : digest) {
        hex.push_back(kHex[b >> 4]);
        hex.push_back(kHex[b & 0xf]);
    }
    return hex;
}

}  // namespace kicrank
