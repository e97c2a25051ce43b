#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace gradsam {

// Streaming SHA-256. Feed bytes with update(), read the digest once with
// hex_digest(); the object is spent afterwards.
class Sha256 {
public:
    Sha256();
    void update(const void* data, size_t len);
    std::string hex_digest();

private:
    void process_block(const uint8_t* block);

    uint32_t state_[8];
    uint8_t buffer_[64];
    size_t buffered_ = 0;
    uint64_t total_bytes_ = 0;
    bool finalized_ = false;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::string& path);

}  // namespace gradsam
