#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ocd/error.hpp"

namespace ocd {

/// Incremental SHA-256 over a canonical byte stream. `digest64` truncates to
/// the leading 8 bytes for use as a binary-header key.
class ContentHasher {
public:
    ContentHasher();
    ~ContentHasher();
    ContentHasher(const ContentHasher&) = delete;
    ContentHasher& operator=(const ContentHasher&) = delete;

    ContentHasher& bytes(const void* data, std::size_t n);
    ContentHasher& str(std::string_view s);

    template <typename T>
        requires std::is_arithmetic_v<T>
    ContentHasher& pod(T v) {
        return bytes(&v, sizeof(T));
    }

    std::string hex();
    std::uint64_t digest64();

private:
    void finish();
    void* ctx_;
    unsigned char out_[32]{};
    bool done_ = false;
};

std::string sha256_hex(std::string_view data);
std::uint64_t sha256_u64(std::string_view data);
std::string sha256_file_hex(const std::string& path);
std::string hex64(std::uint64_t v);

/// Independent random stream keyed by a tuple of integers, e.g. (seed, epoch, index).
/// Results do not depend on the order in which streams are created.
std::mt19937_64 make_stream(std::initializer_list<std::uint64_t> key);

/// Keeps large tensor buffers on the heap instead of fresh mappings per
/// allocation. Call once at program start; no effect on other allocators.
void tune_allocator();

// Text helpers.
std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
std::string format_real(double v); // shortest round-trip representation
double parse_real(std::string_view s, const char* what);
long long parse_int(std::string_view s, const char* what);

// Little-endian binary helpers used by every on-disk format.
namespace bin {

template <typename T>
void write(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read(std::istream& is, ErrorCode on_error) {
    static_assert(std::is_trivially_copyable_v<T>);
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) fail(on_error, "truncated binary stream");
    return v;
}

void write_string(std::ostream& os, std::string_view s);
std::string read_string(std::istream& is, ErrorCode on_error, std::uint32_t max_len = 1u << 20);

} // namespace bin

} // namespace ocd
