#include "ocd/util.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <iterator>

namespace ocd {

ContentHasher::ContentHasher() : ctx_(EVP_MD_CTX_new()) {
    EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr);
}

ContentHasher::~ContentHasher() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

ContentHasher& ContentHasher::bytes(const void* data, std::size_t n) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, n);
    return *this;
}

ContentHasher& ContentHasher::str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    return bytes(s.data(), s.size());
}

void ContentHasher::finish() {
    if (done_) return;
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out_, &len);
    done_ = true;
}

std::string ContentHasher::hex() {
    finish();
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (unsigned char c : out_) {
        s.push_back(digits[c >> 4]);
        s.push_back(digits[c & 15]);
    }
    return s;
}

std::uint64_t ContentHasher::digest64() {
    finish();
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | out_[i];
    return v;
}

std::string sha256_hex(std::string_view data) {
    ContentHasher h;
    h.bytes(data.data(), data.size());
    return h.hex();
}

std::uint64_t sha256_u64(std::string_view data) {
    ContentHasher h;
    h.bytes(data.data(), data.size());
    return h.digest64();
}

std::string sha256_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingInput, "cannot open " + path);
    ContentHasher h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.bytes(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 15];
    return s;
}

std::mt19937_64 make_stream(std::initializer_list<std::uint64_t> key) {
    std::vector<std::uint32_t> words;
    words.reserve(key.size() * 2 + 1);
    words.push_back(static_cast<std::uint32_t>(key.size()));
    for (std::uint64_t k : key) {
        words.push_back(static_cast<std::uint32_t>(k));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::string format_real(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

double parse_real(std::string_view s, const char* what) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        fail(ErrorCode::FormatError, std::string("bad real for ") + what + ": '" + std::string(s) + "'");
    return v;
}

long long parse_int(std::string_view s, const char* what) {
    s = trim(s);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        fail(ErrorCode::FormatError, std::string("bad integer for ") + what + ": '" + std::string(s) + "'");
    return v;
}

namespace bin {

void write_string(std::ostream& os, std::string_view s) {
    write<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, ErrorCode on_error, std::uint32_t max_len) {
    auto n = read<std::uint32_t>(is, on_error);
    if (n > max_len) fail(on_error, "string length out of range");
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), n)) fail(on_error, "truncated string");
    return s;
}

} // namespace bin

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

} // namespace ocd
