#include "wsol/image_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace wsol {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open \"" + path + "\"");
    std::ostringstream buf;
    buf << f.rdbuf();
    if (!f && !f.eof()) throw std::runtime_error("read failed for \"" + path + "\"");
    return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open \"" + path + "\" for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for \"" + path + "\"");
}

namespace {

void write_pnm(const std::string& path, const char* magic, int h, int w, int channels,
               const std::vector<uint8_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(h) * w * channels) {
        throw std::invalid_argument(std::string(magic) + ": pixel buffer size " +
                                    std::to_string(pixels.size()) + " does not match " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    std::string out;
    out += magic;
    out += '\n';
    out += std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    write_file(path, out);
}

void read_pnm(const std::string& path, const char* magic, int channels, int& h, int& w,
              std::vector<uint8_t>& pixels) {
    const std::string in = read_file(path);
    size_t at = 0;
    auto token = [&]() -> std::string {
        while (at < in.size() && (std::isspace(static_cast<unsigned char>(in[at])) || in[at] == '#')) {
            if (in[at] == '#') {
                while (at < in.size() && in[at] != '\n') ++at;
            } else {
                ++at;
            }
        }
        size_t start = at;
        while (at < in.size() && !std::isspace(static_cast<unsigned char>(in[at]))) ++at;
        if (start == at) throw std::runtime_error("\"" + path + "\": truncated header");
        return in.substr(start, at - start);
    };
    if (token() != magic) {
        throw std::runtime_error("\"" + path + "\": not a " + std::string(magic) + " file");
    }
    w = std::stoi(token());
    h = std::stoi(token());
    const int maxval = std::stoi(token());
    if (w <= 0 || h <= 0 || maxval != 255) {
        throw std::runtime_error("\"" + path + "\": unsupported dimensions or maxval");
    }
    ++at;  // single whitespace after maxval
    const size_t need = static_cast<size_t>(h) * w * channels;
    if (in.size() - at < need) {
        throw std::runtime_error("\"" + path + "\": truncated pixel data (" +
                                 std::to_string(in.size() - at) + " of " + std::to_string(need) +
                                 " bytes)");
    }
    if (in.size() - at > need) {
        throw std::runtime_error("\"" + path + "\": trailing bytes after pixel data");
    }
    pixels.assign(in.begin() + static_cast<std::ptrdiff_t>(at), in.end());
}

}  // namespace

void write_p6(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb) {
    write_pnm(path, "P6", h, w, 3, rgb);
}

void read_p6(const std::string& path, int& h, int& w, std::vector<uint8_t>& rgb) {
    read_pnm(path, "P6", 3, h, w, rgb);
}

void write_p5(const std::string& path, int h, int w, const std::vector<uint8_t>& gray) {
    write_pnm(path, "P5", h, w, 1, gray);
}

void read_p5(const std::string& path, int& h, int& w, std::vector<uint8_t>& gray) {
    read_pnm(path, "P5", 1, h, w, gray);
}

void write_f64(const std::string& path, const std::vector<double>& values) {
    std::string out;
    out.reserve(values.size() * 8);
    for (double d : values) {
        uint64_t bits;
        std::memcpy(&bits, &d, 8);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    write_file(path, out);
}

std::vector<double> read_f64(const std::string& path, size_t expect_count) {
    const std::string in = read_file(path);
    if (in.size() != expect_count * 8) {
        throw std::runtime_error("\"" + path + "\": expected " + std::to_string(expect_count * 8) +
                                 " bytes, found " + std::to_string(in.size()));
    }
    std::vector<double> values(expect_count);
    for (size_t k = 0; k < expect_count; ++k) {
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<uint64_t>(static_cast<uint8_t>(in[8 * k + i])) << (8 * i);
        }
        std::memcpy(&values[k], &bits, 8);
    }
    return values;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : bytes) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace wsol
