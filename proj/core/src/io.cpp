#include "adaptvig/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adaptvig {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'G', 'T'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_avgt(const std::filesystem::path& file, const Tensor4& t) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_avgt: cannot open " + file.string());
    }
    out.write(kMagic, 4);
    put_u32(out, 4);
    const Shape4& s = t.shape();
    put_u32(out, static_cast<std::uint32_t>(s.n));
    put_u32(out, static_cast<std::uint32_t>(s.c));
    put_u32(out, static_cast<std::uint32_t>(s.h));
    put_u32(out, static_cast<std::uint32_t>(s.w));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t[i]);
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
        put_u32(out, bits);
    }
    if (!out) {
        throw std::runtime_error("write_avgt: write failed for " + file.string());
    }
}

Tensor4 read_avgt(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw std::runtime_error("read_avgt: cannot open " + file.string());
    }
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("read_avgt: bad magic in " + file.string());
    }
    const std::uint32_t rank = get_u32(in);
    if (rank != 4) {
        throw std::runtime_error("read_avgt: unsupported rank " + std::to_string(rank));
    }
    const std::uint32_t n = get_u32(in);
    const std::uint32_t c = get_u32(in);
    const std::uint32_t h = get_u32(in);
    const std::uint32_t w = get_u32(in);
    if (!in || n < 1 || c < 1 || h < 1 || w < 1) {
        throw std::runtime_error("read_avgt: invalid dims in " + file.string());
    }
    Tensor4 t(Shape4{static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
                     static_cast<int>(w)});
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const std::uint32_t bits = get_u32(in);
        t[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    if (!in) {
        throw std::runtime_error("read_avgt: truncated file " + file.string());
    }
    return t;
}

void write_pgm(const std::filesystem::path& file, const std::vector<double>& values, int h,
               int w) {
    if (static_cast<std::int64_t>(values.size()) != static_cast<std::int64_t>(h) * w) {
        throw std::invalid_argument("write_pgm: value count does not match h*w");
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_pgm: cannot open " + file.string());
    }
    out << "P5\n" << w << " " << h << "\n255\n";
    for (double v : values) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        const unsigned char px = static_cast<unsigned char>(std::lround(clamped * 255.0));
        out.write(reinterpret_cast<const char*>(&px), 1);
    }
    if (!out) {
        throw std::runtime_error("write_pgm: write failed for " + file.string());
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_text_file(const std::filesystem::path& file, const std::string& contents) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("write_text_file: cannot open " + file.string());
    }
    out << contents;
    if (!out) {
        throw std::runtime_error("write_text_file: write failed for " + file.string());
    }
}

}  // namespace adaptvig
