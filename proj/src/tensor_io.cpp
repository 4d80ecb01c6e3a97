#include "dpdl/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "dpdl/errors.hpp"

namespace dpdl {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("TNSR: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Next whitespace-separated header token, skipping '#' comments.
std::string ppm_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw IoError("PPM: truncated header");
    return tok;
}

std::size_t ppm_number(std::istream& is) {
    const std::string tok = ppm_token(is);
    if (tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9)
        throw IoError("PPM: bad header field '" + tok + "'");
    return std::stoul(tok);
}

}  // namespace

void write_tnsr(std::ostream& os, const Tensor<float>& t) {
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw IoError("TNSR: write failed");
}

Tensor<float> read_tnsr(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("TNSR: bad magic");
    const std::uint32_t rank = get_u32(is);
    if (rank > 8) throw IoError("TNSR: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = get_u32(is);
    std::vector<float> data(numel(shape));
    for (auto& v : data) v = std::bit_cast<float>(get_u32(is));
    return Tensor<float>(std::move(shape), std::move(data));
}

void save_tnsr(const std::filesystem::path& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_tnsr(os, t);
}

Tensor<float> load_tnsr(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_tnsr(is);
}

void write_ppm(std::ostream& os, const Tensor<float>& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("PPM: expected 3 x H x W, got " + to_string(rgb.shape()));
    const std::size_t H = rgb.dim(1), W = rgb.dim(2);
    os << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(3 * W);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                row[3 * x + c] = static_cast<unsigned char>(std::lround(std::clamp(rgb.at(c, y, x), 0.0f, 1.0f) * 255.0f));
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("PPM: write failed");
}

Tensor<float> read_ppm(std::istream& is) {
    if (ppm_token(is) != "P6") throw IoError("PPM: only binary P6 is supported");
    const std::size_t W = ppm_number(is), H = ppm_number(is), maxval = ppm_number(is);
    if (maxval != 255) throw IoError("PPM: only maxval 255 is supported");
    if (W == 0 || H == 0) throw IoError("PPM: empty image");
    Tensor<float> out({3, H, W});
    std::vector<unsigned char> row(3 * W);
    for (std::size_t y = 0; y < H; ++y) {
        if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size())))
            throw IoError("PPM: truncated pixel data");
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(row[3 * x + c]) / 255.0f;
    }
    return out;
}

void save_ppm(const std::filesystem::path& path, const Tensor<float>& rgb) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_ppm(os, rgb);
}

Tensor<float> load_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_ppm(is);
}

}  // namespace dpdl
