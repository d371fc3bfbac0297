#pragma once

#include <cctype>
#include <fstream>
#include <string>

#include "ssb/tensor.hpp"

// Binary netpbm I/O. PPM (P6) for color, PGM (P5) for saliency maps.
// Only maxval 255 is handled.

namespace ssb {

namespace detail {

inline int pnm_token(std::istream& is, const std::string& path) {
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    if (c == EOF || !std::isdigit(c)) throw data_error("'" + path + "': malformed netpbm header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = is.get();
    }
    return v;
}

}  // namespace detail

// [H,W,3] floats in [0,1]
inline Tensor<float> read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open '" + path + "'");
    char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
    if (m0 != 'P' || m1 != '6') throw data_error("'" + path + "' is not a binary PPM (P6)");
    const int w = detail::pnm_token(is, path);
    const int h = detail::pnm_token(is, path);
    const int maxval = detail::pnm_token(is, path);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw data_error("'" + path + "': unsupported PPM geometry or maxval");
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw data_error("'" + path + "': truncated pixel data");
    Tensor<float> img({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3});
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<float>(buf[i]) / 255.0f;
    return img;
}

namespace detail {

inline unsigned char to_byte(float v) {
    float s = v * 255.0f + 0.5f;
    if (s < 0.0f) s = 0.0f;
    if (s > 255.0f) s = 255.0f;
    return static_cast<unsigned char>(s);
}

}  // namespace detail

inline void write_ppm(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.dim(2) != 3) throw shape_error("write_ppm expects H,W,3");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open '" + path + "' for writing");
    os << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    for (float v : img.data) os.put(static_cast<char>(detail::to_byte(v)));
    if (!os) throw data_error("write failed for '" + path + "'");
}

inline void write_pgm(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 2) throw shape_error("write_pgm expects H,W");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open '" + path + "' for writing");
    os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    for (float v : img.data) os.put(static_cast<char>(detail::to_byte(v)));
    if (!os) throw data_error("write failed for '" + path + "'");
}

}  // namespace ssb
