#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "contrec/util.hpp"

namespace contrec {

// Row-major grayscale raster with values in [0, 1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}

    double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    friend bool operator==(const Image&, const Image&) = default;
};

// Box-average downsampling by an integer factor (dimensions must divide).
inline Image downsample(const Image& img, std::size_t factor) {
    if (factor == 0 || img.width % factor || img.height % factor) {
        throw ConfigError("downsample: factor " + std::to_string(factor) + " does not divide " +
                          std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    Image out(img.width / factor, img.height / factor);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy);
            out.at(x, y) = s * inv;
        }
    return out;
}

// Bilinear resampling with pixel-center alignment and edge clamping.
inline Image upsample_bilinear(const Image& img, std::size_t width, std::size_t height) {
    Image out(width, height);
    const double sx = static_cast<double>(img.width) / static_cast<double>(width);
    const double sy = static_cast<double>(img.height) / static_cast<double>(height);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = img.at(x0, y0) * (1.0 - tx) + img.at(x1, y0) * tx;
            const double bot = img.at(x0, y1) * (1.0 - tx) + img.at(x1, y1) * tx;
            out.at(x, y) = top * (1.0 - ty) + bot * ty;
        }
    }
    return out;
}

// Binary PGM (P5), 8-bit.
inline std::string encode_pgm(const Image& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.pixels.size());
    for (double v : img.pixels) {
        const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    return out;
}

inline Image decode_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (token() != "P5") throw IoError("not a binary PGM");
    const std::size_t w = std::stoul(token());
    const std::size_t h = std::stoul(token());
    const int maxval = std::stoi(token());
    if (maxval != 255) throw IoError("only 8-bit PGM supported");
    ++pos;  // single whitespace before raster
    if (bytes.size() < pos + w * h) throw IoError("truncated PGM raster");
    Image img(w, h);
    for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    return img;
}

}  // namespace contrec
