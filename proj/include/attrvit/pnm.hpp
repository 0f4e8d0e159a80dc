#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace attrvit {

// 8-bit binary PPM (P6, 3 channels) / PGM (P5, 1 channel).
struct PnmImage {
    int64_t width = 0;
    int64_t height = 0;
    int64_t channels = 1;
    std::vector<uint8_t> pixels;  // row-major, interleaved channels

    uint8_t at(int64_t y, int64_t x, int64_t c = 0) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& img);

}  // namespace attrvit
