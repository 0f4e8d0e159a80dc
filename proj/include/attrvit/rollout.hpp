#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "attrvit/pnm.hpp"
#include "attrvit/tensor.hpp"
#include "attrvit/vit.hpp"

namespace attrvit {

// Patch-grid attribution map, min-max normalized to [0,1]. A constant raw
// grid maps to all 0.5.
struct Heatmap {
    int64_t grid_h = 0, grid_w = 0;
    std::vector<scalar> values;  // grid_h x grid_w
    int64_t layer_from = 0, layer_to = 0;  // inclusive layer range used

    scalar at(int64_t y, int64_t x) const { return values[static_cast<size_t>(y * grid_w + x)]; }
};

// Cross-layer attribution: per layer, average attention over heads, mix
// with identity (0.5 A + 0.5 I), row-renormalize, multiply newest-first,
// then read the class-token row over the patch columns.
Heatmap attention_rollout(const EncoderTrace& trace, int64_t grid_h, int64_t grid_w);

// Raw last-layer alternative (head-averaged class-token row, no product).
Heatmap last_layer_attention(const EncoderTrace& trace, int64_t grid_h, int64_t grid_w);

// Nearest-neighbor upsample to image_h x image_w, written as 8-bit PGM.
void export_heatmap(const Heatmap& hm, int64_t image_h, int64_t image_w,
                    const std::filesystem::path& path);

// 0.5 * image + 0.5 * red-ramp heatmap, written as 8-bit PPM.
void export_overlay(const Heatmap& hm, const PnmImage& image, const std::filesystem::path& path);

}  // namespace attrvit
