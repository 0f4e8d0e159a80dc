#include "attrvit/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "attrvit/errors.hpp"

namespace attrvit {

namespace {

// Head-averaged attention of one layer, mixed with identity and
// row-renormalized.
std::vector<scalar> mixed_layer(const Tensor& attn) {
    const int64_t heads = attn.dim(0), t = attn.dim(1);
    std::vector<scalar> a(static_cast<size_t>(t * t), 0);
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t i = 0; i < t * t; ++i)
            a[static_cast<size_t>(i)] += attn.at(h * t * t + i);
    const scalar inv_heads = scalar(1) / static_cast<scalar>(heads);
    for (auto& v : a) v *= inv_heads;
    for (int64_t i = 0; i < t; ++i) {
        scalar* row = a.data() + i * t;
        for (int64_t j = 0; j < t; ++j) row[j] *= scalar(0.5);
        row[i] += scalar(0.5);
        scalar s = 0;
        for (int64_t j = 0; j < t; ++j) s += row[j];
        for (int64_t j = 0; j < t; ++j) row[j] /= s;
    }
    return a;
}

Heatmap grid_from_class_row(const std::vector<scalar>& row, int64_t t, int64_t grid_h,
                            int64_t grid_w, int64_t layer_from, int64_t layer_to) {
    if (grid_h * grid_w != t - 1)
        throw DimensionError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                             " does not match " + std::to_string(t - 1) + " patch tokens");
    Heatmap hm;
    hm.grid_h = grid_h;
    hm.grid_w = grid_w;
    hm.layer_from = layer_from;
    hm.layer_to = layer_to;
    hm.values.assign(row.begin() + 1, row.end());  // drop the class-token column
    const auto [mn, mx] = std::minmax_element(hm.values.begin(), hm.values.end());
    const scalar lo = *mn, hi = *mx;
    if (hi - lo == scalar(0)) {
        std::fill(hm.values.begin(), hm.values.end(), scalar(0.5));
    } else {
        for (auto& v : hm.values) v = (v - lo) / (hi - lo);
    }
    return hm;
}

void check_trace(const EncoderTrace& trace) {
    if (trace.layer_attn.empty()) throw ContractError("attention trace is empty");
    for (const auto& a : trace.layer_attn)
        if (a.ndim() != 3 || a.dim(1) != a.dim(2))
            throw DimensionError("malformed attention tensor " + a.shape_str());
}

}  // namespace

Heatmap attention_rollout(const EncoderTrace& trace, int64_t grid_h, int64_t grid_w) {
    check_trace(trace);
    const int64_t t = trace.layer_attn.front().dim(1);

    // rollout = A_hat_L * ... * A_hat_1; accumulated left-to-right as
    // product = A_hat_l * product.
    std::vector<scalar> product(static_cast<size_t>(t * t), 0);
    for (int64_t i = 0; i < t; ++i) product[static_cast<size_t>(i * t + i)] = 1;
    std::vector<scalar> next(static_cast<size_t>(t * t));
    for (const auto& attn : trace.layer_attn) {
        if (attn.dim(1) != t) throw DimensionError("attention tensors disagree on token count");
        const std::vector<scalar> a = mixed_layer(attn);
        std::fill(next.begin(), next.end(), scalar(0));
        for (int64_t i = 0; i < t; ++i)
            for (int64_t k = 0; k < t; ++k) {
                const scalar av = a[static_cast<size_t>(i * t + k)];
                for (int64_t j = 0; j < t; ++j)
                    next[static_cast<size_t>(i * t + j)] += av * product[static_cast<size_t>(k * t + j)];
            }
        product.swap(next);
    }
    const std::vector<scalar> class_row(product.begin(), product.begin() + t);
    return grid_from_class_row(class_row, t, grid_h, grid_w, 0,
                               static_cast<int64_t>(trace.layer_attn.size()) - 1);
}

Heatmap last_layer_attention(const EncoderTrace& trace, int64_t grid_h, int64_t grid_w) {
    check_trace(trace);
    const Tensor& attn = trace.layer_attn.back();
    const int64_t t = attn.dim(1);
    const std::vector<scalar> a = mixed_layer(attn);
    const std::vector<scalar> class_row(a.begin(), a.begin() + t);
    const int64_t last = static_cast<int64_t>(trace.layer_attn.size()) - 1;
    return grid_from_class_row(class_row, t, grid_h, grid_w, last, last);
}

void export_heatmap(const Heatmap& hm, int64_t image_h, int64_t image_w,
                    const std::filesystem::path& path) {
    if (hm.grid_h <= 0 || hm.grid_w <= 0 || image_h % hm.grid_h != 0 || image_w % hm.grid_w != 0)
        throw DimensionError("image extents must be multiples of the heatmap grid");
    const int64_t sy = image_h / hm.grid_h, sx = image_w / hm.grid_w;
    PnmImage img;
    img.width = image_w;
    img.height = image_h;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(image_h * image_w));
    for (int64_t y = 0; y < image_h; ++y)
        for (int64_t x = 0; x < image_w; ++x) {
            const scalar v = hm.at(y / sy, x / sx);
            img.pixels[static_cast<size_t>(y * image_w + x)] =
                static_cast<uint8_t>(std::lround(std::clamp(v, scalar(0), scalar(1)) * scalar(255)));
        }
    write_pnm(path, img);
}

void export_overlay(const Heatmap& hm, const PnmImage& image, const std::filesystem::path& path) {
    if (image.channels != 3) throw DimensionError("overlay needs a 3-channel image");
    if (image.height % hm.grid_h != 0 || image.width % hm.grid_w != 0)
        throw DimensionError("image extents must be multiples of the heatmap grid");
    const int64_t sy = image.height / hm.grid_h, sx = image.width / hm.grid_w;
    PnmImage out;
    out.width = image.width;
    out.height = image.height;
    out.channels = 3;
    out.pixels.resize(image.pixels.size());
    for (int64_t y = 0; y < image.height; ++y)
        for (int64_t x = 0; x < image.width; ++x) {
            const scalar heat = std::clamp(hm.at(y / sy, x / sx), scalar(0), scalar(1));
            const size_t base = static_cast<size_t>((y * image.width + x) * 3);
            // red ramp: (heat, 0, 0)
            const scalar r = scalar(0.5) * image.pixels[base] + scalar(0.5) * heat * scalar(255);
            const scalar g = scalar(0.5) * image.pixels[base + 1];
            const scalar b = scalar(0.5) * image.pixels[base + 2];
            out.pixels[base] = static_cast<uint8_t>(std::lround(r));
            out.pixels[base + 1] = static_cast<uint8_t>(std::lround(g));
            out.pixels[base + 2] = static_cast<uint8_t>(std::lround(b));
        }
    write_pnm(path, out);
}

}  // namespace attrvit
