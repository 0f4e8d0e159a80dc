#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "attrvit/rng.hpp"
#include "attrvit/tensor.hpp"

namespace attrvit {

inline constexpr scalar kLayerNormEps = scalar(1e-5);

struct ModelConfig {
    int64_t image_h = 224;
    int64_t image_w = 224;
    int64_t channels = 3;
    int64_t patch = 16;
    int64_t embed_dim = 1024;  // D
    int64_t layers = 24;       // L
    int64_t heads = 16;
    int64_t mlp_width = 4096;
    int64_t attributes = 85;  // M

    void validate() const;

    int64_t patch_count() const { return (image_h / patch) * (image_w / patch); }  // N
    int64_t seq_len() const { return patch_count() + 1; }
    int64_t patch_dim() const { return patch * patch * channels; }  // P^2 * C
    int64_t head_dim() const { return embed_dim / heads; }
    int64_t grid_h() const { return image_h / patch; }
    int64_t grid_w() const { return image_w / patch; }

    // 224 input, 16 patch, 1024 wide, 24 layers, 16 heads, 4096 MLP.
    static ModelConfig vit_large(int64_t attributes);

    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Tensor norm1_g, norm1_b;
    Tensor wq, bq, wk, bk, wv, bv;
    Tensor wo, bo;
    Tensor norm2_g, norm2_b;
    Tensor mlp_in_w, mlp_in_b;
    Tensor mlp_out_w, mlp_out_b;
};

// All learnable state. Buffer names and iteration order are stable; the
// checkpoint format and the optimizer both rely on that.
struct VitWeights {
    ModelConfig config;
    Tensor patch_proj_w;  // patch_dim x D
    Tensor patch_proj_b;  // D
    Tensor class_token;   // 1 x D
    Tensor pos_embed;     // (N+1) x D
    std::vector<LayerWeights> blocks;
    Tensor final_norm_g, final_norm_b;
    Tensor head_w;  // D x M
    Tensor head_b;  // M

    // Truncated normal (std 0.02) projections and embeddings, zero biases,
    // unit norm gains.
    static VitWeights init(const ModelConfig& cfg, Rng& rng);
    // Allocates all buffers at zero (checkpoint loading fills them).
    static VitWeights zeros(const ModelConfig& cfg);

    // (name, shape) for every buffer, in serialization order.
    static std::vector<std::pair<std::string, std::vector<int64_t>>> shape_table(
        const ModelConfig& cfg);
    static int64_t parameter_count(const ModelConfig& cfg);

    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    int64_t parameter_count() const;
    void ensure_grads();
    void zero_grads();
};

// Per-layer attention probabilities (each L entry is heads x T x T) plus the
// final pre-norm token states. Detached from any tape.
struct EncoderTrace {
    std::vector<Tensor> layer_attn;
    Tensor tokens;  // T x D

    static std::array<int64_t, 4> shape_for(const ModelConfig& cfg);
    // Max deviation of any attention row sum from 1.
    scalar max_row_sum_error() const;
};

// Image (H x W x C) to patch matrix (N x P^2*C). Row i is patch
// (i / (W/P), i % (W/P)) flattened pixel-major, channel-minor. Pure data
// movement; gradients never flow to pixels.
Tensor patchify(const Tensor& image, int64_t patch);
// Inverse of patchify, for round-trip checks.
Tensor unpatchify(const Tensor& patches, int64_t image_h, int64_t image_w, int64_t channels,
                  int64_t patch);

// z0 = [class_token; patches * E + b] + E_pos
Tensor embed_sequence(const Tensor& patches, const VitWeights& w, Tape* tape = nullptr);

struct MhaResult {
    Tensor out;   // T x D
    Tensor attn;  // heads x T x T, detached
};
MhaResult multi_head_attention(const Tensor& x, const LayerWeights& lw, int64_t heads,
                               Tape* tape = nullptr);

// Pre-norm block: z' = MHA(Norm(x)) + x; out = MLP(Norm(z')) + z'.
Tensor encoder_block(const Tensor& x, const LayerWeights& lw, int64_t heads,
                     Tape* tape = nullptr, Tensor* attn_out = nullptr);

struct EncodeResult {
    Tensor repr;  // D, the final-normed class-token state
    EncoderTrace trace;
};
EncodeResult encode(const Tensor& image, const VitWeights& w, Tape* tape = nullptr);

// Attribute scores: head applied to the encoded representation.
Tensor predict_attributes(const Tensor& image, const VitWeights& w, Tape* tape = nullptr);

}  // namespace attrvit
