#include "attrvit/vit.hpp"

#include <cmath>
#include <string>

namespace attrvit {

void ModelConfig::validate() const {
    if (image_h <= 0 || image_w <= 0 || channels <= 0 || patch <= 0)
        throw ConfigError("image extents and patch size must be positive");
    if (image_h % patch != 0 || image_w % patch != 0)
        throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                          " is not divisible by patch size " + std::to_string(patch));
    if (embed_dim <= 0 || heads <= 0 || mlp_width <= 0 || attributes <= 0)
        throw ConfigError("embed_dim, heads, mlp_width and attributes must be positive");
    if (layers < 0) throw ConfigError("layer count must be non-negative");
    if (embed_dim % heads != 0)
        throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                          " is not divisible by head count " + std::to_string(heads));
}

ModelConfig ModelConfig::vit_large(int64_t attributes) {
    ModelConfig cfg;
    cfg.image_h = 224;
    cfg.image_w = 224;
    cfg.channels = 3;
    cfg.patch = 16;
    cfg.embed_dim = 1024;
    cfg.layers = 24;
    cfg.heads = 16;
    cfg.mlp_width = 4096;
    cfg.attributes = attributes;
    return cfg;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> VitWeights::shape_table(
    const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.embed_dim, m = cfg.attributes, mlp = cfg.mlp_width;
    std::vector<std::pair<std::string, std::vector<int64_t>>> t;
    t.emplace_back("patch_proj.w", std::vector<int64_t>{cfg.patch_dim(), d});
    t.emplace_back("patch_proj.b", std::vector<int64_t>{d});
    t.emplace_back("class_token", std::vector<int64_t>{1, d});
    t.emplace_back("pos_embed", std::vector<int64_t>{cfg.seq_len(), d});
    for (int64_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        t.emplace_back(p + "norm1.g", std::vector<int64_t>{d});
        t.emplace_back(p + "norm1.b", std::vector<int64_t>{d});
        t.emplace_back(p + "attn.wq", std::vector<int64_t>{d, d});
        t.emplace_back(p + "attn.bq", std::vector<int64_t>{d});
        t.emplace_back(p + "attn.wk", std::vector<int64_t>{d, d});
        t.emplace_back(p + "attn.bk", std::vector<int64_t>{d});
        t.emplace_back(p + "attn.wv", std::vector<int64_t>{d, d});
        t.emplace_back(p + "attn.bv", std::vector<int64_t>{d});
        t.emplace_back(p + "attn.wo", std::vector<int64_t>{d, d});
        t.emplace_back(p + "attn.bo", std::vector<int64_t>{d});
        t.emplace_back(p + "norm2.g", std::vector<int64_t>{d});
        t.emplace_back(p + "norm2.b", std::vector<int64_t>{d});
        t.emplace_back(p + "mlp.in.w", std::vector<int64_t>{d, mlp});
        t.emplace_back(p + "mlp.in.b", std::vector<int64_t>{mlp});
        t.emplace_back(p + "mlp.out.w", std::vector<int64_t>{mlp, d});
        t.emplace_back(p + "mlp.out.b", std::vector<int64_t>{d});
    }
    t.emplace_back("final_norm.g", std::vector<int64_t>{d});
    t.emplace_back("final_norm.b", std::vector<int64_t>{d});
    t.emplace_back("head.w", std::vector<int64_t>{d, m});
    t.emplace_back("head.b", std::vector<int64_t>{m});
    return t;
}

int64_t VitWeights::parameter_count(const ModelConfig& cfg) {
    int64_t total = 0;
    for (const auto& [name, shape] : shape_table(cfg)) {
        int64_t n = 1;
        for (int64_t e : shape) n *= e;
        total += n;
    }
    return total;
}

VitWeights VitWeights::zeros(const ModelConfig& cfg) {
    cfg.validate();
    VitWeights w;
    w.config = cfg;
    const int64_t d = cfg.embed_dim;
    w.patch_proj_w = Tensor({cfg.patch_dim(), d});
    w.patch_proj_b = Tensor({d});
    w.class_token = Tensor({1, d});
    w.pos_embed = Tensor({cfg.seq_len(), d});
    w.blocks.resize(static_cast<size_t>(cfg.layers));
    for (auto& b : w.blocks) {
        b.norm1_g = Tensor({d});
        b.norm1_b = Tensor({d});
        b.wq = Tensor({d, d});
        b.bq = Tensor({d});
        b.wk = Tensor({d, d});
        b.bk = Tensor({d});
        b.wv = Tensor({d, d});
        b.bv = Tensor({d});
        b.wo = Tensor({d, d});
        b.bo = Tensor({d});
        b.norm2_g = Tensor({d});
        b.norm2_b = Tensor({d});
        b.mlp_in_w = Tensor({d, cfg.mlp_width});
        b.mlp_in_b = Tensor({cfg.mlp_width});
        b.mlp_out_w = Tensor({cfg.mlp_width, d});
        b.mlp_out_b = Tensor({d});
    }
    w.final_norm_g = Tensor({d});
    w.final_norm_b = Tensor({d});
    w.head_w = Tensor({d, cfg.attributes});
    w.head_b = Tensor({cfg.attributes});
    return w;
}

namespace {

void fill_trunc_normal(Tensor& t, Rng& rng, double stddev) {
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i) t.at(i) = static_cast<scalar>(rng.truncated_normal(stddev));
}

void fill_ones(Tensor& t) {
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i) t.at(i) = scalar(1);
}

}  // namespace

VitWeights VitWeights::init(const ModelConfig& cfg, Rng& rng) {
    VitWeights w = zeros(cfg);
    constexpr double kStd = 0.02;
    fill_trunc_normal(w.patch_proj_w, rng, kStd);
    fill_trunc_normal(w.class_token, rng, kStd);
    fill_trunc_normal(w.pos_embed, rng, kStd);
    for (auto& b : w.blocks) {
        fill_ones(b.norm1_g);
        fill_trunc_normal(b.wq, rng, kStd);
        fill_trunc_normal(b.wk, rng, kStd);
        fill_trunc_normal(b.wv, rng, kStd);
        fill_trunc_normal(b.wo, rng, kStd);
        fill_ones(b.norm2_g);
        fill_trunc_normal(b.mlp_in_w, rng, kStd);
        fill_trunc_normal(b.mlp_out_w, rng, kStd);
    }
    fill_ones(w.final_norm_g);
    fill_trunc_normal(w.head_w, rng, kStd);
    return w;
}

std::vector<std::pair<std::string, Tensor*>> VitWeights::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("patch_proj.w", &patch_proj_w);
    out.emplace_back("patch_proj.b", &patch_proj_b);
    out.emplace_back("class_token", &class_token);
    out.emplace_back("pos_embed", &pos_embed);
    for (size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto& b = blocks[l];
        out.emplace_back(p + "norm1.g", &b.norm1_g);
        out.emplace_back(p + "norm1.b", &b.norm1_b);
        out.emplace_back(p + "attn.wq", &b.wq);
        out.emplace_back(p + "attn.bq", &b.bq);
        out.emplace_back(p + "attn.wk", &b.wk);
        out.emplace_back(p + "attn.bk", &b.bk);
        out.emplace_back(p + "attn.wv", &b.wv);
        out.emplace_back(p + "attn.bv", &b.bv);
        out.emplace_back(p + "attn.wo", &b.wo);
        out.emplace_back(p + "attn.bo", &b.bo);
        out.emplace_back(p + "norm2.g", &b.norm2_g);
        out.emplace_back(p + "norm2.b", &b.norm2_b);
        out.emplace_back(p + "mlp.in.w", &b.mlp_in_w);
        out.emplace_back(p + "mlp.in.b", &b.mlp_in_b);
        out.emplace_back(p + "mlp.out.w", &b.mlp_out_w);
        out.emplace_back(p + "mlp.out.b", &b.mlp_out_b);
    }
    out.emplace_back("final_norm.g", &final_norm_g);
    out.emplace_back("final_norm.b", &final_norm_b);
    out.emplace_back("head.w", &head_w);
    out.emplace_back("head.b", &head_b);
    return out;
}

int64_t VitWeights::parameter_count() const {
    int64_t total = patch_proj_w.size() + patch_proj_b.size() + class_token.size() + pos_embed.size();
    for (const auto& b : blocks) {
        total += b.norm1_g.size() + b.norm1_b.size();
        total += b.wq.size() + b.bq.size() + b.wk.size() + b.bk.size() + b.wv.size() + b.bv.size();
        total += b.wo.size() + b.bo.size();
        total += b.norm2_g.size() + b.norm2_b.size();
        total += b.mlp_in_w.size() + b.mlp_in_b.size() + b.mlp_out_w.size() + b.mlp_out_b.size();
    }
    total += final_norm_g.size() + final_norm_b.size() + head_w.size() + head_b.size();
    return total;
}

void VitWeights::ensure_grads() {
    for (auto& [name, t] : named_parameters()) t->ensure_grad();
}

void VitWeights::zero_grads() {
    for (auto& [name, t] : named_parameters()) t->zero_grad();
}

std::array<int64_t, 4> EncoderTrace::shape_for(const ModelConfig& cfg) {
    return {cfg.layers, cfg.heads, cfg.seq_len(), cfg.seq_len()};
}

scalar EncoderTrace::max_row_sum_error() const {
    scalar worst = 0;
    for (const auto& a : layer_attn) {
        const int64_t heads = a.dim(0), t = a.dim(1);
        for (int64_t h = 0; h < heads; ++h) {
            for (int64_t i = 0; i < t; ++i) {
                scalar s = 0;
                for (int64_t j = 0; j < t; ++j) s += a.at((h * t + i) * t + j);
                worst = std::max(worst, std::fabs(s - scalar(1)));
            }
        }
    }
    return worst;
}

Tensor patchify(const Tensor& image, int64_t patch) {
    if (image.ndim() != 3)
        throw DimensionError("patchify expects an H x W x C image, got " + image.shape_str());
    const int64_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch <= 0 || h % patch != 0 || w % patch != 0)
        throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by patch size " + std::to_string(patch));
    const int64_t gw = w / patch, gh = h / patch;
    const int64_t n = gh * gw, pd = patch * patch * c;
    Tensor out({n, pd});
    const scalar* src = image.data();
    scalar* dst = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t py = i / gw, px = i % gw;
        scalar* row = dst + i * pd;
        int64_t k = 0;
        for (int64_t y = 0; y < patch; ++y) {
            const scalar* line = src + ((py * patch + y) * w + px * patch) * c;
            for (int64_t x = 0; x < patch * c; ++x) row[k++] = line[x];
        }
    }
    return out;
}

Tensor unpatchify(const Tensor& patches, int64_t image_h, int64_t image_w, int64_t channels,
                  int64_t patch) {
    if (patches.ndim() != 2) throw DimensionError("unpatchify expects a 2-D patch matrix");
    const int64_t gw = image_w / patch, gh = image_h / patch;
    const int64_t n = gh * gw, pd = patch * patch * channels;
    if (patches.rows() != n || patches.cols() != pd)
        throw DimensionError("patch matrix " + patches.shape_str() + " does not match geometry");
    Tensor out({image_h, image_w, channels});
    scalar* dst = out.data();
    const scalar* src = patches.data();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t py = i / gw, px = i % gw;
        const scalar* row = src + i * pd;
        int64_t k = 0;
        for (int64_t y = 0; y < patch; ++y) {
            scalar* line = dst + ((py * patch + y) * image_w + px * patch) * channels;
            for (int64_t x = 0; x < patch * channels; ++x) line[x] = row[k++];
        }
    }
    return out;
}

Tensor embed_sequence(const Tensor& patches, const VitWeights& w, Tape* tape) {
    if (patches.ndim() != 2 || patches.cols() != w.config.patch_dim())
        throw DimensionError("patch matrix " + patches.shape_str() + " does not match patch_dim " +
                             std::to_string(w.config.patch_dim()));
    if (patches.rows() != w.config.patch_count())
        throw DimensionError("expected " + std::to_string(w.config.patch_count()) + " patches, got " +
                             std::to_string(patches.rows()));
    Tensor proj = add_row_bias(matmul(patches, w.patch_proj_w, tape), w.patch_proj_b, tape);
    Tensor seq = concat_rows({w.class_token, proj}, tape);
    return add(seq, w.pos_embed, tape);
}

MhaResult multi_head_attention(const Tensor& x, const LayerWeights& lw, int64_t heads, Tape* tape) {
    const int64_t t = x.rows(), d = x.cols();
    if (d % heads != 0) throw DimensionError("width not divisible by head count");
    const int64_t dk = d / heads;
    const scalar inv_sqrt_dk = scalar(1) / std::sqrt(static_cast<scalar>(dk));

    Tensor q = add_row_bias(matmul(x, lw.wq, tape), lw.bq, tape);
    Tensor k = add_row_bias(matmul(x, lw.wk, tape), lw.bk, tape);
    Tensor v = add_row_bias(matmul(x, lw.wv, tape), lw.bv, tape);

    Tensor attn({heads, t, t});
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, (h + 1) * dk, tape);
        Tensor kh = slice_cols(k, h * dk, (h + 1) * dk, tape);
        Tensor vh = slice_cols(v, h * dk, (h + 1) * dk, tape);
        Tensor scores = scale(matmul(qh, transpose(kh, tape), tape), inv_sqrt_dk, tape);
        Tensor probs = softmax_rows(scores, tape);
        std::copy(probs.data(), probs.data() + t * t, attn.data() + h * t * t);
        head_outs.push_back(matmul(probs, vh, tape));
    }
    Tensor merged = concat_cols(head_outs, tape);
    Tensor out = add_row_bias(matmul(merged, lw.wo, tape), lw.bo, tape);
    return {out, attn};
}

Tensor encoder_block(const Tensor& x, const LayerWeights& lw, int64_t heads, Tape* tape,
                     Tensor* attn_out) {
    Tensor n1 = layer_norm(x, lw.norm1_g, lw.norm1_b, kLayerNormEps, tape);
    MhaResult mha = multi_head_attention(n1, lw, heads, tape);
    if (attn_out) *attn_out = mha.attn;
    Tensor z = add(mha.out, x, tape);
    Tensor n2 = layer_norm(z, lw.norm2_g, lw.norm2_b, kLayerNormEps, tape);
    Tensor hidden = gelu(add_row_bias(matmul(n2, lw.mlp_in_w, tape), lw.mlp_in_b, tape), tape);
    Tensor m = add_row_bias(matmul(hidden, lw.mlp_out_w, tape), lw.mlp_out_b, tape);
    return add(m, z, tape);
}

EncodeResult encode(const Tensor& image, const VitWeights& w, Tape* tape) {
    const ModelConfig& cfg = w.config;
    if (image.ndim() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w ||
        image.dim(2) != cfg.channels)
        throw DimensionError("image " + image.shape_str() + " does not match configured geometry");

    Tensor z = embed_sequence(patchify(image, cfg.patch), w, tape);
    EncoderTrace trace;
    trace.layer_attn.reserve(w.blocks.size());
    for (const auto& block : w.blocks) {
        Tensor attn;
        z = encoder_block(z, block, cfg.heads, tape, &attn);
        trace.layer_attn.push_back(std::move(attn));
    }
    trace.tokens = z.detached_copy();
    Tensor cls = take_row(z, 0, tape);
    Tensor repr = layer_norm(cls, w.final_norm_g, w.final_norm_b, kLayerNormEps, tape);
    return {reshape(repr, {cfg.embed_dim}, tape), std::move(trace)};
}

Tensor predict_attributes(const Tensor& image, const VitWeights& w, Tape* tape) {
    EncodeResult enc = encode(image, w, tape);
    Tensor row = reshape(enc.repr, {1, w.config.embed_dim}, tape);
    Tensor out = add_row_bias(matmul(row, w.head_w, tape), w.head_b, tape);
    return reshape(out, {w.config.attributes}, tape);
}

}  // namespace attrvit
