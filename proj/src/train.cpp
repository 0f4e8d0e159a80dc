#include "attrvit/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "attrvit/errors.hpp"
#include "attrvit/rng.hpp"

namespace attrvit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and attribute formats are little-endian");

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (epochs < 1) throw ConfigError("epoch count must be at least 1");
    if (max_steps < 0 || checkpoint_interval < 0)
        throw ConfigError("max_steps and checkpoint_interval must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("adam eps must be positive");
}

AdamState AdamState::init(VitWeights& w) {
    AdamState st;
    for (auto& [name, t] : w.named_parameters()) {
        st.m.emplace_back(t->shape());
        st.v.emplace_back(t->shape());
    }
    return st;
}

void adam_update(scalar* param, const scalar* grad, scalar* m, scalar* v, int64_t n, int64_t t,
                 const TrainConfig& cfg) {
    const scalar corr1 = scalar(1) - std::pow(cfg.beta1, static_cast<scalar>(t));
    const scalar corr2 = scalar(1) - std::pow(cfg.beta2, static_cast<scalar>(t));
    for (int64_t i = 0; i < n; ++i) {
        const scalar g = grad[i];
        m[i] = cfg.beta1 * m[i] + (scalar(1) - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (scalar(1) - cfg.beta2) * g * g;
        const scalar mhat = m[i] / corr1;
        const scalar vhat = v[i] / corr2;
        param[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
}

void adam_step(VitWeights& w, AdamState& state, const TrainConfig& cfg) {
    auto params = w.named_parameters();
    if (params.size() != state.m.size())
        throw ContractError("adam state does not match parameter count");
    state.step += 1;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor* p = params[i].second;
        adam_update(p->data(), p->grad(), state.m[i].data(), state.v[i].data(), p->size(),
                    state.step, cfg);
    }
}

namespace {

constexpr char kMagic[8] = {'A', 'T', 'R', 'V', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& file) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in.gcount() != sizeof(T)) throw FormatError(file + ": truncated checkpoint");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& file) {
    const uint32_t len = read_pod<uint32_t>(in, file);
    if (len > 4096) throw FormatError(file + ": implausible name length");
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (static_cast<uint32_t>(in.gcount()) != len) throw FormatError(file + ": truncated checkpoint");
    return s;
}

void write_buffer(std::ostream& out, const std::string& name, const Tensor& t) {
    write_string(out, name);
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_pod<int64_t>(out, t.dim(i));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(scalar))));
}

void read_buffer_into(std::istream& in, const std::string& file, const std::string& name,
                      Tensor& t) {
    const uint32_t ndim = read_pod<uint32_t>(in, file);
    if (static_cast<int>(ndim) != t.ndim())
        throw FormatError(file + ": buffer '" + name + "' has rank " + std::to_string(ndim) +
                          ", expected " + std::to_string(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) {
        const int64_t d = read_pod<int64_t>(in, file);
        if (d != t.dim(i))
            throw FormatError(file + ": buffer '" + name + "' shape mismatch on axis " +
                              std::to_string(i));
    }
    const std::streamsize bytes = t.size() * static_cast<int64_t>(sizeof(scalar));
    in.read(reinterpret_cast<char*>(t.data()), bytes);
    if (in.gcount() != bytes) throw FormatError(file + ": truncated checkpoint");
}

ModelConfig read_config(std::istream& in, const std::string& file) {
    ModelConfig cfg;
    cfg.image_h = read_pod<int64_t>(in, file);
    cfg.image_w = read_pod<int64_t>(in, file);
    cfg.channels = read_pod<int64_t>(in, file);
    cfg.patch = read_pod<int64_t>(in, file);
    cfg.embed_dim = read_pod<int64_t>(in, file);
    cfg.layers = read_pod<int64_t>(in, file);
    cfg.heads = read_pod<int64_t>(in, file);
    cfg.mlp_width = read_pod<int64_t>(in, file);
    cfg.attributes = read_pod<int64_t>(in, file);
    return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint32_t>(out, static_cast<uint32_t>(sizeof(scalar)));
    const ModelConfig& c = ck.model;
    for (int64_t v : {c.image_h, c.image_w, c.channels, c.patch, c.embed_dim, c.layers, c.heads,
                      c.mlp_width, c.attributes})
        write_pod<int64_t>(out, v);
    write_pod<int64_t>(out, ck.adam.step);
    write_pod<uint64_t>(out, ck.rng_state);
    write_pod<int64_t>(out, ck.epoch);
    write_pod<uint64_t>(out, static_cast<uint64_t>(ck.epoch_order.size()));
    for (int64_t i : ck.epoch_order) write_pod<int64_t>(out, i);
    write_pod<int64_t>(out, ck.epoch_cursor);

    VitWeights& w = const_cast<VitWeights&>(ck.weights);
    auto params = w.named_parameters();
    write_pod<uint32_t>(out, static_cast<uint32_t>(3 * params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        write_buffer(out, params[i].first, *params[i].second);
        write_buffer(out, "adam.m." + params[i].first, ck.adam.m[i]);
        write_buffer(out, "adam.v." + params[i].first, ck.adam.v[i]);
    }
    if (!out) throw Error(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(file + ": cannot open");

    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError(file + ": not a checkpoint file");
    const uint32_t version = read_pod<uint32_t>(in, file);
    if (version != kVersion)
        throw FormatError(file + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t width = read_pod<uint32_t>(in, file);
    if (width != sizeof(scalar))
        throw FormatError(file + ": checkpoint scalar width is " + std::to_string(width) +
                          " bytes, this build uses " + std::to_string(sizeof(scalar)));

    Checkpoint ck;
    ck.model = read_config(in, file);
    ck.model.validate();
    ck.weights = VitWeights::zeros(ck.model);
    ck.adam.step = read_pod<int64_t>(in, file);
    ck.rng_state = read_pod<uint64_t>(in, file);
    ck.epoch = read_pod<int64_t>(in, file);
    const uint64_t order_len = read_pod<uint64_t>(in, file);
    if (order_len > (1ull << 40)) throw FormatError(file + ": implausible epoch order length");
    ck.epoch_order.resize(order_len);
    for (auto& v : ck.epoch_order) v = read_pod<int64_t>(in, file);
    ck.epoch_cursor = read_pod<int64_t>(in, file);

    auto params = ck.weights.named_parameters();
    ck.adam.m.reserve(params.size());
    ck.adam.v.reserve(params.size());
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : params) {
        by_name[name] = t;
        ck.adam.m.emplace_back(t->shape());
        ck.adam.v.emplace_back(t->shape());
        by_name["adam.m." + name] = &ck.adam.m.back();
        by_name["adam.v." + name] = &ck.adam.v.back();
    }

    const uint32_t count = read_pod<uint32_t>(in, file);
    if (count != 3 * params.size())
        throw FormatError(file + ": expected " + std::to_string(3 * params.size()) +
                          " buffers, found " + std::to_string(count));
    std::map<std::string, bool> filled;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = read_string(in, file);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError(file + ": unknown buffer '" + name + "'");
        if (filled[name]) throw FormatError(file + ": duplicate buffer '" + name + "'");
        read_buffer_into(in, file, name, *it->second);
        filled[name] = true;
    }
    return ck;
}

void write_loss_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << "step,epoch,loss\n";
    for (const auto& p : curve) out << p.step << "," << p.epoch << "," << p.loss << "\n";
    if (!out) throw Error(path.string() + ": write failed");
}

namespace {

void validate_inductive(const DatasetBundle& bundle) {
    if (bundle.train.empty()) throw ProtocolError("train split is empty");
    for (size_t i = 0; i < bundle.train.size(); ++i)
        if (!bundle.is_seen(bundle.train[i].class_id))
            throw ProtocolError("train manifest row " + std::to_string(i + 1) +
                                " references unseen class " +
                                std::to_string(bundle.train[i].class_id) +
                                " (inductive violation)");
}

void check_compat(const DatasetBundle& bundle, const ModelConfig& model) {
    model.validate();
    if (model.attributes != bundle.attr_count)
        throw ConfigError("model predicts " + std::to_string(model.attributes) +
                          " attributes but dataset has " + std::to_string(bundle.attr_count));
    if (model.image_h != bundle.image_h || model.image_w != bundle.image_w ||
        model.channels != bundle.channels)
        throw ConfigError("model geometry does not match dataset images");
}

FitResult run_training(const DatasetBundle& bundle, Checkpoint ck, const TrainConfig& cfg,
                       const FitHooks& hooks) {
    cfg.validate();
    check_compat(bundle, ck.model);
    validate_inductive(bundle);

    const int64_t n = static_cast<int64_t>(bundle.train.size());
    Rng rng(0);
    rng.set_state(ck.rng_state);
    ck.weights.ensure_grads();

    std::vector<Tensor> image_cache(static_cast<size_t>(n));
    std::vector<Tensor> target_cache(static_cast<size_t>(n));

    FitResult result;
    scalar epoch_loss_sum = 0;
    int64_t epoch_loss_count = 0;

    for (;;) {
        if (cfg.max_steps > 0 && ck.adam.step >= cfg.max_steps) break;
        if (ck.epoch_order.empty() || ck.epoch_cursor >= n) {
            if (!ck.epoch_order.empty()) {
                if (hooks.on_epoch)
                    hooks.on_epoch(ck.epoch, epoch_loss_count
                                                 ? epoch_loss_sum / static_cast<scalar>(epoch_loss_count)
                                                 : scalar(0));
                ck.epoch += 1;
                epoch_loss_sum = 0;
                epoch_loss_count = 0;
            }
            if (ck.epoch >= cfg.epochs) break;
            ck.epoch_order.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) ck.epoch_order[static_cast<size_t>(i)] = i;
            rng.shuffle(ck.epoch_order);
            ck.epoch_cursor = 0;
        }

        const int64_t batch_end = std::min<int64_t>(ck.epoch_cursor + cfg.batch_size, n);
        const int64_t batch_n = batch_end - ck.epoch_cursor;

        ck.weights.zero_grads();
        Tape tape;
        Tensor total;
        for (int64_t b = ck.epoch_cursor; b < batch_end; ++b) {
            const int64_t idx = ck.epoch_order[static_cast<size_t>(b)];
            const SampleRef& ref = bundle.train[static_cast<size_t>(idx)];
            if (!bundle.is_seen(ref.class_id))
                throw ProtocolError("unseen class in training batch (inductive violation)");
            if (hooks.on_sample) hooks.on_sample(ref);
            Tensor& img = image_cache[static_cast<size_t>(idx)];
            if (!img.defined()) img = load_image(bundle, ref);
            Tensor& target = target_cache[static_cast<size_t>(idx)];
            if (!target.defined()) target = bundle.attribute_vector(ref.class_id);
            Tensor pred = predict_attributes(img, ck.weights, &tape);
            Tensor sample_loss = mse(pred, target, &tape);
            total = total.defined() ? add(total, sample_loss, &tape) : sample_loss;
        }
        ck.epoch_cursor = batch_end;

        Tensor loss = scale(total, scalar(1) / static_cast<scalar>(batch_n), &tape);
        const scalar loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw Error("non-finite training loss at step " + std::to_string(ck.adam.step + 1));
        backward(loss, tape);
        tape.clear();
        adam_step(ck.weights, ck.adam, cfg);

        result.curve.push_back({ck.adam.step, ck.epoch, loss_value});
        epoch_loss_sum += loss_value;
        epoch_loss_count += 1;

        if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 &&
            ck.adam.step % cfg.checkpoint_interval == 0) {
            ck.rng_state = rng.state();
            save_checkpoint(ck, hooks.checkpoint_dir /
                                    ("ckpt-" + std::to_string(ck.adam.step) + ".ckpt"));
        }
    }

    ck.rng_state = rng.state();
    result.checkpoint = std::move(ck);
    return result;
}

}  // namespace

FitResult fit(const DatasetBundle& bundle, const ModelConfig& model, const TrainConfig& cfg,
              const FitHooks& hooks) {
    cfg.validate();
    check_compat(bundle, model);
    validate_inductive(bundle);

    Rng rng(cfg.seed);
    Checkpoint ck;
    ck.model = model;
    ck.weights = VitWeights::init(model, rng);
    ck.adam = AdamState::init(ck.weights);
    ck.rng_state = rng.state();
    return run_training(bundle, std::move(ck), cfg, hooks);
}

FitResult fit_resume(const DatasetBundle& bundle, Checkpoint ck, const TrainConfig& cfg,
                     const FitHooks& hooks) {
    return run_training(bundle, std::move(ck), cfg, hooks);
}

}  // namespace attrvit
