#include "attrvit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "attrvit/errors.hpp"
#include "attrvit/rng.hpp"

namespace attrvit {

using nlohmann::json;

namespace {

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string() + ": cannot open");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return j;
}

std::vector<SampleRef> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string() + ": cannot open manifest");
    std::vector<SampleRef> out;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size())
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 'path,class_id'");
        SampleRef ref;
        ref.path = line.substr(0, comma);
        try {
            size_t pos = 0;
            ref.class_id = std::stoll(line.substr(comma + 1), &pos);
            if (pos != line.size() - comma - 1) throw std::invalid_argument(line);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad class id");
        }
        out.push_back(std::move(ref));
    }
    return out;
}

void check_manifest_classes(const DatasetBundle& b, const std::vector<SampleRef>& refs,
                            const std::string& file, bool train_split) {
    for (size_t i = 0; i < refs.size(); ++i) {
        const ClassInfo* ci = b.find_class(refs[i].class_id);
        if (!ci)
            throw FormatError(file + ":" + std::to_string(i + 1) + ": unknown class id " +
                              std::to_string(refs[i].class_id));
        if (train_split && !ci->seen)
            throw ProtocolError(file + ":" + std::to_string(i + 1) + ": unseen class " +
                                std::to_string(refs[i].class_id) +
                                " in train manifest (inductive violation)");
        if (!std::filesystem::exists(b.root / refs[i].path))
            throw FormatError(file + ":" + std::to_string(i + 1) + ": missing image " +
                              refs[i].path);
    }
}

}  // namespace

const ClassInfo* DatasetBundle::find_class(int64_t id) const {
    auto it = std::lower_bound(classes.begin(), classes.end(), id,
                               [](const ClassInfo& c, int64_t v) { return c.id < v; });
    if (it == classes.end() || it->id != id) return nullptr;
    return &*it;
}

bool DatasetBundle::is_seen(int64_t id) const {
    const ClassInfo* ci = find_class(id);
    if (!ci) throw ContractError("unknown class id " + std::to_string(id));
    return ci->seen;
}

Tensor DatasetBundle::attribute_vector(int64_t class_id) const {
    const ClassInfo* ci = find_class(class_id);
    if (!ci) throw ContractError("unknown class id " + std::to_string(class_id));
    const scalar* row = attributes.data() + ci->attr_row * attr_count;
    return Tensor({attr_count}, std::vector<scalar>(row, row + attr_count));
}

DatasetBundle load_dataset(const std::filesystem::path& root) {
    const auto json_path = root / "dataset.json";
    const json j = load_json(json_path);
    const std::string where = json_path.string();

    DatasetBundle b;
    b.root = root;
    try {
        b.name = j.at("name").get<std::string>();
        b.image_h = j.at("H").get<int64_t>();
        b.image_w = j.at("W").get<int64_t>();
        b.channels = j.at("C").get<int64_t>();
        b.attr_count = j.at("M").get<int64_t>();
        const json& n = j.at("normalization");
        b.norm.mean = n.at("mean").get<std::vector<scalar>>();
        b.norm.std = n.at("std").get<std::vector<scalar>>();
        for (const json& c : j.at("classes")) {
            ClassInfo ci;
            ci.id = c.at("id").get<int64_t>();
            ci.name = c.at("name").get<std::string>();
            ci.seen = c.at("seen").get<bool>();
            ci.attr_row = c.at("attr_offset").get<int64_t>();
            b.classes.push_back(std::move(ci));
        }
    } catch (const json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }

    if (b.image_h <= 0 || b.image_w <= 0 || b.channels <= 0 || b.attr_count <= 0)
        throw FormatError(where + ": H, W, C and M must be positive");
    if (static_cast<int64_t>(b.norm.mean.size()) != b.channels ||
        static_cast<int64_t>(b.norm.std.size()) != b.channels)
        throw FormatError(where + ": normalization mean/std must have C entries");
    for (scalar s : b.norm.std)
        if (s == scalar(0)) throw FormatError(where + ": zero normalization std");
    if (b.classes.empty()) throw FormatError(where + ": no classes");

    std::sort(b.classes.begin(), b.classes.end(),
              [](const ClassInfo& a, const ClassInfo& c) { return a.id < c.id; });
    std::set<int64_t> ids, rows;
    for (const auto& c : b.classes) {
        if (!ids.insert(c.id).second)
            throw FormatError(where + ": duplicate class id " + std::to_string(c.id));
        if (c.attr_row < 0 || c.attr_row >= static_cast<int64_t>(b.classes.size()) ||
            !rows.insert(c.attr_row).second)
            throw FormatError(where + ": bad attr_offset for class " + std::to_string(c.id));
    }

    // attributes.f32: little-endian float32, classes x M
    const auto attr_path = root / "attributes.f32";
    std::ifstream attr_in(attr_path, std::ios::binary);
    if (!attr_in) throw FormatError(attr_path.string() + ": cannot open");
    const size_t expect = b.classes.size() * static_cast<size_t>(b.attr_count);
    std::vector<float> raw(expect);
    attr_in.read(reinterpret_cast<char*>(raw.data()),
                 static_cast<std::streamsize>(expect * sizeof(float)));
    if (static_cast<size_t>(attr_in.gcount()) != expect * sizeof(float))
        throw FormatError(attr_path.string() + ": expected " + std::to_string(expect) +
                          " float32 values");
    if (attr_in.peek() != EOF)
        throw FormatError(attr_path.string() + ": trailing bytes after attribute matrix");
    b.attributes.assign(raw.begin(), raw.end());
    for (size_t i = 0; i < b.attributes.size(); ++i)
        if (!std::isfinite(b.attributes[i]))
            throw FormatError(attr_path.string() + ": non-finite attribute at index " +
                              std::to_string(i));

    // Manifests.
    std::string train_rel, val_rel, test_rel;
    try {
        const json& m = j.at("manifests");
        train_rel = m.at("train").get<std::string>();
        val_rel = m.at("val").get<std::string>();
        test_rel = m.at("test").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
    b.train = load_manifest(root / train_rel);
    b.val = load_manifest(root / val_rel);
    b.test = load_manifest(root / test_rel);
    check_manifest_classes(b, b.train, (root / train_rel).string(), true);
    check_manifest_classes(b, b.val, (root / val_rel).string(), false);
    check_manifest_classes(b, b.test, (root / test_rel).string(), false);

    if (b.test.empty()) throw ProtocolError((root / test_rel).string() + ": empty test manifest");
    bool test_seen = false, test_unseen = false;
    for (const auto& ref : b.test) (b.is_seen(ref.class_id) ? test_seen : test_unseen) = true;
    if (!test_seen || !test_unseen)
        throw ProtocolError((root / test_rel).string() +
                            ": test manifest must contain both seen- and unseen-class samples");
    return b;
}

Tensor normalize_pixels(const PnmImage& img, const Normalization& norm) {
    if (static_cast<int64_t>(norm.mean.size()) != img.channels ||
        static_cast<int64_t>(norm.std.size()) != img.channels)
        throw DimensionError("normalization spec does not match channel count");
    Tensor out({img.height, img.width, img.channels});
    const int64_t n = img.height * img.width;
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < img.channels; ++c) {
            const scalar v = static_cast<scalar>(img.pixels[i * img.channels + c]) / scalar(255);
            out.at(i * img.channels + c) = (v - norm.mean[c]) / norm.std[c];
        }
    }
    return out;
}

Tensor denormalize(const Tensor& t, const Normalization& norm) {
    if (t.ndim() != 3) throw DimensionError("denormalize expects an H x W x C tensor");
    const int64_t ch = t.dim(2);
    if (static_cast<int64_t>(norm.mean.size()) != ch)
        throw DimensionError("normalization spec does not match channel count");
    Tensor out(t.shape());
    const int64_t n = t.size() / ch;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < ch; ++c)
            out.at(i * ch + c) = t.at(i * ch + c) * norm.std[c] + norm.mean[c];
    return out;
}

Tensor load_image(const std::filesystem::path& path, int64_t image_h, int64_t image_w,
                  int64_t channels, const Normalization& norm) {
    const PnmImage img = read_pnm(path);
    if (img.height != image_h || img.width != image_w || img.channels != channels)
        throw FormatError(path.string() + ": image is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + "x" + std::to_string(img.channels) +
                          ", bundle wants " + std::to_string(image_w) + "x" +
                          std::to_string(image_h) + "x" + std::to_string(channels));
    return normalize_pixels(img, norm);
}

Tensor load_image(const DatasetBundle& bundle, const SampleRef& ref) {
    return load_image(bundle.image_path(ref), bundle.image_h, bundle.image_w, bundle.channels,
                      bundle.norm);
}

void SyntheticSpec::validate() const {
    if (image_h <= 0 || image_w <= 0 || (channels != 1 && channels != 3))
        throw ConfigError("synthetic images must be positive-sized with 1 or 3 channels");
    if (patch <= 0 || image_h % patch != 0 || image_w % patch != 0)
        throw ConfigError("image size must be divisible by patch size");
    if (attr_count <= 0) throw ConfigError("attribute count must be positive");
    const int64_t cells = (image_h / patch) * (image_w / patch);
    if (cells < attr_count)
        throw ConfigError("patch grid has " + std::to_string(cells) + " cells, fewer than " +
                          std::to_string(attr_count) + " attributes");
    if (seen_classes < 1 || unseen_classes < 1)
        throw ConfigError("need at least one seen and one unseen class");
    if (train_per_class < 1 || val_per_class < 1 || test_per_class < 1)
        throw ConfigError("per-class sample counts must be at least 1");
    if (noise < 0) throw ConfigError("noise level must be non-negative");
}

namespace {

PnmImage render_sample(const SyntheticSpec& spec, const std::vector<scalar>& attrs, Rng& rng) {
    PnmImage img;
    img.width = spec.image_w;
    img.height = spec.image_h;
    img.channels = spec.channels;
    img.pixels.resize(static_cast<size_t>(spec.image_w * spec.image_h * spec.channels));
    const int64_t gw = spec.image_w / spec.patch;
    for (int64_t y = 0; y < spec.image_h; ++y) {
        for (int64_t x = 0; x < spec.image_w; ++x) {
            const int64_t cell = (y / spec.patch) * gw + (x / spec.patch);
            const double base =
                cell < spec.attr_count ? static_cast<double>(attrs[static_cast<size_t>(cell)]) : 0.5;
            for (int64_t c = 0; c < spec.channels; ++c) {
                double v = base;
                if (spec.noise > 0) v += spec.noise * rng.normal();
                v = std::clamp(v, 0.0, 1.0);
                img.pixels[static_cast<size_t>((y * spec.image_w + x) * spec.channels + c)] =
                    static_cast<uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

}  // namespace

DatasetBundle synth_generate(const SyntheticSpec& spec, const std::filesystem::path& out_root) {
    spec.validate();
    Rng rng(spec.seed);
    const int64_t num_classes = spec.seen_classes + spec.unseen_classes;

    // Per-class attribute vectors; unseen vectors must not repeat a seen one.
    std::vector<std::vector<scalar>> attrs(static_cast<size_t>(num_classes));
    for (int64_t c = 0; c < num_classes; ++c) {
        auto& v = attrs[static_cast<size_t>(c)];
        bool fresh = false;
        while (!fresh) {
            v.resize(static_cast<size_t>(spec.attr_count));
            for (auto& a : v) a = static_cast<scalar>(rng.uniform());
            fresh = true;
            if (c >= spec.seen_classes)
                for (int64_t s = 0; s < spec.seen_classes && fresh; ++s)
                    if (attrs[static_cast<size_t>(s)] == v) fresh = false;
        }
    }

    std::filesystem::create_directories(out_root / "images");

    std::ofstream attr_out(out_root / "attributes.f32", std::ios::binary);
    for (const auto& row : attrs)
        for (scalar a : row) {
            const float f = static_cast<float>(a);
            attr_out.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
    attr_out.close();

    std::ofstream train_csv(out_root / "train.csv");
    std::ofstream val_csv(out_root / "val.csv");
    std::ofstream test_csv(out_root / "test.csv");
    for (int64_t c = 0; c < num_classes; ++c) {
        const bool seen = c < spec.seen_classes;
        struct Split {
            const char* tag;
            int64_t count;
            std::ofstream* csv;
        };
        const Split splits[] = {{"train", seen ? spec.train_per_class : 0, &train_csv},
                                {"val", spec.val_per_class, &val_csv},
                                {"test", spec.test_per_class, &test_csv}};
        for (const auto& sp : splits) {
            for (int64_t i = 0; i < sp.count; ++i) {
                const std::string rel = "images/c" + std::to_string(c) + "_" + sp.tag +
                                        std::to_string(i) + ".ppm";
                write_pnm(out_root / rel, render_sample(spec, attrs[static_cast<size_t>(c)], rng));
                (*sp.csv) << rel << "," << c << "\n";
            }
        }
    }
    train_csv.close();
    val_csv.close();
    test_csv.close();

    json j;
    j["name"] = spec.name;
    j["H"] = spec.image_h;
    j["W"] = spec.image_w;
    j["C"] = spec.channels;
    j["M"] = spec.attr_count;
    j["normalization"] = {{"mean", std::vector<double>(static_cast<size_t>(spec.channels), 0.5)},
                          {"std", std::vector<double>(static_cast<size_t>(spec.channels), 0.5)}};
    j["classes"] = json::array();
    for (int64_t c = 0; c < num_classes; ++c) {
        j["classes"].push_back({{"id", c},
                                {"name", "class" + std::to_string(c)},
                                {"seen", c < spec.seen_classes},
                                {"attr_offset", c}});
    }
    j["manifests"] = {{"train", "train.csv"}, {"val", "val.csv"}, {"test", "test.csv"}};
    std::ofstream json_out(out_root / "dataset.json");
    json_out << j.dump(2) << "\n";
    json_out.close();

    return load_dataset(out_root);
}

}  // namespace attrvit
