#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "attrvit/pnm.hpp"
#include "attrvit/tensor.hpp"

namespace attrvit {

struct Normalization {
    std::vector<scalar> mean;  // per channel
    std::vector<scalar> std;
};

struct ClassInfo {
    int64_t id = 0;
    std::string name;
    bool seen = false;
    int64_t attr_row = 0;  // row in the attribute matrix
};

struct SampleRef {
    std::string path;  // relative to bundle root
    int64_t class_id = 0;
};

// Validated on-disk dataset: dataset.json + attributes.f32 + manifest CSVs
// + images/*.ppm. Training manifests may only reference seen classes; the
// test manifest must contain both seen- and unseen-class samples.
struct DatasetBundle {
    std::filesystem::path root;
    std::string name;
    int64_t image_h = 0, image_w = 0, channels = 0;
    int64_t attr_count = 0;  // M
    Normalization norm;
    std::vector<ClassInfo> classes;  // ascending id
    std::vector<scalar> attributes;  // classes.size() x M, indexed by attr_row
    std::vector<SampleRef> train, val, test;

    const ClassInfo* find_class(int64_t id) const;
    bool is_seen(int64_t id) const;
    Tensor attribute_vector(int64_t class_id) const;  // shape {M}
    std::filesystem::path image_path(const SampleRef& ref) const { return root / ref.path; }
};

DatasetBundle load_dataset(const std::filesystem::path& root);

// [0,1] pixels to normalized tensor and back.
Tensor normalize_pixels(const PnmImage& img, const Normalization& norm);
Tensor denormalize(const Tensor& t, const Normalization& norm);

// Decode + geometry check + normalization in one step.
Tensor load_image(const std::filesystem::path& path, int64_t image_h, int64_t image_w,
                  int64_t channels, const Normalization& norm);
Tensor load_image(const DatasetBundle& bundle, const SampleRef& ref);

// Synthetic GZSL dataset: each class draws an attribute vector in [0,1]^M,
// attribute i sets the mean intensity of patch cell i, plus Gaussian pixel
// noise. Deterministic for a fixed seed.
struct SyntheticSpec {
    std::string name = "synthetic";
    int64_t image_h = 32, image_w = 32, channels = 3;
    int64_t patch = 8;
    int64_t attr_count = 10;
    int64_t seen_classes = 8, unseen_classes = 2;
    int64_t train_per_class = 50;
    int64_t val_per_class = 10;
    int64_t test_per_class = 10;
    double noise = 0.05;
    uint64_t seed = 1;

    void validate() const;
};

DatasetBundle synth_generate(const SyntheticSpec& spec, const std::filesystem::path& out_root);

}  // namespace attrvit
