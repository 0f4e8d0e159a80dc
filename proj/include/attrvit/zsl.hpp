#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attrvit/dataset.hpp"
#include "attrvit/tensor.hpp"

namespace attrvit {

// Class-attribute matrix plus seen flags, ascending class id. Rows must have
// nonzero norm (cosine is undefined otherwise).
struct ClassEmbeddings {
    std::vector<int64_t> ids;
    std::vector<bool> seen;
    int64_t attr_count = 0;
    std::vector<scalar> matrix;  // ids.size() x attr_count

    static ClassEmbeddings from_bundle(const DatasetBundle& bundle);
    void validate() const;
    int64_t num_classes() const { return static_cast<int64_t>(ids.size()); }
    int64_t index_of(int64_t class_id) const;  // -1 if absent
    const scalar* row(int64_t index) const { return matrix.data() + index * attr_count; }
};

scalar cosine_similarity(const Tensor& a, const Tensor& b);

// score_c = cos(pred, emb_c) - gamma * [c is seen], in ids order.
std::vector<scalar> score_classes(const Tensor& pred, const ClassEmbeddings& emb, scalar gamma);

// Argmax of score_classes; ties go to the lowest class id.
int64_t classify(const Tensor& pred, const ClassEmbeddings& emb, scalar gamma);

// Mean over classes of within-class accuracy, in percent. Every truth must
// belong to class_set and every class in the set needs at least one sample.
scalar per_class_top1(const std::vector<int64_t>& predicted, const std::vector<int64_t>& truth,
                      const std::vector<int64_t>& class_set);

// 2SU/(S+U), zero when S+U == 0.
scalar harmonic_mean(scalar s, scalar u);

// Raw (gamma-free) cosine scores for a batch of predictions, plus truths.
// Calibration re-ranks this matrix without touching the model again.
struct ScoreMatrix {
    std::vector<int64_t> truths;  // one per row
    std::vector<scalar> scores;   // rows x emb.num_classes(), ids order

    int64_t rows() const { return static_cast<int64_t>(truths.size()); }
};

ScoreMatrix cosine_scores(const std::vector<Tensor>& predictions,
                          const std::vector<int64_t>& truths, const ClassEmbeddings& emb);

// Argmax with the seen-class penalty applied; one prediction per row.
std::vector<int64_t> calibrated_argmax(const ScoreMatrix& sm, const ClassEmbeddings& emb,
                                       scalar gamma);

struct EvalReport {
    scalar gamma = 0;
    scalar seen_acc = 0;    // S, percent
    scalar unseen_acc = 0;  // U, percent
    scalar harmonic = 0;    // H
    std::map<int64_t, scalar> per_class;

    std::string to_json() const;  // values rounded to 4 decimals
};

EvalReport evaluate(const ScoreMatrix& sm, const ClassEmbeddings& emb, scalar gamma);

struct SweepPoint {
    scalar gamma = 0, seen_acc = 0, unseen_acc = 0, harmonic = 0;
};

struct SweepResult {
    scalar best_gamma = 0;
    std::vector<SweepPoint> curve;

    void write_csv(const std::filesystem::path& path) const;
};

// Evaluates every gamma in the grid and returns the one maximizing H
// (smallest gamma on ties). The score matrix must contain both seen- and
// unseen-class truths.
SweepResult calibration_sweep(const ScoreMatrix& sm, const ClassEmbeddings& emb,
                              const std::vector<scalar>& grid);

// Default grid: 101 evenly spaced values in [0, 1].
std::vector<scalar> gamma_grid(scalar lo = 0, scalar hi = 1, int64_t steps = 101);

}  // namespace attrvit
