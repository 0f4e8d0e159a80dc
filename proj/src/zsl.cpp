#include "attrvit/zsl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "attrvit/errors.hpp"

namespace attrvit {

ClassEmbeddings ClassEmbeddings::from_bundle(const DatasetBundle& bundle) {
    ClassEmbeddings emb;
    emb.attr_count = bundle.attr_count;
    emb.ids.reserve(bundle.classes.size());
    emb.matrix.reserve(bundle.classes.size() * static_cast<size_t>(bundle.attr_count));
    for (const auto& c : bundle.classes) {
        emb.ids.push_back(c.id);
        emb.seen.push_back(c.seen);
        const scalar* row = bundle.attributes.data() + c.attr_row * bundle.attr_count;
        emb.matrix.insert(emb.matrix.end(), row, row + bundle.attr_count);
    }
    emb.validate();
    return emb;
}

void ClassEmbeddings::validate() const {
    if (ids.empty()) throw ContractError("class embeddings are empty");
    if (seen.size() != ids.size() ||
        matrix.size() != ids.size() * static_cast<size_t>(attr_count))
        throw DimensionError("class embedding buffers are inconsistent");
    for (size_t i = 1; i < ids.size(); ++i)
        if (ids[i - 1] >= ids[i]) throw ContractError("class ids must be strictly ascending");
    for (size_t i = 0; i < ids.size(); ++i) {
        scalar norm2 = 0;
        const scalar* r = row(static_cast<int64_t>(i));
        for (int64_t j = 0; j < attr_count; ++j) norm2 += r[j] * r[j];
        if (norm2 == scalar(0))
            throw ContractError("class " + std::to_string(ids[i]) +
                                " has a zero attribute vector; cosine is undefined");
    }
}

int64_t ClassEmbeddings::index_of(int64_t class_id) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), class_id);
    if (it == ids.end() || *it != class_id) return -1;
    return it - ids.begin();
}

scalar cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw DimensionError("cosine_similarity length mismatch: " + a.shape_str() + " vs " +
                             b.shape_str());
    scalar dot = 0, na = 0, nb = 0;
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) {
        dot += a.at(i) * b.at(i);
        na += a.at(i) * a.at(i);
        nb += b.at(i) * b.at(i);
    }
    if (na == scalar(0) || nb == scalar(0))
        throw ContractError("cosine_similarity of a zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

std::vector<scalar> cosine_row(const Tensor& pred, const ClassEmbeddings& emb) {
    if (pred.size() != emb.attr_count)
        throw DimensionError("prediction length " + std::to_string(pred.size()) +
                             " does not match attribute count " + std::to_string(emb.attr_count));
    scalar pnorm2 = 0;
    for (int64_t i = 0; i < pred.size(); ++i) pnorm2 += pred.at(i) * pred.at(i);
    if (pnorm2 == scalar(0)) throw ContractError("zero-norm prediction; cosine is undefined");
    const scalar pnorm = std::sqrt(pnorm2);

    std::vector<scalar> out(static_cast<size_t>(emb.num_classes()));
    for (int64_t c = 0; c < emb.num_classes(); ++c) {
        const scalar* r = emb.row(c);
        scalar dot = 0, rn = 0;
        for (int64_t j = 0; j < emb.attr_count; ++j) {
            dot += pred.at(j) * r[j];
            rn += r[j] * r[j];
        }
        out[static_cast<size_t>(c)] = dot / (pnorm * std::sqrt(rn));
    }
    return out;
}

int64_t argmax_with_penalty(const scalar* scores, const ClassEmbeddings& emb, scalar gamma) {
    int64_t best = 0;
    scalar best_score = scores[0] - (emb.seen[0] ? gamma : scalar(0));
    for (int64_t c = 1; c < emb.num_classes(); ++c) {
        const scalar s = scores[c] - (emb.seen[static_cast<size_t>(c)] ? gamma : scalar(0));
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

}  // namespace

std::vector<scalar> score_classes(const Tensor& pred, const ClassEmbeddings& emb, scalar gamma) {
    std::vector<scalar> out = cosine_row(pred, emb);
    for (size_t c = 0; c < out.size(); ++c)
        if (emb.seen[c]) out[c] -= gamma;
    return out;
}

int64_t classify(const Tensor& pred, const ClassEmbeddings& emb, scalar gamma) {
    const std::vector<scalar> cosines = cosine_row(pred, emb);
    return emb.ids[static_cast<size_t>(argmax_with_penalty(cosines.data(), emb, gamma))];
}

scalar per_class_top1(const std::vector<int64_t>& predicted, const std::vector<int64_t>& truth,
                      const std::vector<int64_t>& class_set) {
    if (predicted.size() != truth.size())
        throw DimensionError("predicted/truth length mismatch");
    if (class_set.empty()) throw ProtocolError("per_class_top1 over an empty class set");
    std::map<int64_t, std::pair<int64_t, int64_t>> counts;  // id -> (correct, total)
    for (int64_t id : class_set) counts[id] = {0, 0};
    if (counts.size() != class_set.size())
        throw ProtocolError("duplicate class id in class set");
    for (size_t i = 0; i < truth.size(); ++i) {
        auto it = counts.find(truth[i]);
        if (it == counts.end())
            throw ProtocolError("sample truth " + std::to_string(truth[i]) +
                                " is outside the class set");
        it->second.second += 1;
        if (predicted[i] == truth[i]) it->second.first += 1;
    }
    scalar acc_sum = 0;
    for (const auto& [id, c] : counts) {
        if (c.second == 0)
            throw ProtocolError("class " + std::to_string(id) + " has no samples");
        acc_sum += static_cast<scalar>(c.first) / static_cast<scalar>(c.second);
    }
    return scalar(100) * acc_sum / static_cast<scalar>(counts.size());
}

scalar harmonic_mean(scalar s, scalar u) {
    if (s < 0 || u < 0) throw ContractError("harmonic_mean needs non-negative inputs");
    if (s + u == scalar(0)) return 0;
    return 2 * s * u / (s + u);
}

ScoreMatrix cosine_scores(const std::vector<Tensor>& predictions,
                          const std::vector<int64_t>& truths, const ClassEmbeddings& emb) {
    if (predictions.size() != truths.size())
        throw DimensionError("predictions/truths length mismatch");
    ScoreMatrix sm;
    sm.truths = truths;
    sm.scores.reserve(predictions.size() * static_cast<size_t>(emb.num_classes()));
    for (const auto& p : predictions) {
        const std::vector<scalar> row = cosine_row(p, emb);
        sm.scores.insert(sm.scores.end(), row.begin(), row.end());
    }
    for (int64_t t : truths)
        if (emb.index_of(t) < 0)
            throw ProtocolError("truth class " + std::to_string(t) + " is not in the embeddings");
    return sm;
}

std::vector<int64_t> calibrated_argmax(const ScoreMatrix& sm, const ClassEmbeddings& emb,
                                       scalar gamma) {
    const int64_t nc = emb.num_classes();
    if (sm.scores.size() != static_cast<size_t>(sm.rows() * nc))
        throw DimensionError("score matrix does not match embedding class count");
    std::vector<int64_t> out(static_cast<size_t>(sm.rows()));
    for (int64_t i = 0; i < sm.rows(); ++i)
        out[static_cast<size_t>(i)] =
            emb.ids[static_cast<size_t>(argmax_with_penalty(sm.scores.data() + i * nc, emb, gamma))];
    return out;
}

EvalReport evaluate(const ScoreMatrix& sm, const ClassEmbeddings& emb, scalar gamma) {
    if (sm.rows() == 0) throw ProtocolError("evaluate on an empty score matrix");
    const std::vector<int64_t> predicted = calibrated_argmax(sm, emb, gamma);

    // Per-class splits; only classes that actually appear are scored.
    std::vector<int64_t> seen_pred, seen_truth, unseen_pred, unseen_truth;
    std::vector<int64_t> seen_ids, unseen_ids;
    for (int64_t i = 0; i < sm.rows(); ++i) {
        const int64_t cls_index = emb.index_of(sm.truths[static_cast<size_t>(i)]);
        if (emb.seen[static_cast<size_t>(cls_index)]) {
            seen_pred.push_back(predicted[static_cast<size_t>(i)]);
            seen_truth.push_back(sm.truths[static_cast<size_t>(i)]);
        } else {
            unseen_pred.push_back(predicted[static_cast<size_t>(i)]);
            unseen_truth.push_back(sm.truths[static_cast<size_t>(i)]);
        }
    }
    for (int64_t t : seen_truth)
        if (std::find(seen_ids.begin(), seen_ids.end(), t) == seen_ids.end()) seen_ids.push_back(t);
    for (int64_t t : unseen_truth)
        if (std::find(unseen_ids.begin(), unseen_ids.end(), t) == unseen_ids.end())
            unseen_ids.push_back(t);
    if (seen_ids.empty() || unseen_ids.empty())
        throw ProtocolError("evaluation set must contain both seen- and unseen-class samples");

    EvalReport rep;
    rep.gamma = gamma;
    rep.seen_acc = per_class_top1(seen_pred, seen_truth, seen_ids);
    rep.unseen_acc = per_class_top1(unseen_pred, unseen_truth, unseen_ids);
    rep.harmonic = harmonic_mean(rep.seen_acc, rep.unseen_acc);

    std::map<int64_t, std::pair<int64_t, int64_t>> counts;
    for (int64_t i = 0; i < sm.rows(); ++i) {
        auto& c = counts[sm.truths[static_cast<size_t>(i)]];
        c.second += 1;
        if (predicted[static_cast<size_t>(i)] == sm.truths[static_cast<size_t>(i)]) c.first += 1;
    }
    for (const auto& [id, c] : counts)
        rep.per_class[id] = scalar(100) * static_cast<scalar>(c.first) / static_cast<scalar>(c.second);
    return rep;
}

namespace {
double round4(scalar v) { return std::round(static_cast<double>(v) * 1e4) / 1e4; }
}  // namespace

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["gamma"] = round4(gamma);
    j["S"] = round4(seen_acc);
    j["U"] = round4(unseen_acc);
    j["H"] = round4(harmonic);
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [id, acc] : per_class) pc[std::to_string(id)] = round4(acc);
    j["per_class"] = pc;
    return j.dump(2);
}

SweepResult calibration_sweep(const ScoreMatrix& sm, const ClassEmbeddings& emb,
                              const std::vector<scalar>& grid) {
    if (grid.empty()) throw ProtocolError("calibration sweep over an empty gamma grid");
    SweepResult result;
    result.curve.reserve(grid.size());
    scalar best_h = -1;
    for (scalar g : grid) {
        const EvalReport rep = evaluate(sm, emb, g);
        result.curve.push_back({g, rep.seen_acc, rep.unseen_acc, rep.harmonic});
        if (rep.harmonic > best_h) {
            best_h = rep.harmonic;
            result.best_gamma = g;
        }
    }
    return result;
}

void SweepResult::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << "gamma,S,U,H\n";
    for (const auto& p : curve)
        out << p.gamma << "," << p.seen_acc << "," << p.unseen_acc << "," << p.harmonic << "\n";
    if (!out) throw Error(path.string() + ": write failed");
}

std::vector<scalar> gamma_grid(scalar lo, scalar hi, int64_t steps) {
    if (steps < 1 || hi < lo) throw ConfigError("bad gamma grid");
    std::vector<scalar> g(static_cast<size_t>(steps));
    if (steps == 1) {
        g[0] = lo;
        return g;
    }
    for (int64_t i = 0; i < steps; ++i)
        g[static_cast<size_t>(i)] = lo + (hi - lo) * static_cast<scalar>(i) / static_cast<scalar>(steps - 1);
    return g;
}

}  // namespace attrvit
