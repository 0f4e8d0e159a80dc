#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "attrvit/tensor.hpp"

namespace testutil {

using attrvit::scalar;
using attrvit::Tape;
using attrvit::Tensor;

// Picks the tolerance for the build's scalar width.
inline scalar tol(double for_double, double for_float) {
    return static_cast<scalar>(sizeof(scalar) == 8 ? for_double : for_float);
}

// Self-deleting unique directory under the system temp dir.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path = std::filesystem::temp_directory_path() /
               (tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

// Independent triple-loop reference for matmul checks.
inline std::vector<scalar> matmul_oracle(const std::vector<scalar>& a, const std::vector<scalar>& b,
                                         int64_t m, int64_t k, int64_t n) {
    std::vector<scalar> c(static_cast<size_t>(m * n), 0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p)
                c[static_cast<size_t>(i * n + j)] +=
                    a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
    return c;
}

// Independent central-difference check of backward(): returns the max
// relative error over all elements of all given parameters. Deliberately
// separate from attrvit::grad_check.
inline scalar fd_max_rel_err(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params,
                             scalar base_step) {
    for (auto& p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    Tape tape;
    Tensor loss = f(tape);
    attrvit::backward(loss, tape);
    std::vector<std::vector<scalar>> analytic;
    for (auto& p : params) analytic.emplace_back(p.grad(), p.grad() + p.size());

    auto value = [&]() {
        Tape t;
        return f(t).item();
    };
    scalar worst = 0;
    for (size_t b = 0; b < params.size(); ++b) {
        Tensor& p = params[b];
        for (int64_t i = 0; i < p.size(); ++i) {
            const scalar saved = p.at(i);
            const scalar h = base_step * std::max<scalar>(1, std::abs(saved));
            p.at(i) = saved + h;
            const scalar fp = value();
            p.at(i) = saved - h;
            const scalar fm = value();
            p.at(i) = saved;
            const scalar fd = (fp - fm) / (2 * h);
            const scalar ad = analytic[b][static_cast<size_t>(i)];
            const scalar rel =
                std::abs(ad - fd) / std::max<scalar>(1, std::max(std::abs(ad), std::abs(fd)));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Deterministic filler for test inputs.
inline Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, scalar lo = -1,
                            scalar hi = 1) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = static_cast<scalar>(dist(rng));
    return t;
}

inline bool bytes_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::vector<char> ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::vector<char> bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return ba == bb;
}

}  // namespace testutil
