#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pfdet/util.hpp"

namespace pfdet {

// Dense row-major tensor of doubles. Rank 1..4; feature maps are [C,H,W].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // [C,H,W] accessors for rank-3 tensors.
    double& at(int c, int h, int w) {
        return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
    }
    double at(int c, int h, int w) const {
        return data[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline void require_shape(const Tensor& t, const std::vector<int>& s, const std::string& who) {
    if (t.shape != s) {
        Tensor want(s);
        throw DimensionError(who + ": expected shape " + want.shape_str() + ", got " +
                             t.shape_str());
    }
}

inline Tensor rand_uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

}  // namespace pfdet
