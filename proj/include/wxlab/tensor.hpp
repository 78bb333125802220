// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles plus the deterministic RNG used across
// the library. All shapes are explicit; no broadcasting.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wxlab {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape, double fill = 0.0);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor({1}, v); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // In-place reshape; element count must match.
    void reshape(std::vector<int64_t> shape);
    Tensor reshaped(std::vector<int64_t> shape) const;

    void fill(double v);
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    double sum() const;
    double mean() const;
    double min() const;
    double max() const;
    double max_abs() const;

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// Deterministic RNG. mt19937_64 output is fully specified by the standard;
// the uniform and normal draws below avoid std::*_distribution, whose output
// is implementation-defined, so streams reproduce bit-for-bit everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; draws a pair and caches the second.
    double normal();

    // Uniform integer in [0, n); uses rejection so the result is unbiased.
    int64_t uniform_int(int64_t n);

    // Independent child stream derived from (seed, stream) via splitmix64,
    // so forks are decorrelated even for adjacent stream ids.
    Rng fork(uint64_t stream) const;

    void fill_normal(Tensor& t, double mean = 0.0, double std = 1.0);
    void fill_uniform(Tensor& t, double lo, double hi);

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace wxlab
