// SPDX-License-Identifier: Apache-2.0

#include "wxlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace wxlab {

static int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw std::invalid_argument("tensor shape has a negative dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

void Tensor::reshape(std::vector<int64_t> shape) {
    if (shape_numel(shape) != numel()) {
        throw std::invalid_argument("reshape " + shape_str() + " to incompatible element count");
    }
    shape_ = std::move(shape);
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("tensor += shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("tensor -= shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const {
    if (data_.empty()) throw std::runtime_error("mean of empty tensor");
    return sum() / static_cast<double>(data_.size());
}

double Tensor::min() const {
    if (data_.empty()) throw std::runtime_error("min of empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    if (data_.empty()) throw std::runtime_error("max of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    // Box-Muller on two fresh uniforms; u1 shifted away from zero so the log
    // is always finite.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw std::invalid_argument("uniform_int requires n > 0");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng Rng::fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream)));
}

void Rng::fill_normal(Tensor& t, double mean, double std) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = mean + std * normal();
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
}

}  // namespace wxlab
