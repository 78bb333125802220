// SPDX-License-Identifier: Apache-2.0

#include "wxlab/noise.hpp"

#include <cmath>
#include <stdexcept>

namespace wxlab {

NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "none") return NoiseKind::none;
    if (name == "gaussian") return NoiseKind::gaussian;
    if (name == "perlin") return NoiseKind::perlin;
    throw std::invalid_argument("unknown noise kind '" + name + "'");
}

std::string noise_kind_name(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::none: return "none";
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::perlin: return "perlin";
    }
    throw std::invalid_argument("unknown noise kind");
}

void NoiseConfig::validate() const {
    if (amplitude < 0.0) throw std::invalid_argument("noise amplitude must be nonnegative");
    if (kind == NoiseKind::perlin) {
        if (lattice_lat < 2 || lattice_lon < 2) {
            throw std::invalid_argument("perlin lattice needs at least 2 cells per axis");
        }
        if (octaves < 1) throw std::invalid_argument("perlin octaves must be >= 1");
        if (persistence <= 0.0 || persistence > 1.0) {
            throw std::invalid_argument("perlin persistence must lie in (0,1]");
        }
    }
}

Tensor gaussian_perturb(const Tensor& field, double amplitude, Rng& rng) {
    if (amplitude < 0.0) throw std::invalid_argument("noise amplitude must be nonnegative");
    if (amplitude == 0.0) return field;
    Tensor out = field;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += amplitude * rng.normal();
    return out;
}

PerlinLattice::PerlinLattice(int64_t cells_y, int64_t cells_x, Rng& rng)
    : cells_y_(cells_y), cells_x_(cells_x) {
    if (cells_y < 2 || cells_x < 2) {
        throw std::invalid_argument("perlin lattice needs at least 2 cells per axis");
    }
    const size_t n = static_cast<size_t>((cells_y + 1) * cells_x);
    gx_.resize(n);
    gy_.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(0.0, 2.0 * M_PI);
        gx_[i] = std::cos(a);
        gy_[i] = std::sin(a);
    }
}

static double fade(double t) { return t * t * t * (t * (6.0 * t - 15.0) + 10.0); }
static double lerp(double a, double b, double t) { return a + t * (b - a); }

double PerlinLattice::eval(double y, double x) const {
    if (y < 0.0 || y > static_cast<double>(cells_y_)) {
        throw std::invalid_argument("perlin y coordinate outside the lattice");
    }
    int64_t y0 = static_cast<int64_t>(std::floor(y));
    if (y0 == cells_y_) --y0;  // top edge belongs to the last cell
    const double fy = y - static_cast<double>(y0);

    double xw = std::fmod(x, static_cast<double>(cells_x_));
    if (xw < 0.0) xw += static_cast<double>(cells_x_);
    int64_t x0 = static_cast<int64_t>(std::floor(xw));
    if (x0 == cells_x_) x0 = 0;  // fmod can land exactly on cells_x
    const double fx = xw - static_cast<double>(x0);
    const int64_t x1 = (x0 + 1) % cells_x_;

    auto dot = [&](int64_t ny, int64_t nx, double dx, double dy) {
        const size_t i = static_cast<size_t>(ny * cells_x_ + nx);
        return gx_[i] * dx + gy_[i] * dy;
    };
    const double n00 = dot(y0, x0, fx, fy);
    const double n01 = dot(y0, x1, fx - 1.0, fy);
    const double n10 = dot(y0 + 1, x0, fx, fy - 1.0);
    const double n11 = dot(y0 + 1, x1, fx - 1.0, fy - 1.0);

    const double u = fade(fx), v = fade(fy);
    return lerp(lerp(n00, n01, u), lerp(n10, n11, u), v);
}

Tensor perlin_noise_field(int64_t n_lat, int64_t n_lon, const NoiseConfig& cfg, Rng& rng) {
    NoiseConfig check = cfg;
    check.kind = NoiseKind::perlin;
    check.validate();

    Tensor out({n_lat, n_lon});
    double octave_amp = 1.0;
    for (int64_t o = 0; o < cfg.octaves; ++o) {
        Rng orng = rng.fork(0x70u + static_cast<uint64_t>(o));
        const int64_t cy = cfg.lattice_lat << o;
        const int64_t cx = cfg.lattice_lon << o;
        PerlinLattice lattice(cy, cx, orng);
        for (int64_t i = 0; i < n_lat; ++i) {
            const double y = static_cast<double>(i) * static_cast<double>(cy) /
                             static_cast<double>(n_lat);
            for (int64_t j = 0; j < n_lon; ++j) {
                const double x = static_cast<double>(j) * static_cast<double>(cx) /
                                 static_cast<double>(n_lon);
                out.at(i, j) += octave_amp * lattice.eval(y, x);
            }
        }
        octave_amp *= cfg.persistence;
    }
    // Unit gradients give a single-octave range of +-sqrt(2)/2; rescale so
    // the peak equals the configured amplitude.
    out *= cfg.amplitude * std::sqrt(2.0);
    return out;
}

Tensor perlin_perturb(const Tensor& field, const NoiseConfig& cfg, Rng& rng) {
    if (field.ndim() != 3) throw std::invalid_argument("perlin_perturb expects a [C,H,W] field");
    if (cfg.amplitude == 0.0) return field;
    const int64_t c = field.dim(0), h = field.dim(1), w = field.dim(2);
    Tensor out = field;
    for (int64_t ch = 0; ch < c; ++ch) {
        Rng crng = rng.fork(static_cast<uint64_t>(ch));
        Tensor noise = perlin_noise_field(h, w, cfg, crng);
        for (int64_t i = 0; i < h * w; ++i) out[ch * h * w + i] += noise[i];
    }
    return out;
}

Tensor apply_noise(const Tensor& field, const NoiseConfig& cfg, Rng& rng) {
    cfg.validate();
    switch (cfg.kind) {
        case NoiseKind::none: return field;
        case NoiseKind::gaussian: return gaussian_perturb(field, cfg.amplitude, rng);
        case NoiseKind::perlin: return perlin_perturb(field, cfg, rng);
    }
    throw std::invalid_argument("unknown noise kind");
}

}  // namespace wxlab
