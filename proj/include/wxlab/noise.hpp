// SPDX-License-Identifier: Apache-2.0
//
// Training-time input perturbation: additive Gaussian noise and classic
// gradient-lattice Perlin noise whose lattice is periodic along longitude.

#pragma once

#include <cstdint>
#include <string>

#include "wxlab/tensor.hpp"

namespace wxlab {

enum class NoiseKind { none, gaussian, perlin };

NoiseKind parse_noise_kind(const std::string& name);
std::string noise_kind_name(NoiseKind kind);

struct NoiseConfig {
    NoiseKind kind = NoiseKind::none;
    double amplitude = 0.1;  // std for gaussian, single-octave peak for perlin
    int64_t lattice_lat = 8;
    int64_t lattice_lon = 16;
    int64_t octaves = 3;
    double persistence = 0.5;
    uint64_t seed = 0;

    void validate() const;
};

// field + i.i.d. Normal(0, amplitude^2) noise; amplitude 0 returns the input
// unchanged without consuming the generator.
Tensor gaussian_perturb(const Tensor& field, double amplitude, Rng& rng);

// Seeded gradient lattice for one noise octave. Gradients are unit vectors;
// the x axis wraps modulo the lattice width so longitude column W and column
// 0 see identical noise. Values vanish at lattice nodes and interpolation
// uses the quintic fade 6t^5 - 15t^4 + 10t^3.
class PerlinLattice {
public:
    // Throws when either axis has fewer than 2 cells.
    PerlinLattice(int64_t cells_y, int64_t cells_x, Rng& rng);

    // Noise at lattice coordinates (y in [0, cells_y], x wraps mod cells_x),
    // in [-sqrt(2)/2, sqrt(2)/2].
    double eval(double y, double x) const;

    int64_t cells_y() const { return cells_y_; }
    int64_t cells_x() const { return cells_x_; }

private:
    int64_t cells_y_, cells_x_;
    std::vector<double> gx_, gy_;  // (cells_y+1) x cells_x node gradients
};

// Multi-octave Perlin noise sampled on an H x W grid. Octave o doubles the
// base lattice frequency o times and scales by persistence^o; the result is
// scaled by sqrt(2)*amplitude so a single octave peaks at +-amplitude.
Tensor perlin_noise_field(int64_t n_lat, int64_t n_lon, const NoiseConfig& cfg, Rng& rng);

// Adds an independent multi-octave Perlin field to every channel of a
// [C,H,W] field; channel c uses the child stream rng.fork(c).
Tensor perlin_perturb(const Tensor& field, const NoiseConfig& cfg, Rng& rng);

// Dispatch on cfg.kind; `none` (or amplitude 0) returns the input unchanged.
Tensor apply_noise(const Tensor& field, const NoiseConfig& cfg, Rng& rng);

}  // namespace wxlab
