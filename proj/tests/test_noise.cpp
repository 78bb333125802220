// SPDX-License-Identifier: Apache-2.0
//
// Gradient-lattice noise invariants (node zeros, longitude periodicity),
// Gaussian perturbation statistics, and the dispatcher contract.

#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "wxlab/noise.hpp"

using namespace wxlab;

TEST_CASE("single-octave lattice noise vanishes at every node") {
    Rng rng(101);
    PerlinLattice lat(5, 8, rng);
    for (int64_t y = 0; y <= 5; ++y) {
        for (int64_t x = 0; x <= 8; ++x) {  // x == 8 exercises the wrap
            CHECK(std::abs(lat.eval(static_cast<double>(y), static_cast<double>(x))) <= 1e-9);
        }
    }
}

TEST_CASE("lattice noise is periodic across the longitude seam") {
    Rng rng(202);
    PerlinLattice lat(4, 6, rng);
    Rng probe(7);
    for (int trial = 0; trial < 200; ++trial) {
        const double y = probe.uniform(0.0, 4.0);
        const double x = probe.uniform(0.0, 6.0);
        CHECK(std::abs(lat.eval(y, x) - lat.eval(y, x + 6.0)) <= 1e-9);
        CHECK(std::abs(lat.eval(y, x) - lat.eval(y, x - 6.0)) <= 1e-9);
    }
    // Approaching the seam from the west matches the first column.
    for (int i = 0; i <= 20; ++i) {
        const double y = 0.2 * i;
        CHECK(std::abs(lat.eval(y, 6.0 - 1e-10) - lat.eval(y, 0.0)) <= 1e-9);
    }
    CHECK_THROWS_AS(PerlinLattice(1, 8, rng), std::invalid_argument);
}

TEST_CASE("lattice values stay within the unit-gradient bound") {
    Rng rng(303);
    PerlinLattice lat(6, 6, rng);
    Rng probe(11);
    double peak = 0.0;
    for (int trial = 0; trial < 2000; ++trial) {
        const double v = lat.eval(probe.uniform(0.0, 6.0), probe.uniform(0.0, 6.0));
        peak = std::max(peak, std::abs(v));
    }
    CHECK(peak <= std::sqrt(2.0) / 2.0 + 1e-12);
    CHECK(peak > 0.05);  // it is not the zero field
}

TEST_CASE("single-octave field peaks at the configured amplitude") {
    NoiseConfig cfg;
    cfg.kind = NoiseKind::perlin;
    cfg.amplitude = 0.3;
    cfg.octaves = 1;
    cfg.lattice_lat = 4;
    cfg.lattice_lon = 8;
    Rng rng(404);
    const Tensor f = perlin_noise_field(16, 32, cfg, rng);
    CHECK(f.shape() == std::vector<int64_t>({16, 32}));
    CHECK(f.max_abs() <= 0.3 + 1e-12);
    CHECK(f.max_abs() > 0.03);
    CHECK(f.all_finite());
}

TEST_CASE("multi-octave fields are deterministic per seed and channel-forked") {
    NoiseConfig cfg;
    cfg.kind = NoiseKind::perlin;
    cfg.amplitude = 0.2;
    cfg.octaves = 3;
    cfg.persistence = 0.5;
    cfg.lattice_lat = 3;
    cfg.lattice_lon = 4;

    Rng a(55), b(55), c(56);
    const Tensor fa = perlin_noise_field(8, 16, cfg, a);
    const Tensor fb = perlin_noise_field(8, 16, cfg, b);
    const Tensor fc = perlin_noise_field(8, 16, cfg, c);
    CHECK(fa.vec() == fb.vec());
    CHECK(fa.vec() != fc.vec());

    Tensor field = Tensor::zeros({2, 8, 16});
    Rng r1(77);
    const Tensor noised = perlin_perturb(field, cfg, r1);
    bool channels_differ = false;
    for (int64_t i = 0; i < 8 * 16 && !channels_differ; ++i) {
        channels_differ = noised[i] != noised[8 * 16 + i];
    }
    CHECK(channels_differ);
}

TEST_CASE("amplitude zero leaves the field and generator untouched") {
    Tensor field({2, 4, 6});
    Rng fill(1);
    fill.fill_normal(field, 0.0, 1.0);

    Rng rng(99), twin(99);
    const Tensor out = gaussian_perturb(field, 0.0, rng);
    CHECK(out.vec() == field.vec());
    CHECK(rng.uniform() == twin.uniform());  // nothing consumed

    NoiseConfig none;
    none.kind = NoiseKind::none;
    Rng r2(5);
    CHECK(apply_noise(field, none, r2).vec() == field.vec());
}

TEST_CASE("gaussian perturbation has the configured spread") {
    Tensor field = Tensor::zeros({10, 100, 100});
    Rng rng(606);
    const Tensor out = gaussian_perturb(field, 0.1, rng);
    double sq = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) sq += out[i] * out[i];
    const double std = std::sqrt(sq / static_cast<double>(out.numel()));
    CHECK(std >= 0.095);
    CHECK(std <= 0.105);
}

TEST_CASE("dispatcher applies the configured kind") {
    Tensor field = Tensor::zeros({1, 6, 8});
    NoiseConfig g;
    g.kind = NoiseKind::gaussian;
    g.amplitude = 0.5;
    Rng r1(3);
    CHECK(apply_noise(field, g, r1).max_abs() > 0.0);

    NoiseConfig p;
    p.kind = NoiseKind::perlin;
    p.amplitude = 0.5;
    p.lattice_lat = 2;
    p.lattice_lon = 2;
    p.octaves = 2;
    Rng r2(3);
    const Tensor out = apply_noise(field, p, r2);
    CHECK(out.max_abs() > 0.0);
    CHECK(out.shape() == field.shape());
}

TEST_CASE("noise config validation") {
    NoiseConfig cfg;
    cfg.kind = NoiseKind::perlin;
    cfg.amplitude = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.amplitude = 0.1;
    cfg.octaves = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.octaves = 2;
    cfg.persistence = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.persistence = 0.5;
    cfg.lattice_lat = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lattice_lat = 4;
    cfg.validate();

    CHECK(parse_noise_kind("perlin") == NoiseKind::perlin);
    CHECK(noise_kind_name(NoiseKind::gaussian) == "gaussian");
    CHECK_THROWS_AS(parse_noise_kind("brownian"), std::invalid_argument);
}
