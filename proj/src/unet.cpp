// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "wxlab/models.hpp"

namespace wxlab {

void UNetConfig::validate() const {
    if (n_blocks < 2 || n_blocks > 5) throw std::invalid_argument("n_blocks must be in 2..5");
    if (base_width < 1) throw std::invalid_argument("base_width must be positive");
    if (in_channels < 1 || out_channels < 1) {
        throw std::invalid_argument("channel counts must be positive");
    }
}

static int64_t gn_groups(int64_t width) { return std::gcd<int64_t>(8, width); }

static double kaiming_std(int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

UNet::UNet(const UNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t levels = cfg_.n_blocks;
    auto width = [&](int64_t i) { return cfg_.base_width << i; };

    auto reg_conv = [&](const std::string& name, int64_t out, int64_t in, int64_t k, bool bias) {
        register_param(name + ".weight", {out, in, k, k}, ParamInit::normal,
                       kaiming_std(in * k * k), rng);
        if (bias) register_param(name + ".bias", {out}, ParamInit::zeros, 0.0, rng);
    };
    auto reg_gn = [&](const std::string& name, int64_t c) {
        register_param(name + ".gamma", {c}, ParamInit::ones, 0.0, rng);
        register_param(name + ".beta", {c}, ParamInit::zeros, 0.0, rng);
    };

    reg_conv("stem", width(0), cfg_.in_channels, 3, true);
    for (int64_t i = 0; i < levels; ++i) {
        const std::string p = "enc" + std::to_string(i);
        reg_conv(p + ".conv1", width(i), width(i), 3, true);
        reg_gn(p + ".gn1", width(i));
        reg_conv(p + ".conv2", width(i), width(i), 3, true);
        reg_gn(p + ".gn2", width(i));
    }
    for (int64_t i = 0; i + 1 < levels; ++i) {
        reg_conv("down" + std::to_string(i), width(i + 1), width(i), 3, true);
    }
    for (int64_t i = levels - 2; i >= 0; --i) {
        const std::string p = "dec" + std::to_string(i);
        // Transposed conv weight layout is [in, out, 2, 2].
        register_param("up" + std::to_string(i) + ".weight", {width(i + 1), width(i), 2, 2},
                       ParamInit::normal, kaiming_std(width(i + 1) * 4), rng);
        register_param("up" + std::to_string(i) + ".bias", {width(i)}, ParamInit::zeros, 0.0, rng);
        reg_conv(p + ".conv_up", width(i), width(i), 3, true);
        reg_conv(p + ".conv_skip", width(i), width(i), 3, false);
        reg_gn(p + ".gn1", width(i));
        reg_conv(p + ".conv2", width(i), width(i), 3, true);
        reg_gn(p + ".gn2", width(i));
    }
    reg_conv("head", cfg_.out_channels, width(0), 1, true);
}

ad::Var UNet::conv3(const ad::Var& x, const std::string& name, int64_t stride, bool bias) {
    ad::Var padded = ad::pad2d(x, 1, 1, cfg_.padding.x_mode, cfg_.padding.y_mode);
    return ad::conv2d(padded, param(name + ".weight"), bias ? param(name + ".bias") : nullptr,
                      stride);
}

ad::Var UNet::gn_relu(const ad::Var& x, const std::string& name) {
    const int64_t c = x->value.dim(1);
    return ad::relu(ad::group_norm(x, param(name + ".gamma"), param(name + ".beta"),
                                   gn_groups(c), 1e-5));
}

ad::Var UNet::forward(const ad::Var& x) {
    if (x->value.ndim() != 4 || x->value.dim(1) != cfg_.in_channels) {
        throw std::invalid_argument("UNet input must be [N," + std::to_string(cfg_.in_channels) +
                                    ",H,W], got " + x->value.shape_str());
    }
    const int64_t levels = cfg_.n_blocks;
    const int64_t factor = int64_t{1} << (levels - 1);
    if (x->value.dim(2) % factor != 0 || x->value.dim(3) % factor != 0) {
        throw std::invalid_argument("UNet input dims must be divisible by " +
                                    std::to_string(factor) + " for " + std::to_string(levels) +
                                    " blocks, got " + x->value.shape_str());
    }

    ad::Var cur = conv3(x, "stem", 1, true);
    std::vector<ad::Var> skips(static_cast<size_t>(levels));
    for (int64_t i = 0; i < levels; ++i) {
        const std::string p = "enc" + std::to_string(i);
        cur = gn_relu(conv3(cur, p + ".conv1", 1, true), p + ".gn1");
        cur = gn_relu(conv3(cur, p + ".conv2", 1, true), p + ".gn2");
        skips[static_cast<size_t>(i)] = cur;
        if (i + 1 < levels) cur = conv3(cur, "down" + std::to_string(i), 2, true);
    }
    for (int64_t i = levels - 2; i >= 0; --i) {
        const std::string p = "dec" + std::to_string(i);
        cur = ad::conv_transpose2d(cur, param("up" + std::to_string(i) + ".weight"),
                                   param("up" + std::to_string(i) + ".bias"));
        ad::Var merged = conv3(cur, p + ".conv_up", 1, true);
        if (use_skips_) {
            merged = ad::add(merged, conv3(skips[static_cast<size_t>(i)], p + ".conv_skip", 1,
                                           false));
        }
        cur = gn_relu(merged, p + ".gn1");
        cur = gn_relu(conv3(cur, p + ".conv2", 1, true), p + ".gn2");
    }
    return ad::conv2d(cur, param("head.weight"), param("head.bias"), 1);
}

std::vector<std::string> UNet::head_param_names() const {
    return {"stem.weight", "stem.bias", "head.weight", "head.bias"};
}

std::vector<std::string> UNet::skip_param_names() const {
    std::vector<std::string> out;
    for (int64_t i = cfg_.n_blocks - 2; i >= 0; --i) {
        out.push_back("dec" + std::to_string(i) + ".conv_skip.weight");
    }
    return out;
}

void UNet::reinit_skip_parameters(Rng& rng) {
    for (const auto& name : skip_param_names()) reinit_parameter(name, rng);
}

int64_t UNet::analytic_conv_weight_count(const UNetConfig& cfg) {
    cfg.validate();
    const int64_t levels = cfg.n_blocks;
    auto width = [&](int64_t i) { return cfg.base_width << i; };
    int64_t n = cfg.in_channels * width(0) * 9;  // stem
    for (int64_t i = 0; i < levels; ++i) n += 2 * width(i) * width(i) * 9;
    for (int64_t i = 0; i + 1 < levels; ++i) n += width(i) * width(i + 1) * 9;
    for (int64_t i = 0; i + 1 < levels; ++i) {
        n += width(i + 1) * width(i) * 4;        // transposed conv
        n += 3 * width(i) * width(i) * 9;        // conv_up, conv_skip, conv2
    }
    n += width(0) * cfg.out_channels;            // 1x1 head
    return n;
}

int64_t UNet::analytic_param_count(const UNetConfig& cfg) {
    const int64_t levels = cfg.n_blocks;
    auto width = [&](int64_t i) { return cfg.base_width << i; };
    int64_t n = analytic_conv_weight_count(cfg);
    n += width(0);                                   // stem bias
    for (int64_t i = 0; i < levels; ++i) {
        n += 2 * width(i);                           // conv biases
        n += 4 * width(i);                           // two GroupNorms
    }
    for (int64_t i = 0; i + 1 < levels; ++i) n += width(i + 1);  // down bias
    for (int64_t i = 0; i + 1 < levels; ++i) {
        n += width(i);                               // up bias
        n += 2 * width(i);                           // conv_up, conv2 biases
        n += 4 * width(i);                           // two GroupNorms
    }
    n += cfg.out_channels;                           // head bias
    return n;
}

}  // namespace wxlab
