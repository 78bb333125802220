// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wxlab/models.hpp"

namespace wxlab {

void GraphUNetConfig::validate() const {
    core.validate();
    if (in_channels < 1 || out_channels < 1) {
        throw std::invalid_argument("channel counts must be positive");
    }
    if (latent_width < 1) throw std::invalid_argument("latent_width must be positive");
    if (k < 1) throw std::invalid_argument("neighborhood size k must be positive");
    if (kernel_width < 1) throw std::invalid_argument("kernel_width must be positive");
}

EdgeSet build_knn_edges(const Tensor& src_coords, const Tensor& dst_coords, int64_t k) {
    if (src_coords.ndim() != 2 || src_coords.dim(1) != 3 || dst_coords.ndim() != 2 ||
        dst_coords.dim(1) != 3) {
        throw std::invalid_argument("point coordinates must be [P,3]");
    }
    const int64_t p = src_coords.dim(0), q = dst_coords.dim(0);
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (k > p) {
        throw std::invalid_argument("k=" + std::to_string(k) + " exceeds available points (" +
                                    std::to_string(p) + ")");
    }

    EdgeSet es;
    es.offsets.push_back(0);
    std::vector<double> d2(static_cast<size_t>(p));
    std::vector<double> sorted;
    for (int64_t j = 0; j < q; ++j) {
        const double qx = dst_coords.at(j, 0), qy = dst_coords.at(j, 1), qz = dst_coords.at(j, 2);
        for (int64_t i = 0; i < p; ++i) {
            const double dx = src_coords.at(i, 0) - qx;
            const double dy = src_coords.at(i, 1) - qy;
            const double dz = src_coords.at(i, 2) - qz;
            d2[static_cast<size_t>(i)] = dx * dx + dy * dy + dz * dz;
        }
        sorted = d2;
        std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
        // Include every point tied with the k-th distance so the neighbor
        // set is independent of point ordering.
        const double kth = sorted[static_cast<size_t>(k - 1)];
        const double cut = kth + 1e-9 * kth + 1e-24;
        for (int64_t i = 0; i < p; ++i) {
            if (d2[static_cast<size_t>(i)] <= cut) es.src.push_back(i);
        }
        es.offsets.push_back(static_cast<int64_t>(es.src.size()));
    }

    const int64_t e = static_cast<int64_t>(es.src.size());
    es.feats = Tensor({e, 9});
    for (int64_t j = 0; j < q; ++j) {
        for (int64_t ee = es.offsets[static_cast<size_t>(j)];
             ee < es.offsets[static_cast<size_t>(j + 1)]; ++ee) {
            const int64_t i = es.src[static_cast<size_t>(ee)];
            for (int64_t a = 0; a < 3; ++a) {
                es.feats.at(ee, a) = src_coords.at(i, a);
                es.feats.at(ee, 3 + a) = dst_coords.at(j, a);
                es.feats.at(ee, 6 + a) = dst_coords.at(j, a) - src_coords.at(i, a);
            }
        }
    }
    return es;
}

static Tensor flatten_coords(const Tensor& coords) {
    // [3,H,W] -> [H*W,3]
    const int64_t hw = coords.dim(1) * coords.dim(2);
    Tensor out({hw, 3});
    for (int64_t a = 0; a < 3; ++a) {
        for (int64_t i = 0; i < hw; ++i) out.at(i, a) = coords[a * hw + i];
    }
    return out;
}

GraphUNet::GraphUNet(const GraphUNetConfig& cfg, const GridSpec& latent_grid, uint64_t seed)
    : cfg_(cfg), latent_grid_(latent_grid) {
    cfg_.validate();
    latent_grid_.validate();
    cfg_.core.in_channels = cfg_.latent_width;
    cfg_.core.out_channels = cfg_.latent_width;
    latent_coords_ = flatten_coords(sphere_coordinates(latent_grid_));

    Rng rng(seed);
    const int64_t d = cfg_.latent_width, kw = cfg_.kernel_width;
    auto kaiming = [](int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
    auto reg_linear = [&](const std::string& name, int64_t in, int64_t out) {
        register_param(name + ".weight", {in, out}, ParamInit::normal, kaiming(in), rng);
        register_param(name + ".bias", {out}, ParamInit::zeros, 0.0, rng);
    };
    auto reg_kernel = [&](const std::string& prefix) {
        reg_linear(prefix + ".k1", 9, kw);
        reg_linear(prefix + ".k2", kw, d * d);
    };

    reg_linear("lift", cfg_.in_channels, d);
    reg_kernel("enc_t");
    register_param("enc_t.bias", {d}, ParamInit::zeros, 0.0, rng);
    reg_kernel("enc_s");
    reg_linear("enc_s.self", d, d);

    core_ = std::make_unique<UNet>(cfg_.core, rng.fork(0xc03e).seed());
    for (const auto& p : core_->parameters()) {
        params_.push_back({"core." + p.name, p.var, p.init, p.init_std});
    }

    reg_kernel("dec_s");
    reg_linear("dec_s.self", d, d);
    reg_kernel("dec_t");
    register_param("dec_t.bias", {d}, ParamInit::zeros, 0.0, rng);
    reg_linear("proj", d, cfg_.out_channels);
}

std::vector<std::string> GraphUNet::head_param_names() const {
    return {"lift.weight", "lift.bias", "proj.weight", "proj.bias"};
}

ad::Var GraphUNet::kernel_mlp(const std::string& prefix, const Tensor& edge_feats) {
    ad::Var h = ad::linear(ad::constant(edge_feats), param(prefix + ".k1.weight"),
                           param(prefix + ".k1.bias"));
    h = ad::relu(h);
    return ad::linear(h, param(prefix + ".k2.weight"), param(prefix + ".k2.bias"));
}

ad::Var GraphUNet::transfer_layer(const std::string& prefix, const EdgeSet& edges,
                                  const ad::Var& u) {
    ad::Var kernels = kernel_mlp(prefix, edges.feats);
    ad::Var msg = ad::edge_matvec(kernels, u, edges.src, cfg_.latent_width);
    ad::Var agg = ad::scatter_mean(msg, edges.offsets);
    return ad::relu(ad::add_feature_bias(agg, param(prefix + ".bias")));
}

ad::Var GraphUNet::self_layer(const std::string& prefix, const EdgeSet& edges, const ad::Var& u) {
    ad::Var lin = ad::linear(u, param(prefix + ".self.weight"), param(prefix + ".self.bias"));
    ad::Var kernels = kernel_mlp(prefix, edges.feats);
    ad::Var msg = ad::edge_matvec(kernels, u, edges.src, cfg_.latent_width);
    ad::Var agg = ad::scatter_mean(msg, edges.offsets);
    return ad::relu(ad::add(lin, agg));
}

ad::Var GraphUNet::forward_points(const Tensor& in_coords, const ad::Var& feats,
                                  const Tensor& query_coords) {
    if (feats->value.ndim() != 3 || feats->value.dim(2) != cfg_.in_channels) {
        throw std::invalid_argument("point features must be [N,P," +
                                    std::to_string(cfg_.in_channels) + "]");
    }
    if (feats->value.dim(1) != in_coords.dim(0)) {
        throw std::invalid_argument("feature point count does not match coordinates");
    }

    EdgeSet enc_edges = build_knn_edges(in_coords, latent_coords_, cfg_.k);
    EdgeSet latent_edges = build_knn_edges(latent_coords_, latent_coords_, cfg_.k);
    EdgeSet dec_edges = build_knn_edges(latent_coords_, query_coords, cfg_.k);

    ad::Var u = ad::linear(feats, param("lift.weight"), param("lift.bias"));
    ad::Var v = transfer_layer("enc_t", enc_edges, u);
    v = self_layer("enc_s", latent_edges, v);

    ad::Var grid = ad::channels_first(v, latent_grid_.n_lat, latent_grid_.n_lon);
    grid = core_->forward(grid);
    v = ad::channels_last(grid);

    v = self_layer("dec_s", latent_edges, v);
    ad::Var kernels = kernel_mlp("dec_t", dec_edges.feats);
    ad::Var msg = ad::edge_matvec(kernels, v, dec_edges.src, cfg_.latent_width);
    ad::Var z = ad::relu(ad::add_feature_bias(ad::scatter_mean(msg, dec_edges.offsets),
                                              param("dec_t.bias")));
    return ad::linear(z, param("proj.weight"), param("proj.bias"));
}

ad::Var GraphUNet::forward(const ad::Var& x) {
    if (x->value.ndim() != 4 || x->value.dim(1) != cfg_.in_channels ||
        x->value.dim(2) != latent_grid_.n_lat || x->value.dim(3) != latent_grid_.n_lon) {
        throw std::invalid_argument("GraphUNet input must be [N," +
                                    std::to_string(cfg_.in_channels) + "," +
                                    std::to_string(latent_grid_.n_lat) + "," +
                                    std::to_string(latent_grid_.n_lon) + "], got " +
                                    x->value.shape_str());
    }
    ad::Var feats = ad::channels_last(x);
    ad::Var out = forward_points(latent_coords_, feats, latent_coords_);
    return ad::channels_first(out, latent_grid_.n_lat, latent_grid_.n_lon);
}

}  // namespace wxlab
