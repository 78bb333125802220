// SPDX-License-Identifier: Apache-2.0
//
// Model zoo: a configurable UNet with sphere-aware padding and a hybrid that
// wraps the UNet core in graph neural-operator encoder/decoder layers so the
// model is independent of the sampling grid.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "wxlab/autodiff.hpp"
#include "wxlab/grid.hpp"
#include "wxlab/tensor.hpp"

namespace wxlab {

struct PaddingScheme {
    ad::PadX x_mode = ad::PadX::circular;
    ad::PadY y_mode = ad::PadY::zero;
};

ad::PadX parse_pad_x(const std::string& name);
ad::PadY parse_pad_y(const std::string& name);
std::string pad_x_name(ad::PadX mode);
std::string pad_y_name(ad::PadY mode);

// How a parameter is (re)initialized: weights draw Normal(0, std) with a
// fan-in based std, biases start at zero, norm gains at one.
enum class ParamInit { normal, zeros, ones };

struct ParamEntry {
    std::string name;
    ad::Var var;
    ParamInit init = ParamInit::zeros;
    double init_std = 0.0;
};

// Base class for trainable models: a named-parameter registry plus the
// forward contract [N,C_in,H,W] -> [N,C_out,H,W].
class Model {
public:
    virtual ~Model() = default;

    virtual ad::Var forward(const ad::Var& x) = 0;
    virtual int64_t in_channels() const = 0;
    virtual int64_t out_channels() const = 0;
    // Parameters reinitialized when loading a checkpoint trained with other
    // head shapes (the input stem and output projection).
    virtual std::vector<std::string> head_param_names() const = 0;

    const std::vector<ParamEntry>& parameters() const { return params_; }
    ad::Var param(const std::string& name) const;  // throws on unknown name
    bool has_param(const std::string& name) const;

    int64_t count_parameters() const;
    // Convolution weight tensors only (rank 4), the count used by the
    // width-scaling law; biases and norm parameters are excluded.
    int64_t count_conv_weight_parameters() const;

    void zero_grad();
    // Redraws one parameter from its recorded init distribution.
    void reinit_parameter(const std::string& name, Rng& rng);

    // Convenience single-field forward: [C,H,W] in, [C_out,H,W] out.
    Tensor predict(const Tensor& field);

protected:
    ad::Var register_param(const std::string& name, std::vector<int64_t> shape, ParamInit init,
                           double init_std, Rng& rng);
    std::vector<ParamEntry> params_;
};

struct UNetConfig {
    int64_t n_blocks = 4;  // encoder levels, 2..5; widths double per level
    int64_t base_width = 64;
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    PaddingScheme padding;

    void validate() const;
};

// Encoder/decoder UNet. Every level runs two 3x3 convolutions with GroupNorm
// and ReLU; downsampling is a strided 3x3 convolution that doubles the
// width, upsampling a 2x2 transposed convolution; the decoder merges the
// skip path through a dedicated bias-free 3x3 convolution added to the
// upsampled path, so skips can be dropped (autoencoder pretraining) and
// freshly re-initialized later. Spatial dims must be divisible by
// 2^(n_blocks-1).
class UNet : public Model {
public:
    UNet(const UNetConfig& cfg, uint64_t seed);

    ad::Var forward(const ad::Var& x) override;
    int64_t in_channels() const override { return cfg_.in_channels; }
    int64_t out_channels() const override { return cfg_.out_channels; }
    std::vector<std::string> head_param_names() const override;

    const UNetConfig& config() const { return cfg_; }

    // Skip-connection policy used by autoencoder pretraining.
    void set_use_skips(bool on) { use_skips_ = on; }
    bool use_skips() const { return use_skips_; }
    std::vector<std::string> skip_param_names() const;
    void reinit_skip_parameters(Rng& rng);

    // Closed-form parameter counts for the topology above; they must agree
    // with count_parameters() exactly.
    static int64_t analytic_param_count(const UNetConfig& cfg);
    static int64_t analytic_conv_weight_count(const UNetConfig& cfg);

private:
    UNetConfig cfg_;
    bool use_skips_ = true;

    ad::Var conv3(const ad::Var& x, const std::string& name, int64_t stride, bool bias);
    ad::Var gn_relu(const ad::Var& x, const std::string& name);
};

struct GraphUNetConfig {
    UNetConfig core;           // in/out channels are overwritten with latent_width
    int64_t in_channels = 1;   // point feature channels in
    int64_t out_channels = 1;  // point feature channels out
    int64_t latent_width = 8;  // feature width on the latent grid
    int64_t k = 4;             // nearest neighbors for graph integration
    int64_t kernel_width = 16; // hidden width of the edge-kernel network

    void validate() const;
};

// Nearest-neighbor edges from every destination point to its k closest
// sources under chordal (3D Euclidean) distance. Ties with the k-th distance
// are all included so the neighborhoods, and thus the aggregation, do not
// depend on point order. Edges are grouped by destination.
struct EdgeSet {
    std::vector<int64_t> src;      // length E
    std::vector<int64_t> offsets;  // length Q+1
    Tensor feats;                  // [E,9]: src xyz, dst xyz, dst-src
};
EdgeSet build_knn_edges(const Tensor& src_coords, const Tensor& dst_coords, int64_t k);

// Graph neural-operator encoder (transfer + self layer), UNet core on the
// latent grid, and the symmetric decoder (self + transfer layer). Kernel
// weights are functions of the endpoint coordinates, so the encoder accepts
// arbitrary input point sets and the decoder arbitrary query sets.
class GraphUNet : public Model {
public:
    GraphUNet(const GraphUNetConfig& cfg, const GridSpec& latent_grid, uint64_t seed);

    // Input and query points both equal to the latent grid.
    ad::Var forward(const ad::Var& x) override;
    int64_t in_channels() const override { return cfg_.in_channels; }
    int64_t out_channels() const override { return cfg_.out_channels; }
    std::vector<std::string> head_param_names() const override;

    // Point-set forward: features [N,P,C_in] at in_coords [P,3], evaluated
    // at query_coords [Q,3]; returns [N,Q,C_out].
    ad::Var forward_points(const Tensor& in_coords, const ad::Var& feats,
                           const Tensor& query_coords);

    const GraphUNetConfig& config() const { return cfg_; }
    UNet& core() { return *core_; }

private:
    GraphUNetConfig cfg_;
    GridSpec latent_grid_;
    Tensor latent_coords_;  // [G,3]
    std::unique_ptr<UNet> core_;

    ad::Var kernel_mlp(const std::string& prefix, const Tensor& edge_feats);
    ad::Var transfer_layer(const std::string& prefix, const EdgeSet& edges, const ad::Var& u);
    ad::Var self_layer(const std::string& prefix, const EdgeSet& edges, const ad::Var& u);
};

}  // namespace wxlab
