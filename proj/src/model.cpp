// SPDX-License-Identifier: Apache-2.0

#include "wxlab/models.hpp"

#include <stdexcept>

namespace wxlab {

ad::PadX parse_pad_x(const std::string& name) {
    if (name == "zero") return ad::PadX::zero;
    if (name == "circular") return ad::PadX::circular;
    throw std::invalid_argument("unknown x padding mode '" + name + "'");
}

ad::PadY parse_pad_y(const std::string& name) {
    if (name == "zero") return ad::PadY::zero;
    if (name == "reflect") return ad::PadY::reflect;
    throw std::invalid_argument("unknown y padding mode '" + name + "'");
}

std::string pad_x_name(ad::PadX mode) { return mode == ad::PadX::zero ? "zero" : "circular"; }
std::string pad_y_name(ad::PadY mode) { return mode == ad::PadY::zero ? "zero" : "reflect"; }

ad::Var Model::param(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p.var;
    }
    throw std::invalid_argument("unknown parameter '" + name + "'");
}

bool Model::has_param(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return true;
    }
    return false;
}

int64_t Model::count_parameters() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.var->value.numel();
    return n;
}

int64_t Model::count_conv_weight_parameters() const {
    int64_t n = 0;
    for (const auto& p : params_) {
        if (p.var->value.ndim() == 4) n += p.var->value.numel();
    }
    return n;
}

void Model::zero_grad() {
    for (auto& p : params_) p.var->clear_grad();
}

static void fill_param(Tensor& t, ParamInit init, double init_std, Rng& rng) {
    switch (init) {
        case ParamInit::normal: rng.fill_normal(t, 0.0, init_std); break;
        case ParamInit::zeros: t.fill(0.0); break;
        case ParamInit::ones: t.fill(1.0); break;
    }
}

void Model::reinit_parameter(const std::string& name, Rng& rng) {
    for (auto& p : params_) {
        if (p.name == name) {
            fill_param(p.var->value, p.init, p.init_std, rng);
            p.var->clear_grad();
            return;
        }
    }
    throw std::invalid_argument("unknown parameter '" + name + "'");
}

Tensor Model::predict(const Tensor& field) {
    if (field.ndim() != 3) throw std::invalid_argument("predict expects a [C,H,W] field");
    ad::NoGradGuard ng;
    Tensor batched = field.reshaped({1, field.dim(0), field.dim(1), field.dim(2)});
    ad::Var out = forward(ad::constant(std::move(batched)));
    const auto& v = out->value;
    return v.reshaped({v.dim(1), v.dim(2), v.dim(3)});
}

ad::Var Model::register_param(const std::string& name, std::vector<int64_t> shape, ParamInit init,
                              double init_std, Rng& rng) {
    for (const auto& p : params_) {
        if (p.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    }
    Tensor t(std::move(shape));
    fill_param(t, init, init_std, rng);
    ParamEntry e;
    e.name = name;
    e.var = ad::leaf(std::move(t));
    e.init = init;
    e.init_std = init_std;
    params_.push_back(e);
    return e.var;
}

}  // namespace wxlab
