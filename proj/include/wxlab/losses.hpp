// SPDX-License-Identifier: Apache-2.0
//
// Training losses (plain, latitude-weighted, composite, Huber) and the
// evaluation metrics (latitude-weighted ACC and RMSE), plus their CSV form.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "wxlab/tensor.hpp"

namespace wxlab {

enum class LossKind { mse, l1, huber, geo_mse, geo_l1, l1_l2 };

LossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(LossKind kind);

struct LossConfig {
    LossKind kind = LossKind::mse;
    double huber_delta = 1.0;  // kink location, in normalized units
    double l1_weight = 0.05;   // composite: l1_weight*L1 + (1-l1_weight)*MSE

    void validate() const;
};

// Mean loss over all elements of a [C,H,W] field or [N,C,H,W] batch:
//   mse    : e^2
//   l1     : |e|
//   huber  : e^2/2 when |e| <= delta, else delta*(|e| - delta/2)
//   geo_*  : same terms with row h scaled by row_weights[h]
//   l1_l2  : l1_weight*L1 + (1-l1_weight)*MSE
// row_weights must have length H for the geo_* kinds and may be empty
// otherwise. Throws on shape mismatch or non-finite inputs.
double loss_value(const Tensor& pred, const Tensor& target, const LossConfig& cfg,
                  const std::vector<double>& row_weights = {});

// Gradient of loss_value with respect to pred, same shape as pred.
Tensor loss_grad(const Tensor& pred, const Tensor& target, const LossConfig& cfg,
                 const std::vector<double>& row_weights = {});

// Elementwise loss term and its derivative in the error e = pred - target,
// before any averaging or latitude weighting. The composite l1_l2 kind is
// supported directly; the geo_* kinds reuse their plain terms.
double loss_term_value(const LossConfig& cfg, double e);
double loss_term_grad(const LossConfig& cfg, double e);

// Latitude-weighted RMSE per channel of a [C,H,W] field:
//   sqrt((1/(H*W)) * sum_h w(h) * sum_w e^2)
std::vector<double> metric_rmse(const Tensor& pred, const Tensor& target,
                                const std::vector<double>& row_weights);

// Latitude-weighted anomaly correlation per channel: weighted inner product
// over the product of weighted norms. A channel with a zero norm on either
// side is undefined; its slot gets NaN, `defined` (when non-null) records
// which channels were usable, and a warning is emitted.
std::vector<double> metric_acc(const Tensor& pred, const Tensor& target,
                               const std::vector<double>& row_weights,
                               std::vector<bool>* defined = nullptr);

// Per-channel metrics at one forecast horizon plus channel-mean aggregates.
struct MetricReport {
    int64_t horizon_steps = 0;
    std::vector<std::string> channel_names;
    std::vector<double> rmse;
    std::vector<double> acc;  // NaN where undefined
    std::vector<bool> acc_defined;
    double rmse_mean = 0.0;
    double acc_mean = 0.0;  // over defined channels only

    static MetricReport compute(int64_t horizon_steps, const std::vector<std::string>& names,
                                const Tensor& pred, const Tensor& target,
                                const std::vector<double>& row_weights);
    // Recomputes the aggregate fields from the per-channel vectors.
    void refresh_means();
};

// CSV rows: run_id,horizon_steps,channel,acc,rmse with one extra aggregate
// row per report using channel="MEAN".
std::string metrics_csv_header();
void append_metrics_csv(std::ostream& os, const std::string& run_id, const MetricReport& report);

}  // namespace wxlab
