// SPDX-License-Identifier: Apache-2.0

#include "wxlab/losses.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "wxlab/log.hpp"

namespace wxlab {

LossKind parse_loss_kind(const std::string& name) {
    if (name == "mse") return LossKind::mse;
    if (name == "l1") return LossKind::l1;
    if (name == "huber") return LossKind::huber;
    if (name == "geo_mse") return LossKind::geo_mse;
    if (name == "geo_l1") return LossKind::geo_l1;
    if (name == "l1_l2") return LossKind::l1_l2;
    throw std::invalid_argument("unknown loss kind '" + name + "'");
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::mse: return "mse";
        case LossKind::l1: return "l1";
        case LossKind::huber: return "huber";
        case LossKind::geo_mse: return "geo_mse";
        case LossKind::geo_l1: return "geo_l1";
        case LossKind::l1_l2: return "l1_l2";
    }
    throw std::invalid_argument("unknown loss kind");
}

void LossConfig::validate() const {
    if (huber_delta <= 0.0) throw std::invalid_argument("huber_delta must be positive");
    if (l1_weight < 0.0 || l1_weight > 1.0) {
        throw std::invalid_argument("l1_weight must lie in [0,1]");
    }
}

namespace {

struct LossShape {
    int64_t n, rows, cols, row_stride_elems;
};

// Validates shapes and the weights vector, returning the geometry needed to
// walk the batch with per-row weights.
LossShape check_loss_inputs(const Tensor& pred, const Tensor& target, const LossConfig& cfg,
                            const std::vector<double>& row_weights, bool need_finite) {
    cfg.validate();
    if (!pred.same_shape(target)) {
        throw std::invalid_argument("loss shape mismatch: pred " + pred.shape_str() + " vs target " +
                                    target.shape_str());
    }
    if (pred.ndim() < 2) throw std::invalid_argument("loss inputs must have at least 2 dims");
    if (need_finite && (!pred.all_finite() || !target.all_finite())) {
        throw std::runtime_error("loss inputs contain non-finite values");
    }

    LossShape s;
    s.rows = pred.dim(pred.ndim() - 2);
    s.cols = pred.dim(pred.ndim() - 1);
    s.n = pred.numel() / (s.rows * s.cols);
    s.row_stride_elems = s.cols;

    const bool geo = cfg.kind == LossKind::geo_mse || cfg.kind == LossKind::geo_l1;
    if (geo) {
        if (static_cast<int64_t>(row_weights.size()) != s.rows) {
            throw std::invalid_argument("geo loss needs one weight per latitude row (" +
                                        std::to_string(s.rows) + "), got " +
                                        std::to_string(row_weights.size()));
        }
    } else if (!row_weights.empty() && static_cast<int64_t>(row_weights.size()) != s.rows) {
        throw std::invalid_argument("row weight vector length does not match field rows");
    }
    return s;
}

double term_value(LossKind kind, double e, double delta) {
    switch (kind) {
        case LossKind::mse:
        case LossKind::geo_mse: return e * e;
        case LossKind::l1:
        case LossKind::geo_l1: return std::abs(e);
        case LossKind::huber:
            return std::abs(e) <= delta ? 0.5 * e * e : delta * (std::abs(e) - 0.5 * delta);
        default: throw std::invalid_argument("term_value: composite kind handled elsewhere");
    }
}

double term_grad(LossKind kind, double e, double delta) {
    switch (kind) {
        case LossKind::mse:
        case LossKind::geo_mse: return 2.0 * e;
        case LossKind::l1:
        case LossKind::geo_l1: return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
        case LossKind::huber:
            if (std::abs(e) <= delta) return e;
            return e > 0.0 ? delta : -delta;
        default: throw std::invalid_argument("term_grad: composite kind handled elsewhere");
    }
}

}  // namespace

double loss_value(const Tensor& pred, const Tensor& target, const LossConfig& cfg,
                  const std::vector<double>& row_weights) {
    if (cfg.kind == LossKind::l1_l2) {
        LossConfig c1 = cfg, c2 = cfg;
        c1.kind = LossKind::l1;
        c2.kind = LossKind::mse;
        return cfg.l1_weight * loss_value(pred, target, c1, row_weights) +
               (1.0 - cfg.l1_weight) * loss_value(pred, target, c2, row_weights);
    }

    const LossShape s = check_loss_inputs(pred, target, cfg, row_weights, true);
    const bool geo = cfg.kind == LossKind::geo_mse || cfg.kind == LossKind::geo_l1;

    double acc = 0.0;
    int64_t idx = 0;
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t h = 0; h < s.rows; ++h) {
            const double rw = geo ? row_weights[static_cast<size_t>(h)] : 1.0;
            double row = 0.0;
            for (int64_t w = 0; w < s.cols; ++w, ++idx) {
                row += term_value(cfg.kind, pred[idx] - target[idx], cfg.huber_delta);
            }
            acc += rw * row;
        }
    }
    return acc / static_cast<double>(pred.numel());
}

Tensor loss_grad(const Tensor& pred, const Tensor& target, const LossConfig& cfg,
                 const std::vector<double>& row_weights) {
    if (cfg.kind == LossKind::l1_l2) {
        LossConfig c1 = cfg, c2 = cfg;
        c1.kind = LossKind::l1;
        c2.kind = LossKind::mse;
        Tensor g1 = loss_grad(pred, target, c1, row_weights);
        Tensor g2 = loss_grad(pred, target, c2, row_weights);
        for (int64_t i = 0; i < g1.numel(); ++i) {
            g1[i] = cfg.l1_weight * g1[i] + (1.0 - cfg.l1_weight) * g2[i];
        }
        return g1;
    }

    const LossShape s = check_loss_inputs(pred, target, cfg, row_weights, true);
    const bool geo = cfg.kind == LossKind::geo_mse || cfg.kind == LossKind::geo_l1;
    const double scale = 1.0 / static_cast<double>(pred.numel());

    Tensor g(pred.shape());
    int64_t idx = 0;
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t h = 0; h < s.rows; ++h) {
            const double rw = (geo ? row_weights[static_cast<size_t>(h)] : 1.0) * scale;
            for (int64_t w = 0; w < s.cols; ++w, ++idx) {
                g[idx] = rw * term_grad(cfg.kind, pred[idx] - target[idx], cfg.huber_delta);
            }
        }
    }
    return g;
}

double loss_term_value(const LossConfig& cfg, double e) {
    if (cfg.kind == LossKind::l1_l2) {
        return cfg.l1_weight * std::abs(e) + (1.0 - cfg.l1_weight) * e * e;
    }
    return term_value(cfg.kind, e, cfg.huber_delta);
}

double loss_term_grad(const LossConfig& cfg, double e) {
    if (cfg.kind == LossKind::l1_l2) {
        const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
        return cfg.l1_weight * sgn + (1.0 - cfg.l1_weight) * 2.0 * e;
    }
    return term_grad(cfg.kind, e, cfg.huber_delta);
}

namespace {

void check_metric_inputs(const Tensor& pred, const Tensor& target,
                         const std::vector<double>& row_weights) {
    if (!pred.same_shape(target)) {
        throw std::invalid_argument("metric shape mismatch: pred " + pred.shape_str() +
                                    " vs target " + target.shape_str());
    }
    if (pred.ndim() != 3) throw std::invalid_argument("metrics expect [C,H,W] fields");
    if (static_cast<int64_t>(row_weights.size()) != pred.dim(1)) {
        throw std::invalid_argument("metric weights must have one entry per latitude row");
    }
}

}  // namespace

std::vector<double> metric_rmse(const Tensor& pred, const Tensor& target,
                                const std::vector<double>& row_weights) {
    check_metric_inputs(pred, target, row_weights);
    const int64_t c = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
    std::vector<double> out(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t i = 0; i < h; ++i) {
            double row = 0.0;
            for (int64_t j = 0; j < w; ++j) {
                const double e = pred.at(ch, i, j) - target.at(ch, i, j);
                row += e * e;
            }
            acc += row_weights[static_cast<size_t>(i)] * row;
        }
        out[static_cast<size_t>(ch)] = std::sqrt(acc / static_cast<double>(h * w));
    }
    return out;
}

std::vector<double> metric_acc(const Tensor& pred, const Tensor& target,
                               const std::vector<double>& row_weights,
                               std::vector<bool>* defined) {
    check_metric_inputs(pred, target, row_weights);
    const int64_t c = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
    const double inv_hw = 1.0 / static_cast<double>(h * w);

    std::vector<double> out(static_cast<size_t>(c));
    if (defined) defined->assign(static_cast<size_t>(c), true);
    for (int64_t ch = 0; ch < c; ++ch) {
        double num = 0.0, pp = 0.0, tt = 0.0;
        for (int64_t i = 0; i < h; ++i) {
            const double rw = row_weights[static_cast<size_t>(i)];
            for (int64_t j = 0; j < w; ++j) {
                const double p = pred.at(ch, i, j), t = target.at(ch, i, j);
                num += rw * p * t;
                pp += rw * p * p;
                tt += rw * t * t;
            }
        }
        const double den = std::sqrt(inv_hw * pp) * std::sqrt(inv_hw * tt);
        if (den == 0.0) {
            log_warning("ACC undefined for channel " + std::to_string(ch) +
                        " (zero weighted norm); excluded from the mean");
            out[static_cast<size_t>(ch)] = std::numeric_limits<double>::quiet_NaN();
            if (defined) (*defined)[static_cast<size_t>(ch)] = false;
            continue;
        }
        out[static_cast<size_t>(ch)] = inv_hw * num / den;
    }
    return out;
}

MetricReport MetricReport::compute(int64_t horizon_steps, const std::vector<std::string>& names,
                                   const Tensor& pred, const Tensor& target,
                                   const std::vector<double>& row_weights) {
    MetricReport r;
    r.horizon_steps = horizon_steps;
    r.channel_names = names;
    r.rmse = metric_rmse(pred, target, row_weights);
    r.acc = metric_acc(pred, target, row_weights, &r.acc_defined);
    if (names.size() != r.rmse.size()) {
        throw std::invalid_argument("channel name count does not match field channels");
    }
    r.refresh_means();
    return r;
}

void MetricReport::refresh_means() {
    double rs = 0.0, as = 0.0;
    int64_t n_acc = 0;
    for (size_t i = 0; i < rmse.size(); ++i) {
        rs += rmse[i];
        if (acc_defined.empty() || acc_defined[i]) {
            as += acc[i];
            ++n_acc;
        }
    }
    rmse_mean = rmse.empty() ? 0.0 : rs / static_cast<double>(rmse.size());
    acc_mean = n_acc == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : as / static_cast<double>(n_acc);
}

std::string metrics_csv_header() { return "run_id,horizon_steps,channel,acc,rmse"; }

static void csv_row(std::ostream& os, const std::string& run_id, int64_t horizon,
                    const std::string& channel, double acc, double rmse) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", acc, rmse);
    os << run_id << "," << horizon << "," << channel << "," << buf << "\n";
}

void append_metrics_csv(std::ostream& os, const std::string& run_id, const MetricReport& report) {
    for (size_t i = 0; i < report.rmse.size(); ++i) {
        csv_row(os, run_id, report.horizon_steps, report.channel_names[i], report.acc[i],
                report.rmse[i]);
    }
    csv_row(os, run_id, report.horizon_steps, "MEAN", report.acc_mean, report.rmse_mean);
}

}  // namespace wxlab
