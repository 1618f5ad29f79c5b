#include "lipforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lipforge/layers.hpp"
#include "lipforge/rng.hpp"
#include "lipforge/scaling.hpp"

namespace lipforge::trainer {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kAdamEps = 1e-8;

// Modified Gram-Schmidt on the smaller side: rows for wide matrices,
// columns for tall ones, so the result has orthonormal rows (resp. columns).
DenseMatrix orthogonalish(std::size_t rows, std::size_t cols, Rng& rng) {
    DenseMatrix a = gaussian_matrix(rows, cols, rng);
    const bool by_rows = rows <= cols;
    const std::size_t outer = by_rows ? rows : cols;
    const std::size_t inner = by_rows ? cols : rows;
    auto at = [&](std::size_t i, std::size_t k) -> double& {
        return by_rows ? a(i, k) : a(k, i);
    };
    for (std::size_t i = 0; i < outer; ++i) {
        for (std::size_t p = 0; p < i; ++p) {
            double proj = 0.0;
            for (std::size_t k = 0; k < inner; ++k) proj += at(i, k) * at(p, k);
            for (std::size_t k = 0; k < inner; ++k) at(i, k) -= proj * at(p, k);
        }
        double nrm = 0.0;
        for (std::size_t k = 0; k < inner; ++k) nrm += at(i, k) * at(i, k);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) {
            // Degenerate draw (measure zero): restart this vector from a basis
            // direction and redo the projections once.
            for (std::size_t k = 0; k < inner; ++k) at(i, k) = (k == i % inner) ? 1.0 : 0.0;
            for (std::size_t p = 0; p < i; ++p) {
                double proj = 0.0;
                for (std::size_t k = 0; k < inner; ++k) proj += at(i, k) * at(p, k);
                for (std::size_t k = 0; k < inner; ++k) at(i, k) -= proj * at(p, k);
            }
            nrm = 0.0;
            for (std::size_t k = 0; k < inner; ++k) nrm += at(i, k) * at(i, k);
            nrm = std::sqrt(nrm);
        }
        for (std::size_t k = 0; k < inner; ++k) at(i, k) /= nrm;
    }
    return a;
}

struct AdamState {
    DenseMatrix mw, vw;
    Vector mb, vb, mr, vr;
};

void adam_step(double* param, double* mom, double* vel, const double* grad, std::size_t n,
               double lr_t, double b1, double b2, double bc1, double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        mom[i] = b1 * mom[i] + (1.0 - b1) * grad[i];
        vel[i] = b2 * vel[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mhat = mom[i] / bc1;
        const double vhat = vel[i] / bc2;
        param[i] -= lr_t * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

void require_trainable(const model::Model& m) {
    if (m.layers.empty()) throw DomainError("train: model has no layers");
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        const model::Layer& layer = m.layers[k];
        if (layer.t_method != model::TMethod::SLL) {
            throw DomainError("train: layer " + std::to_string(k) +
                              " must use the q-weighted scaling");
        }
        if (!layer.explicit_t.empty()) {
            throw DomainError("train: layer " + std::to_string(k) +
                              " pins its scaling; cannot train through a pinned T");
        }
        const bool last = (k + 1 == m.layers.size());
        if (last) {
            if (layer.form != model::LayerForm::Linear) {
                throw DomainError("train: the final layer must be the linear head");
            }
        } else if (layer.form == model::LayerForm::Linear) {
            if (k != 0) {
                throw DomainError("train: a linear lift is only accepted as the first layer");
            }
        } else if (layer.form != model::LayerForm::Residual) {
            throw DomainError("train: layer " + std::to_string(k) +
                              " must be a residual layer");
        }
        if (layer.q.size() != layer.ws.w.cols()) {
            throw DomainError("train: layer " + std::to_string(k) + " has no q vector");
        }
    }
}

void assert_feasibility(const model::Model& m, const char* when) {
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
        const model::Layer& layer = m.layers[k];
        const auto sv =
            scaling::t_sll(layer.ws.w, scaling::QVector(layer.q), scaling::MarginPolicy::Certificate);
        const double margin = scaling::check_feasible(layer.ws.w, sv);
        if (margin < -scaling::psd_tolerance(sv.margin_scale)) {
            throw FeasibilityError("layer " + std::to_string(k) + ": feasibility re-assertion " +
                                   when + " failed with margin " + std::to_string(margin) +
                                   " (scale " + std::to_string(sv.margin_scale) + ")");
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(temperature > 0.0)) throw DomainError("TrainConfig: temperature must be > 0");
    if (!(offset >= 0.0)) throw DomainError("TrainConfig: offset must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw DomainError("TrainConfig: beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("TrainConfig: beta2 must be in [0,1)");
    if (batch_size == 0) throw DomainError("TrainConfig: batch_size must be >= 1");
    if (!(lr >= 0.0)) throw DomainError("TrainConfig: lr must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
        throw DomainError("TrainConfig: warmup_fraction must be in [0,1]");
    }
}

std::pair<double, Vector> margin_ce_loss(const Vector& logits, std::size_t label,
                                         double temperature, double offset) {
    if (!(temperature > 0.0)) throw DomainError("margin_ce_loss: temperature must be > 0");
    if (label >= logits.size()) throw DimensionError("margin_ce_loss: label out of range");

    Vector z = logits;
    z[label] -= offset;
    for (double& v : z) v /= temperature;

    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    const double loss = lse - z[label];

    Vector grad(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double p = std::exp(z[j] - lse);
        grad[j] = (p - (j == label ? 1.0 : 0.0)) / temperature;
    }
    return {loss, grad};
}

Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n % 2 != 0 || n < 4) throw DomainError("make_two_moons: n must be even and >= 4");
    const std::size_t half = n / 2;
    Rng rng(seed);

    DenseMatrix pts(2, n);
    std::vector<int> labels(n, 0);
    for (std::size_t i = 0; i < half; ++i) {
        const double t = kPi * static_cast<double>(i) / static_cast<double>(half - 1);
        pts(0, i) = std::cos(t);
        pts(1, i) = std::sin(t);
        labels[i] = 0;
        pts(0, half + i) = 1.0 - std::cos(t);
        pts(1, half + i) = 0.5 - std::sin(t);
        labels[half + i] = 1;
    }
    for (std::size_t c = 0; c < n; ++c) {
        pts(0, c) += noise * rng.normal();
        pts(1, c) += noise * rng.normal();
    }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.index(i + 1);
        std::swap(perm[i], perm[j]);
    }

    const std::size_t n_train = n * 8 / 10;
    Dataset data;
    data.num_classes = 2;
    data.train_inputs = DenseMatrix(2, n_train);
    data.test_inputs = DenseMatrix(2, n - n_train);
    data.train_labels.resize(n_train);
    data.test_labels.resize(n - n_train);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = perm[k];
        if (k < n_train) {
            data.train_inputs(0, k) = pts(0, src);
            data.train_inputs(1, k) = pts(1, src);
            data.train_labels[k] = labels[src];
        } else {
            data.test_inputs(0, k - n_train) = pts(0, src);
            data.test_inputs(1, k - n_train) = pts(1, src);
            data.test_labels[k - n_train] = labels[src];
        }
    }
    return data;
}

model::Model make_sll_net(std::size_t input_dim, std::size_t width, std::size_t depth,
                          std::size_t num_classes, std::uint64_t seed) {
    if (input_dim == 0 || width == 0 || num_classes == 0) {
        throw DomainError("make_sll_net: dimensions must be positive");
    }
    Rng rng(mix_seed(seed, 0x1417));
    model::Model m;
    for (std::size_t d = 0; d < depth; ++d) {
        model::Layer layer;
        layer.form = model::LayerForm::Residual;
        layer.t_method = model::TMethod::SLL;
        layer.act = layers::ActivationKind::ReLU;
        layer.has_activation = true;
        layer.ws.w = orthogonalish(input_dim, width, rng);
        layer.ws.b.assign(width, 0.0);
        layer.q.assign(width, 1.0);
        m.layers.push_back(std::move(layer));
    }
    model::Layer head;
    head.form = model::LayerForm::Linear;
    head.t_method = model::TMethod::SLL;
    head.has_activation = false;
    head.ws.w = orthogonalish(num_classes, input_dim, rng);
    head.ws.b.assign(num_classes, 0.0);
    head.q.assign(input_dim, 1.0);
    m.layers.push_back(std::move(head));
    m.refresh_scalings(scaling::MarginPolicy::Auto);
    return m;
}

double triangular_lr(std::size_t step, std::size_t total_steps, double warmup_fraction) {
    if (total_steps == 0) return 0.0;
    std::size_t warmup = static_cast<std::size_t>(
        std::llround(warmup_fraction * static_cast<double>(total_steps)));
    warmup = std::max<std::size_t>(warmup, 1);
    warmup = std::min(warmup, total_steps);
    if (step <= warmup) {
        return static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps == warmup) return 0.0;
    return static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

TrainResult train(model::Model& m, const Dataset& data, const TrainConfig& cfg,
                  bool assert_every_step) {
    cfg.validate();
    require_trainable(m);
    const std::size_t n_train = data.train_inputs.cols();
    if (n_train == 0) throw DomainError("train: empty training split");
    if (data.train_labels.size() != n_train) {
        throw DimensionError("train: training labels do not match sample count");
    }
    if (data.train_inputs.rows() != m.input_dim()) {
        throw DimensionError("train: dataset feature dimension does not match the model");
    }
    if (data.num_classes != m.output_dim()) {
        throw DimensionError("train: class count does not match the model head");
    }
    for (int lab : data.train_labels) {
        if (lab < 0 || static_cast<std::size_t>(lab) >= data.num_classes) {
            throw DomainError("train: label out of range");
        }
    }

    const std::size_t n_layers = m.layers.size();
    std::vector<Vector> rho(n_layers);
    std::vector<AdamState> opt(n_layers);
    for (std::size_t k = 0; k < n_layers; ++k) {
        model::Layer& layer = m.layers[k];
        rho[k].resize(layer.q.size());
        for (std::size_t j = 0; j < layer.q.size(); ++j) rho[k][j] = std::log(layer.q[j]);
        opt[k].mw = DenseMatrix(layer.ws.w.rows(), layer.ws.w.cols());
        opt[k].vw = DenseMatrix(layer.ws.w.rows(), layer.ws.w.cols());
        opt[k].mb.assign(layer.ws.b.size(), 0.0);
        opt[k].vb.assign(layer.ws.b.size(), 0.0);
        opt[k].mr.assign(rho[k].size(), 0.0);
        opt[k].vr.assign(rho[k].size(), 0.0);
    }

    const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x51));
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    std::size_t step_count = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n_train - 1; i > 0; --i) {
            const std::size_t j = shuffle_rng.index(i + 1);
            std::swap(order[i], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t loss_count = 0;

        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, n_train - start);
            DenseMatrix x(m.input_dim(), bsz);
            std::vector<int> y(bsz);
            for (std::size_t c = 0; c < bsz; ++c) {
                const std::size_t src = order[start + c];
                for (std::size_t r = 0; r < x.rows(); ++r) x(r, c) = data.train_inputs(r, src);
                y[c] = data.train_labels[src];
            }

            for (std::size_t k = 0; k < n_layers; ++k) {
                m.layers[k].refresh_scaling(scaling::MarginPolicy::Certificate);
            }

            std::vector<DenseMatrix> inputs;
            const DenseMatrix logits = m.forward_cached(x, &inputs);

            double batch_loss = 0.0;
            DenseMatrix upstream(logits.rows(), logits.cols());
            for (std::size_t c = 0; c < bsz; ++c) {
                Vector z(logits.rows());
                for (std::size_t r = 0; r < z.size(); ++r) z[r] = logits(r, c);
                auto [lv, g] = margin_ce_loss(z, static_cast<std::size_t>(y[c]),
                                              cfg.temperature, cfg.offset);
                batch_loss += lv;
                for (std::size_t r = 0; r < z.size(); ++r) {
                    upstream(r, c) = g[r] / static_cast<double>(bsz);
                }
            }
            batch_loss /= static_cast<double>(bsz);
            if (!std::isfinite(batch_loss)) {
                throw Error("train: non-finite loss at step " + std::to_string(step_count + 1));
            }
            loss_sum += batch_loss * static_cast<double>(bsz);
            loss_count += bsz;

            std::vector<layers::LayerGrad> grads(n_layers);
            DenseMatrix up = upstream;
            for (std::size_t k = n_layers; k-- > 0;) {
                model::Layer& layer = m.layers[k];
                const scaling::QVector qv{Vector(layer.q)};
                if (layer.form == model::LayerForm::Linear) {
                    grads[k] = layers::linear_backward(layer.ws, qv, inputs[k], up);
                } else {
                    grads[k] = layers::residual_backward(layer.ws, qv, layer.act, inputs[k], up);
                }
                up = grads[k].d_x;
            }

            ++step_count;
            const double lr_t = cfg.lr * triangular_lr(step_count, total_steps, cfg.warmup_fraction);
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
            for (std::size_t k = 0; k < n_layers; ++k) {
                model::Layer& layer = m.layers[k];
                adam_step(layer.ws.w.data(), opt[k].mw.data(), opt[k].vw.data(),
                          grads[k].d_w.data(), layer.ws.w.size(), lr_t, cfg.beta1, cfg.beta2,
                          bc1, bc2);
                adam_step(layer.ws.b.data(), opt[k].mb.data(), opt[k].vb.data(),
                          grads[k].d_b.data(), layer.ws.b.size(), lr_t, cfg.beta1, cfg.beta2,
                          bc1, bc2);
                Vector d_rho(rho[k].size());
                for (std::size_t j = 0; j < d_rho.size(); ++j) {
                    d_rho[j] = layer.q[j] * grads[k].d_q[j];
                }
                adam_step(rho[k].data(), opt[k].mr.data(), opt[k].vr.data(), d_rho.data(),
                          rho[k].size(), lr_t, cfg.beta1, cfg.beta2, bc1, bc2);
                for (std::size_t j = 0; j < rho[k].size(); ++j) layer.q[j] = std::exp(rho[k][j]);
            }

            if (assert_every_step) assert_feasibility(m, "after an optimizer step");
        }

        for (std::size_t k = 0; k < n_layers; ++k) {
            m.layers[k].refresh_scaling(scaling::MarginPolicy::Certificate);
        }
        assert_feasibility(m, "at epoch end");

        const auto rep = verify::certify_dataset(m, data.test_inputs, data.test_labels, {0.1});
        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / static_cast<double>(loss_count);
        stats.nat_acc = rep.natural_accuracy;
        stats.cert_acc = rep.certified_accuracy[0];
        result.history.push_back(stats);
    }
    return result;
}

std::pair<double, verify::CertReport> evaluate(const model::Model& m, const Dataset& data,
                                               const Vector& radii) {
    const auto rep = verify::certify_dataset(m, data.test_inputs, data.test_labels, radii);
    return {rep.natural_accuracy, rep};
}

}  // namespace lipforge::trainer
