#include "tenscirc/learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "kernels.hpp"
#include "tenscirc/rng.hpp"

namespace tenscirc {

using kernels::kNegInf;

double nll(const Circuit& c, const Batch& batch) {
    std::vector<double> out = forward_log(c, batch);
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!std::isfinite(out[i])) {
            throw std::runtime_error("nll: non-finite log-likelihood at datum " +
                                     std::to_string(i));
        }
        total += out[i];
    }
    double logz = log_partition(c);
    return -(total / batch.size) + logz;
}

double bpd(const Circuit& c, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("bpd: empty dataset");
    return nll(c, data.full_batch()) / (c.var_count() * std::log(2.0));
}

// ---------------------------------------------------------------------------
// Reverse mode
// ---------------------------------------------------------------------------

namespace {

// One adjoint sweep over the unfolded layer list. `seed` is the adjoint of
// the scalar output per batch element.
void adjoint_pass(const Circuit& c, const Batch& batch, const Activations& acts,
                  double seed, GradStore& grads) {
    std::vector<std::vector<double>> adj(c.layers().size());
    for (const Layer& l : c.layers()) {
        adj[static_cast<std::size_t>(l.id)].assign(
            static_cast<std::size_t>(batch.size) * l.width, 0.0);
    }
    {
        auto& out_adj = adj[static_cast<std::size_t>(c.output())];
        for (int b = 0; b < batch.size; ++b) out_adj[static_cast<std::size_t>(b)] = seed;
    }
    for (int id = static_cast<int>(c.layers().size()) - 1; id >= 0; --id) {
        const Layer& l = c.layer(id);
        const auto& out_adj = adj[static_cast<std::size_t>(id)];
        switch (l.kind) {
            case LayerKind::Input: {
                if (l.param >= 0 && c.param(l.param).trainable) {
                    kernels::backward_input_log(c, l, batch, out_adj.data(),
                                                grads.grads[static_cast<std::size_t>(l.param)]);
                }
                break;
            }
            case LayerKind::Hadamard: {
                std::vector<double*> in_adj;
                for (int in : l.inputs) in_adj.push_back(adj[static_cast<std::size_t>(in)].data());
                kernels::backward_hadamard_log(l, batch.size, out_adj.data(), in_adj);
                break;
            }
            case LayerKind::Kronecker: {
                std::vector<double*> in_adj;
                for (int in : l.inputs) in_adj.push_back(adj[static_cast<std::size_t>(in)].data());
                kernels::backward_kronecker_log(c, l, batch.size, out_adj.data(), in_adj);
                break;
            }
            case LayerKind::Sum: {
                std::vector<const double*> in_logs;
                std::vector<double*> in_adj;
                for (int in : l.inputs) {
                    in_logs.push_back(acts.layer_log[static_cast<std::size_t>(in)].data());
                    in_adj.push_back(adj[static_cast<std::size_t>(in)].data());
                }
                std::vector<double> weights = c.sum_weights_raw(id);
                std::vector<double> weight_adj(weights.size(), 0.0);
                kernels::backward_sum_log(c, l, batch.size, in_logs,
                                          acts.layer_log[static_cast<std::size_t>(id)].data(),
                                          out_adj.data(), weights, in_adj, weight_adj);
                const ParamBlock& p = c.param(l.param);
                if (p.trainable) {
                    kernels::apply_reparam_jacobian(c, l, weights, weight_adj,
                                                    grads.grads[static_cast<std::size_t>(l.param)]);
                }
                break;
            }
        }
    }
}

double backward_impl(const Circuit& c, const Batch& batch, GradStore& grads) {
    Activations acts;
    std::vector<double> out = forward_log(c, batch, &acts);
    double total = 0.0;
    for (double v : out) total += v;
    adjoint_pass(c, batch, acts, -1.0 / batch.size, grads);

    Batch allm = Batch::all_marginalized(c.var_count());
    Activations zacts;
    double logz = forward_log(c, allm, &zacts).front();
    adjoint_pass(c, allm, zacts, 1.0, grads);
    return -(total / batch.size) + logz;
}

// Group-major adjoint sweep over a folded circuit; gradients match the
// unfolded sweep up to accumulation order.
void adjoint_pass_folded(const FoldedCircuit& fc, const Batch& batch, const Activations& acts,
                         double seed, GradStore& grads) {
    const Circuit& c = fc.base();
    std::vector<std::vector<double>> adj(c.layers().size());
    for (const Layer& l : c.layers()) {
        adj[static_cast<std::size_t>(l.id)].assign(
            static_cast<std::size_t>(batch.size) * l.width, 0.0);
    }
    {
        auto& out_adj = adj[static_cast<std::size_t>(c.output())];
        for (int b = 0; b < batch.size; ++b) out_adj[static_cast<std::size_t>(b)] = seed;
    }
    for (int g = static_cast<int>(fc.groups().size()) - 1; g >= 0; --g) {
        const FoldGroup& group = fc.groups()[static_cast<std::size_t>(g)];
        for (int f = 0; f < group.fold_size(); ++f) {
            int id = group.members[static_cast<std::size_t>(f)];
            const Layer& l = c.layer(id);
            const auto& out_adj = adj[static_cast<std::size_t>(id)];
            switch (l.kind) {
                case LayerKind::Input:
                    if (l.param >= 0 && c.param(l.param).trainable) {
                        kernels::backward_input_log(
                            c, l, batch, out_adj.data(),
                            grads.grads[static_cast<std::size_t>(l.param)]);
                    }
                    break;
                case LayerKind::Hadamard: {
                    std::vector<double*> in_adj;
                    for (int in : l.inputs) {
                        in_adj.push_back(adj[static_cast<std::size_t>(in)].data());
                    }
                    kernels::backward_hadamard_log(l, batch.size, out_adj.data(), in_adj);
                    break;
                }
                case LayerKind::Kronecker: {
                    std::vector<double*> in_adj;
                    for (int in : l.inputs) {
                        in_adj.push_back(adj[static_cast<std::size_t>(in)].data());
                    }
                    kernels::backward_kronecker_log(c, l, batch.size, out_adj.data(), in_adj);
                    break;
                }
                case LayerKind::Sum: {
                    std::vector<const double*> in_logs;
                    std::vector<double*> in_adj;
                    for (int in : l.inputs) {
                        in_logs.push_back(acts.layer_log[static_cast<std::size_t>(in)].data());
                        in_adj.push_back(adj[static_cast<std::size_t>(in)].data());
                    }
                    std::vector<double> weights = c.sum_weights_raw(id);
                    std::vector<double> weight_adj(weights.size(), 0.0);
                    kernels::backward_sum_log(c, l, batch.size, in_logs,
                                              acts.layer_log[static_cast<std::size_t>(id)].data(),
                                              out_adj.data(), weights, in_adj, weight_adj);
                    const ParamBlock& p = c.param(l.param);
                    if (p.trainable) {
                        kernels::apply_reparam_jacobian(
                            c, l, weights, weight_adj,
                            grads.grads[static_cast<std::size_t>(l.param)]);
                    }
                    break;
                }
            }
        }
    }
}

double backward_impl(const FoldedCircuit& fc, const Batch& batch, GradStore& grads) {
    Activations acts;
    std::vector<double> out = forward_log(fc, batch, &acts);
    double total = 0.0;
    for (double v : out) total += v;
    adjoint_pass_folded(fc, batch, acts, -1.0 / batch.size, grads);

    Batch allm = Batch::all_marginalized(fc.base().var_count());
    Activations zacts;
    double logz = forward_log(fc, allm, &zacts).front();
    adjoint_pass_folded(fc, allm, zacts, 1.0, grads);
    return -(total / batch.size) + logz;
}

}  // namespace

GradStore backward(const Circuit& c, const Batch& batch) {
    GradStore grads(c);
    backward_impl(c, batch, grads);
    return grads;
}

GradStore backward(const FoldedCircuit& fc, const Batch& batch) {
    GradStore grads(fc.base());
    backward_impl(fc, batch, grads);
    return grads;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const Circuit& c, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(c.params().size());
    v_.resize(c.params().size());
    for (std::size_t i = 0; i < c.params().size(); ++i) {
        m_[i].assign(c.params()[i].size(), 0.0);
        v_[i].assign(c.params()[i].size(), 0.0);
    }
}

void AdamOptimizer::step(Circuit& c, const GradStore& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < grads.grads.size(); ++p) {
        ParamBlock& block = c.param(static_cast<int>(p));
        if (!block.trainable) continue;
        auto& m = m_[p];
        auto& v = v_[p];
        const auto& g = grads.grads[p];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            block.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        if (block.reparam == Reparam::Clamp) {
            // Projection onto the positive orthant after the step.
            for (double& x : block.data) x = std::max(x, kClampEpsilon);
        }
    }
}

TrainResult train(Circuit& c, const Dataset& train_data, const Dataset& valid_data,
                  const TrainConfig& config) {
    if (train_data.size() == 0 || valid_data.size() == 0) {
        throw std::invalid_argument("train: datasets must be nonempty");
    }
    TrainResult result;
    FoldedCircuit fc = fold(c);
    Circuit& model = config.use_fold ? fc.base() : c;

    AdamOptimizer adam(model, config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    const int n = train_data.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    auto snapshot_params = [&]() {
        std::vector<std::vector<double>> snap;
        snap.reserve(model.params().size());
        for (const ParamBlock& p : model.params()) snap.push_back(p.data);
        return snap;
    };
    auto restore_params = [&](const std::vector<std::vector<double>>& snap) {
        for (std::size_t i = 0; i < snap.size(); ++i) model.param(static_cast<int>(i)).data = snap[i];
    };

    // The starting point competes too: fine-tuning from a good
    // initialization must never return something worse than it.
    std::vector<std::vector<double>> best = snapshot_params();
    double best_valid = std::numeric_limits<double>::infinity();
    try {
        best_valid = nll(model, valid_data.full_batch());
    } catch (const std::exception&) {
        // Unevaluable start (e.g. -inf likelihood); any finite epoch wins.
    }
    int best_epoch = -1;
    int stale_epochs = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(Rng::split(config.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_nll = 0.0;
        int seen = 0;
        bool bad = false;
        for (int start = 0; start < n; start += config.batch_size) {
            int stop = std::min(n, start + config.batch_size);
            std::vector<int> rows(order.begin() + start, order.begin() + stop);
            Batch batch = train_data.batch_of(rows);
            GradStore grads(model);
            double batch_nll;
            try {
                batch_nll = config.use_fold ? backward_impl(fc, batch, grads)
                                            : backward_impl(model, batch, grads);
            } catch (const std::exception&) {
                bad = true;
                break;
            }
            if (!std::isfinite(batch_nll)) {
                bad = true;
                break;
            }
            epoch_nll += batch_nll * (stop - start);
            seen += stop - start;
            adam.step(model, grads);
        }
        if (bad) {
            restore_params(best);
            result.aborted_non_finite = true;
            break;
        }
        double valid_nll_value;
        try {
            valid_nll_value = nll(model, valid_data.full_batch());
        } catch (const std::exception&) {
            restore_params(best);
            result.aborted_non_finite = true;
            break;
        }
        auto t1 = std::chrono::steady_clock::now();
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_nll = epoch_nll / std::max(seen, 1);
        stats.valid_nll = valid_nll_value;
        stats.valid_bpd = valid_nll_value / (model.var_count() * std::log(2.0));
        stats.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.history.push_back(stats);
        if (config.verbose) {
            std::fprintf(stderr, "epoch %3d  train %.5f  valid %.5f  bpd %.5f  (%.0f ms)\n",
                         epoch, stats.train_nll, stats.valid_nll, stats.valid_bpd,
                         stats.wall_ms);
        }

        if (valid_nll_value < best_valid) {
            best_valid = valid_nll_value;
            best_epoch = epoch;
            best = snapshot_params();
            stale_epochs = 0;
        } else if (++stale_epochs >= config.patience) {
            break;
        }
    }
    if (best_epoch >= 0) restore_params(best);
    result.best_valid_nll = best_valid;
    result.best_epoch = best_epoch;
    if (config.use_fold) c = fc.base();
    return result;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Circuit normalize(const Circuit& c) {
    if (!c.monotonic() || !check_smooth(c) || !check_decomposable(c)) {
        throw std::invalid_argument("normalize: requires a monotonic smooth decomposable circuit");
    }
    for (const Layer& l : c.layers()) {
        if (l.kind == LayerKind::Input && l.family == InputFamily::Embedding) {
            throw std::invalid_argument("normalize: embedding inputs are not distributions");
        }
    }
    // Per-unit masses: one all-marginalized pass caches every layer's
    // log-normalization vector.
    Activations acts;
    forward_log(c, Batch::all_marginalized(c.var_count()), &acts);

    Circuit out = c;
    std::vector<int> param_refs(c.params().size(), 0);
    for (const Layer& l : c.layers()) {
        if (l.param >= 0) ++param_refs[static_cast<std::size_t>(l.param)];
    }
    for (const Layer& l : c.layers()) {
        if (l.kind != LayerKind::Sum) continue;
        const auto& out_mass = acts.layer_log[static_cast<std::size_t>(l.id)];
        std::vector<double> in_mass;
        for (int in : l.inputs) {
            const auto& m = acts.layer_log[static_cast<std::size_t>(in)];
            in_mass.insert(in_mass.end(), m.begin(), m.end());
        }
        std::vector<double> w = c.sum_weights_raw(l.id);
        std::vector<double> rescaled(w.size());
        const int k = l.width;
        if (l.structure == SumStructure::Dense) {
            const int cols = static_cast<int>(in_mass.size());
            for (int s = 0; s < k; ++s) {
                if (out_mass[static_cast<std::size_t>(s)] == kNegInf) {
                    throw std::invalid_argument("normalize: sum unit with zero mass");
                }
                for (int m = 0; m < cols; ++m) {
                    rescaled[static_cast<std::size_t>(s) * cols + m] =
                        w[static_cast<std::size_t>(s) * cols + m] *
                        std::exp(in_mass[static_cast<std::size_t>(m)] -
                                 out_mass[static_cast<std::size_t>(s)]);
                }
            }
        } else if (l.structure == SumStructure::Diagonal) {
            for (int u = 0; u < k; ++u) {
                if (out_mass[static_cast<std::size_t>(u)] == kNegInf) {
                    throw std::invalid_argument("normalize: sum unit with zero mass");
                }
                rescaled[static_cast<std::size_t>(u)] =
                    w[static_cast<std::size_t>(u)] *
                    std::exp(in_mass[static_cast<std::size_t>(u)] -
                             out_mass[static_cast<std::size_t>(u)]);
            }
        } else {
            const int blocks = l.diag_blocks;
            for (int u = 0; u < k; ++u) {
                if (out_mass[static_cast<std::size_t>(u)] == kNegInf) {
                    throw std::invalid_argument("normalize: sum unit with zero mass");
                }
                for (int i = 0; i < blocks; ++i) {
                    rescaled[static_cast<std::size_t>(i * k + u)] =
                        w[static_cast<std::size_t>(i * k + u)] *
                        std::exp(in_mass[static_cast<std::size_t>(i * k + u)] -
                                 out_mass[static_cast<std::size_t>(u)]);
                }
            }
        }
        // Layers that were already normalized keep their raw parameters so
        // softmax circuits round-trip bit-for-bit (up to fp noise).
        double max_change = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            max_change = std::max(max_change, std::fabs(rescaled[i] - w[i]));
        }
        if (max_change <= 1e-13) continue;
        int param_id = l.param;
        if (param_refs[static_cast<std::size_t>(param_id)] > 1) {
            // Fold-shared matrices need member-specific rescaling; give this
            // layer its own copy first.
            param_id = out.add_param(out.param(l.param));
            out.set_layer_param(l.id, param_id);
        }
        ParamBlock& p = out.param(param_id);
        switch (p.reparam) {
            case Reparam::Softmax:
            case Reparam::Exp:
                for (std::size_t i = 0; i < rescaled.size(); ++i) {
                    p.data[i] = std::log(std::max(rescaled[i], 1e-300));
                }
                break;
            case Reparam::Clamp:
            case Reparam::None:
            case Reparam::Frozen:
                p.data = rescaled;
                break;
        }
    }
    return out;
}

}  // namespace tenscirc
