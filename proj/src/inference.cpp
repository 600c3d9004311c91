#include "tenscirc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "kernels.hpp"
#include "tenscirc/rng.hpp"

namespace tenscirc {

using kernels::kNegInf;

Batch Batch::observed(int d, const std::vector<double>& rows) {
    if (rows.size() % static_cast<std::size_t>(d) != 0) {
        throw std::invalid_argument("Batch::observed: values not a multiple of d");
    }
    Batch b;
    b.var_count = d;
    b.size = static_cast<int>(rows.size() / static_cast<std::size_t>(d));
    b.values = rows;
    b.marginalized.assign(rows.size(), 0);
    return b;
}

Batch Batch::all_marginalized(int d) {
    Batch b;
    b.var_count = d;
    b.size = 1;
    b.values.assign(static_cast<std::size_t>(d), 0.0);
    b.marginalized.assign(static_cast<std::size_t>(d), 1);
    return b;
}

namespace {

void check_batch(const Circuit& c, const Batch& batch) {
    if (batch.var_count != c.var_count()) {
        throw std::invalid_argument("batch variable count does not match circuit");
    }
    if (batch.size <= 0) {
        throw std::invalid_argument("empty batch");
    }
}

std::vector<const double*> gather_inputs(const Layer& l,
                                         const std::vector<std::vector<double>>& buffers) {
    std::vector<const double*> in;
    in.reserve(l.inputs.size());
    for (int id : l.inputs) in.push_back(buffers[static_cast<std::size_t>(id)].data());
    return in;
}

}  // namespace

std::vector<double> forward_log(const Circuit& c, const Batch& batch, Activations* cache) {
    check_batch(c, batch);
    if (!c.monotonic()) {
        throw std::invalid_argument(
            "log-domain evaluation requires a monotonic circuit; use forward_linear");
    }
    std::vector<std::vector<double>> buffers(c.layers().size());
    for (const Layer& l : c.layers()) {
        auto& out = buffers[static_cast<std::size_t>(l.id)];
        out.assign(static_cast<std::size_t>(batch.size) * l.width, 0.0);
        switch (l.kind) {
            case LayerKind::Input:
                kernels::eval_input_log(c, l, batch, out.data());
                break;
            case LayerKind::Hadamard:
                kernels::eval_hadamard_log(l, batch.size, gather_inputs(l, buffers), out.data());
                break;
            case LayerKind::Kronecker:
                kernels::eval_kronecker_log(c, l, batch.size, gather_inputs(l, buffers),
                                            out.data());
                break;
            case LayerKind::Sum:
                kernels::eval_sum_log(c, l, batch.size, gather_inputs(l, buffers),
                                      c.sum_weights_raw(l.id), out.data());
                break;
        }
    }
    std::vector<double> result(buffers[static_cast<std::size_t>(c.output())]);
    if (c.layer(c.output()).width != 1) {
        throw std::logic_error("forward_log: output layer width must be 1");
    }
    for (double v : result) {
        if (std::isnan(v)) throw std::runtime_error("forward_log produced NaN");
    }
    if (cache) cache->layer_log = std::move(buffers);
    return result;
}

std::vector<double> forward_linear(const Circuit& c, const Batch& batch) {
    check_batch(c, batch);
    std::vector<std::vector<double>> buffers(c.layers().size());
    for (const Layer& l : c.layers()) {
        auto& out = buffers[static_cast<std::size_t>(l.id)];
        out.assign(static_cast<std::size_t>(batch.size) * l.width, 0.0);
        switch (l.kind) {
            case LayerKind::Input:
                kernels::eval_input_linear(c, l, batch, out.data());
                break;
            case LayerKind::Hadamard:
                kernels::eval_hadamard_linear(l, batch.size, gather_inputs(l, buffers),
                                              out.data());
                break;
            case LayerKind::Kronecker:
                kernels::eval_kronecker_linear(c, l, batch.size, gather_inputs(l, buffers),
                                               out.data());
                break;
            case LayerKind::Sum:
                kernels::eval_sum_linear(c, l, batch.size, gather_inputs(l, buffers),
                                         c.sum_weights_raw(l.id), out.data());
                break;
        }
    }
    return buffers[static_cast<std::size_t>(c.output())];
}

double log_partition(const Circuit& c) {
    return forward_log(c, Batch::all_marginalized(c.var_count())).front();
}

std::vector<double> marginal_log(const Circuit& c, const Batch& batch) {
    return forward_log(c, batch);
}

DenseTensor reconstruct_tensor(const Circuit& c, std::size_t max_states) {
    std::vector<int> dims(static_cast<std::size_t>(c.var_count()), 0);
    for (const Layer& l : c.layers()) {
        if (l.kind != LayerKind::Input) continue;
        if (l.family != InputFamily::Categorical && l.family != InputFamily::Embedding &&
            l.family != InputFamily::Binomial) {
            throw std::invalid_argument("reconstruct_tensor: all variables must be discrete");
        }
        int domain = l.family == InputFamily::Binomial ? l.binomial_n + 1 : l.categories;
        int var = l.scope[0];
        int& slot = dims[static_cast<std::size_t>(var)];
        if (slot != 0 && slot != domain) {
            throw std::invalid_argument("reconstruct_tensor: inconsistent variable domains");
        }
        slot = domain;
    }
    std::size_t total = 1;
    for (int d : dims) {
        if (d == 0) throw std::invalid_argument("reconstruct_tensor: uncovered variable");
        total *= static_cast<std::size_t>(d);
        if (total > max_states) {
            throw std::invalid_argument("reconstruct_tensor: joint domain exceeds guard of " +
                                        std::to_string(max_states) + " states");
        }
    }
    DenseTensor t(dims);
    const std::size_t chunk = 4096;
    for (std::size_t start = 0; start < total; start += chunk) {
        std::size_t stop = std::min(total, start + chunk);
        Batch batch;
        batch.var_count = c.var_count();
        batch.size = static_cast<int>(stop - start);
        batch.values.resize(static_cast<std::size_t>(batch.size) * batch.var_count);
        batch.marginalized.assign(batch.values.size(), 0);
        for (std::size_t flat = start; flat < stop; ++flat) {
            std::vector<int> index = t.unflatten(flat);
            for (int j = 0; j < batch.var_count; ++j) {
                batch.values[(flat - start) * static_cast<std::size_t>(batch.var_count) +
                             static_cast<std::size_t>(j)] = index[static_cast<std::size_t>(j)];
            }
        }
        std::vector<double> vals = forward_linear(c, batch);
        for (std::size_t flat = start; flat < stop; ++flat) {
            t[flat] = vals[flat - start];
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Folded evaluation
// ---------------------------------------------------------------------------

std::vector<double> forward_log(const FoldedCircuit& fc, const Batch& batch,
                                Activations* cache) {
    const Circuit& c = fc.base();
    check_batch(c, batch);
    if (!c.monotonic()) {
        throw std::invalid_argument("log-domain evaluation requires a monotonic circuit");
    }
    // Group-major storage: buffers[g] holds the F stacked member matrices.
    std::vector<std::vector<std::vector<double>>> buffers(fc.groups().size());
    for (std::size_t g = 0; g < fc.groups().size(); ++g) {
        const FoldGroup& group = fc.groups()[g];
        buffers[g].resize(group.members.size());
        for (int f = 0; f < group.fold_size(); ++f) {
            const Layer& l = c.layer(group.members[static_cast<std::size_t>(f)]);
            auto& out = buffers[g][static_cast<std::size_t>(f)];
            out.assign(static_cast<std::size_t>(batch.size) * l.width, 0.0);
            std::vector<const double*> in;
            for (auto [src_group, src_fold] : group.routing[static_cast<std::size_t>(f)]) {
                in.push_back(buffers[static_cast<std::size_t>(src_group)]
                                    [static_cast<std::size_t>(src_fold)].data());
            }
            switch (l.kind) {
                case LayerKind::Input:
                    kernels::eval_input_log(c, l, batch, out.data());
                    break;
                case LayerKind::Hadamard:
                    kernels::eval_hadamard_log(l, batch.size, in, out.data());
                    break;
                case LayerKind::Kronecker:
                    kernels::eval_kronecker_log(c, l, batch.size, in, out.data());
                    break;
                case LayerKind::Sum:
                    kernels::eval_sum_log(c, l, batch.size, in, c.sum_weights_raw(l.id),
                                          out.data());
                    break;
            }
        }
    }
    auto [out_group, out_fold] = fc.output_position();
    std::vector<double> result(buffers[static_cast<std::size_t>(out_group)]
                                      [static_cast<std::size_t>(out_fold)]);
    if (cache) {
        cache->layer_log.assign(c.layers().size(), {});
        for (std::size_t g = 0; g < fc.groups().size(); ++g) {
            const FoldGroup& group = fc.groups()[g];
            for (int f = 0; f < group.fold_size(); ++f) {
                cache->layer_log[static_cast<std::size_t>(
                    group.members[static_cast<std::size_t>(f)])] =
                    std::move(buffers[g][static_cast<std::size_t>(f)]);
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace {

void check_normalized_for_sampling(const Circuit& c) {
    for (const Layer& l : c.layers()) {
        if (l.kind == LayerKind::Input) {
            if (l.scope.size() != 1) {
                throw std::invalid_argument("sample: input layers must be univariate");
            }
            if (l.family == InputFamily::Embedding) {
                throw std::invalid_argument("sample: embedding inputs are not distributions");
            }
            continue;
        }
        if (l.kind != LayerKind::Sum) continue;
        std::vector<double> w = c.sum_weights_dense(l.id);
        int cols = c.input_width_total(l.id);
        for (int s = 0; s < l.width; ++s) {
            double row_sum = 0.0;
            for (int t = 0; t < cols; ++t) {
                double x = w[static_cast<std::size_t>(s) * cols + t];
                if (x < 0.0) throw std::invalid_argument("sample: negative sum weight");
                row_sum += x;
            }
            if (std::fabs(row_sum - 1.0) > 1e-8) {
                throw std::invalid_argument(
                    "sample: circuit is not normalized (sum row deviates from 1 by " +
                    std::to_string(std::fabs(row_sum - 1.0)) + "); call normalize() first");
            }
        }
    }
}

int sample_binomial(Rng& rng, int n, double p) {
    double u = rng.uniform();
    double logp = std::log(p), log1p_ = std::log1p(-p);
    double acc = 0.0;
    for (int x = 0; x <= n; ++x) {
        double lpmf = std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0) +
                      x * logp + (n - x) * log1p_;
        acc += std::exp(lpmf);
        if (u < acc) return x;
    }
    return n;
}

}  // namespace

std::vector<std::vector<double>> sample(const Circuit& c, int n, std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("sample: n must be positive");
    check_normalized_for_sampling(c);
    Rng rng(seed);
    const int d = c.var_count();
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n),
                                         std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<std::vector<char>> written(static_cast<std::size_t>(n),
                                           std::vector<char>(static_cast<std::size_t>(d), 0));

    // Per-layer pending (sample index, unit index) draws, filled top-down.
    std::vector<std::vector<std::pair<int, int>>> pending(c.layers().size());
    for (int i = 0; i < n; ++i) {
        pending[static_cast<std::size_t>(c.output())].emplace_back(i, 0);
    }
    for (int id = static_cast<int>(c.layers().size()) - 1; id >= 0; --id) {
        const Layer& l = c.layer(id);
        auto& entries = pending[static_cast<std::size_t>(id)];
        if (entries.empty()) continue;
        if (l.kind == LayerKind::Sum) {
            std::vector<double> w = c.sum_weights_raw(id);
            if (l.structure == SumStructure::Diagonal) {
                for (auto [i, u] : entries) {
                    pending[static_cast<std::size_t>(l.inputs.front())].emplace_back(i, u);
                }
            } else if (l.structure == SumStructure::BlockDiagonal) {
                const int k = l.width;
                std::vector<double> block_w(static_cast<std::size_t>(l.diag_blocks));
                for (auto [i, u] : entries) {
                    for (int bdx = 0; bdx < l.diag_blocks; ++bdx) {
                        block_w[static_cast<std::size_t>(bdx)] =
                            w[static_cast<std::size_t>(bdx * k + u)];
                    }
                    int pick = static_cast<int>(rng.categorical(block_w.data(), block_w.size()));
                    pending[static_cast<std::size_t>(l.inputs[static_cast<std::size_t>(pick)])]
                        .emplace_back(i, u);
                }
            } else {
                int total = c.input_width_total(id);
                for (auto [i, u] : entries) {
                    int col = static_cast<int>(rng.categorical(
                        w.data() + static_cast<std::ptrdiff_t>(u) * total,
                        static_cast<std::size_t>(total)));
                    // Map the concatenated column back to (input slot, unit).
                    int slot = 0;
                    while (col >= c.layer(l.inputs[static_cast<std::size_t>(slot)]).width) {
                        col -= c.layer(l.inputs[static_cast<std::size_t>(slot)]).width;
                        ++slot;
                    }
                    pending[static_cast<std::size_t>(l.inputs[static_cast<std::size_t>(slot)])]
                        .emplace_back(i, col);
                }
            }
        } else if (l.kind == LayerKind::Kronecker) {
            const int arity = static_cast<int>(l.inputs.size());
            std::vector<int> widths(static_cast<std::size_t>(arity));
            for (int j = 0; j < arity; ++j) {
                widths[static_cast<std::size_t>(j)] =
                    c.layer(l.inputs[static_cast<std::size_t>(j)]).width;
            }
            for (auto [i, u] : entries) {
                int rem = u;
                for (int j = arity - 1; j >= 0; --j) {
                    int k = widths[static_cast<std::size_t>(j)];
                    pending[static_cast<std::size_t>(l.inputs[static_cast<std::size_t>(j)])]
                        .emplace_back(i, rem % k);
                    rem /= k;
                }
            }
        } else if (l.kind == LayerKind::Hadamard) {
            for (auto [i, u] : entries) {
                for (int in : l.inputs) {
                    pending[static_cast<std::size_t>(in)].emplace_back(i, u);
                }
            }
        } else {
            const int var = l.scope[0];
            const ParamBlock& p = c.param(l.param);
            for (auto [i, u] : entries) {
                double value = 0.0;
                if (l.family == InputFamily::Categorical) {
                    std::vector<double> probs(static_cast<std::size_t>(l.categories));
                    const double* row = p.data.data() +
                                        static_cast<std::ptrdiff_t>(u) * l.categories;
                    double m = row[0];
                    for (int t = 1; t < l.categories; ++t) m = std::max(m, row[t]);
                    for (int t = 0; t < l.categories; ++t) {
                        probs[static_cast<std::size_t>(t)] = std::exp(row[t] - m);
                    }
                    value = static_cast<double>(rng.categorical(probs.data(), probs.size()));
                } else if (l.family == InputFamily::Gaussian) {
                    double mean = p.data[static_cast<std::size_t>(u) * 2];
                    double sigma = std::max(std::exp(p.data[static_cast<std::size_t>(u) * 2 + 1]),
                                            1e-3);
                    value = mean + sigma * rng.gaussian();
                } else {
                    double pr = 1.0 / (1.0 + std::exp(-p.data[static_cast<std::size_t>(u)]));
                    value = sample_binomial(rng, l.binomial_n, pr);
                }
                out[static_cast<std::size_t>(i)][static_cast<std::size_t>(var)] = value;
                written[static_cast<std::size_t>(i)][static_cast<std::size_t>(var)] = 1;
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            if (!written[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
                throw std::logic_error("sample: variable " + std::to_string(j) +
                                       " was never assigned");
            }
        }
    }
    return out;
}

std::vector<std::vector<double>> sample(const FoldedCircuit& fc, int n, std::uint64_t seed) {
    // Folding is syntactic; the traversal runs over the shared layer table.
    return sample(fc.base(), n, seed);
}

}  // namespace tenscirc
