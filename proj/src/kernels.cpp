#include "kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace tenscirc::kernels {

namespace {

double log_sigmoid(double x) {
    // log(1/(1+e^-x)) = -softplus(-x)
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double log_binomial_coeff(int n, int x) {
    return std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0);
}

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)
constexpr double kSigmaFloor = 1e-3;

int categorical_value(const Batch& batch, int row, int var, int categories) {
    double raw = batch.value(row, var);
    int v = static_cast<int>(raw);
    if (v < 0 || v >= categories || static_cast<double>(v) != raw) {
        throw std::invalid_argument("input value " + std::to_string(raw) +
                                    " out of range for categorical(" +
                                    std::to_string(categories) + ") at variable " +
                                    std::to_string(var));
    }
    return v;
}

}  // namespace

void eval_input_log(const Circuit& c, const Layer& l, const Batch& batch, double* out) {
    const ParamBlock& p = c.param(l.param);
    const int k = l.width;
    const int var = l.scope[0];
    if (l.scope.size() != 1) {
        throw std::invalid_argument("evaluation requires univariate input layers");
    }
    switch (l.family) {
        case InputFamily::Categorical: {
            const int cats = l.categories;
            // Row-wise log-softmax of the raw logits, computed once per layer.
            std::vector<double> logz(static_cast<std::size_t>(k));
            for (int u = 0; u < k; ++u) {
                const double* row = p.data.data() + static_cast<std::ptrdiff_t>(u) * cats;
                double m = row[0];
                for (int t = 1; t < cats; ++t) m = std::max(m, row[t]);
                double z = 0.0;
                for (int t = 0; t < cats; ++t) z += std::exp(row[t] - m);
                logz[static_cast<std::size_t>(u)] = m + std::log(z);
            }
            for (int b = 0; b < batch.size; ++b) {
                double* row_out = out + static_cast<std::ptrdiff_t>(b) * k;
                if (batch.is_marginalized(b, var)) {
                    for (int u = 0; u < k; ++u) row_out[u] = 0.0;
                    continue;
                }
                int v = categorical_value(batch, b, var, cats);
                for (int u = 0; u < k; ++u) {
                    row_out[u] = p.data[static_cast<std::size_t>(u) * cats + v] -
                                 logz[static_cast<std::size_t>(u)];
                }
            }
            break;
        }
        case InputFamily::Gaussian: {
            for (int b = 0; b < batch.size; ++b) {
                double* row_out = out + static_cast<std::ptrdiff_t>(b) * k;
                if (batch.is_marginalized(b, var)) {
                    for (int u = 0; u < k; ++u) row_out[u] = 0.0;
                    continue;
                }
                double x = batch.value(b, var);
                for (int u = 0; u < k; ++u) {
                    double mean = p.data[static_cast<std::size_t>(u) * 2];
                    double sigma = std::max(std::exp(p.data[static_cast<std::size_t>(u) * 2 + 1]),
                                            kSigmaFloor);
                    double z = (x - mean) / sigma;
                    row_out[u] = -0.5 * z * z - std::log(sigma) - kHalfLog2Pi;
                }
            }
            break;
        }
        case InputFamily::Binomial: {
            for (int b = 0; b < batch.size; ++b) {
                double* row_out = out + static_cast<std::ptrdiff_t>(b) * k;
                if (batch.is_marginalized(b, var)) {
                    for (int u = 0; u < k; ++u) row_out[u] = 0.0;
                    continue;
                }
                int x = categorical_value(batch, b, var, l.binomial_n + 1);
                double coeff = log_binomial_coeff(l.binomial_n, x);
                for (int u = 0; u < k; ++u) {
                    double theta = p.data[static_cast<std::size_t>(u)];
                    row_out[u] = coeff + x * log_sigmoid(theta) +
                                 (l.binomial_n - x) * log_sigmoid(-theta);
                }
            }
            break;
        }
        case InputFamily::Embedding: {
            for (int b = 0; b < batch.size; ++b) {
                double* row_out = out + static_cast<std::ptrdiff_t>(b) * k;
                if (batch.is_marginalized(b, var)) {
                    throw std::invalid_argument(
                        "embedding input layers do not define marginals");
                }
                int v = categorical_value(batch, b, var, l.categories);
                for (int u = 0; u < k; ++u) {
                    double w = p.data[static_cast<std::size_t>(u) * l.categories + v];
                    if (w < 0.0) {
                        throw std::invalid_argument(
                            "log-domain evaluation of a negative embedding");
                    }
                    row_out[u] = w > 0.0 ? std::log(w) : kNegInf;
                }
            }
            break;
        }
    }
}

void eval_input_linear(const Circuit& c, const Layer& l, const Batch& batch, double* out) {
    const ParamBlock& p = c.param(l.param);
    const int k = l.width;
    if (l.scope.size() != 1) {
        throw std::invalid_argument("evaluation requires univariate input layers");
    }
    const int var = l.scope[0];
    if (l.family == InputFamily::Embedding) {
        for (int b = 0; b < batch.size; ++b) {
            double* row_out = out + static_cast<std::ptrdiff_t>(b) * k;
            if (batch.is_marginalized(b, var)) {
                throw std::invalid_argument("embedding input layers do not define marginals");
            }
            int v = categorical_value(batch, b, var, l.categories);
            for (int u = 0; u < k; ++u) {
                row_out[u] = p.data[static_cast<std::size_t>(u) * l.categories + v];
            }
        }
        return;
    }
    // Normalized families share the log path.
    eval_input_log(c, l, batch, out);
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(batch.size) * k; ++i) {
        out[i] = std::exp(out[i]);
    }
}

void eval_hadamard_log(const Layer& l, int batch_size,
                       const std::vector<const double*>& in, double* out) {
    const int k = l.width;
    for (int b = 0; b < batch_size; ++b) {
        double* row = out + static_cast<std::ptrdiff_t>(b) * k;
        for (int u = 0; u < k; ++u) row[u] = 0.0;
        for (const double* src : in) {
            const double* srow = src + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) row[u] += srow[u];
        }
    }
}

void eval_kronecker_log(const Circuit& c, const Layer& l, int batch_size,
                        const std::vector<const double*>& in, double* out) {
    const int arity = static_cast<int>(l.inputs.size());
    std::vector<int> widths(static_cast<std::size_t>(arity));
    for (int i = 0; i < arity; ++i) {
        widths[static_cast<std::size_t>(i)] = c.layer(l.inputs[static_cast<std::size_t>(i)]).width;
    }
    for (int b = 0; b < batch_size; ++b) {
        double* row = out + static_cast<std::ptrdiff_t>(b) * l.width;
        // Row-major mixed-radix expansion: index = ((j1*K2)+j2)*K3+...
        std::vector<int> idx(static_cast<std::size_t>(arity), 0);
        for (int u = 0; u < l.width; ++u) {
            double v = 0.0;
            for (int i = 0; i < arity; ++i) {
                const double* srow =
                    in[static_cast<std::size_t>(i)] +
                    static_cast<std::ptrdiff_t>(b) * widths[static_cast<std::size_t>(i)];
                v += srow[idx[static_cast<std::size_t>(i)]];
            }
            row[u] = v;
            for (int i = arity - 1; i >= 0; --i) {
                if (++idx[static_cast<std::size_t>(i)] < widths[static_cast<std::size_t>(i)]) break;
                idx[static_cast<std::size_t>(i)] = 0;
            }
        }
    }
}

void eval_sum_log(const Circuit& c, const Layer& l, int batch_size,
                  const std::vector<const double*>& in, const std::vector<double>& weights,
                  double* out) {
    const int s_width = l.width;
    if (l.structure == SumStructure::Diagonal) {
        const double* src = in.front();
        const int k = l.width;
        for (int b = 0; b < batch_size; ++b) {
            const double* srow = src + static_cast<std::ptrdiff_t>(b) * k;
            double* row = out + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) {
                double w = weights[static_cast<std::size_t>(u)];
                row[u] = w > 0.0 ? std::log(w) + srow[u] : kNegInf;
            }
        }
        return;
    }
    if (l.structure == SumStructure::BlockDiagonal) {
        const int k = l.width;
        const int blocks = l.diag_blocks;
        for (int b = 0; b < batch_size; ++b) {
            double* row = out + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) {
                double m = kNegInf;
                for (int i = 0; i < blocks; ++i) {
                    const double* srow = in[static_cast<std::size_t>(i)] +
                                         static_cast<std::ptrdiff_t>(b) * k;
                    m = std::max(m, srow[u]);
                }
                if (m == kNegInf) { row[u] = kNegInf; continue; }
                double acc = 0.0;
                for (int i = 0; i < blocks; ++i) {
                    const double* srow = in[static_cast<std::size_t>(i)] +
                                         static_cast<std::ptrdiff_t>(b) * k;
                    double w = weights[static_cast<std::size_t>(i * k + u)];
                    if (w != 0.0 && srow[u] != kNegInf) acc += w * std::exp(srow[u] - m);
                }
                row[u] = acc > 0.0 ? m + std::log(acc) : kNegInf;
            }
        }
        return;
    }
    // Dense: max-shifted log-sum-exp over the concatenated input vector.
    const int total = [&] {
        int t = 0;
        for (int id : l.inputs) t += c.layer(id).width;
        return t;
    }();
    std::vector<double> shifted(static_cast<std::size_t>(total));
    for (int b = 0; b < batch_size; ++b) {
        double m = kNegInf;
        int offset = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            int k = c.layer(l.inputs[i]).width;
            const double* srow = in[i] + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) m = std::max(m, srow[u]);
            offset += k;
        }
        double* row = out + static_cast<std::ptrdiff_t>(b) * s_width;
        if (m == kNegInf) {
            for (int s = 0; s < s_width; ++s) row[s] = kNegInf;
            continue;
        }
        offset = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            int k = c.layer(l.inputs[i]).width;
            const double* srow = in[i] + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) {
                shifted[static_cast<std::size_t>(offset + u)] =
                    srow[u] == kNegInf ? 0.0 : std::exp(srow[u] - m);
            }
            offset += k;
        }
        for (int s = 0; s < s_width; ++s) {
            const double* wrow = weights.data() + static_cast<std::ptrdiff_t>(s) * total;
            double acc = 0.0;
            for (int t = 0; t < total; ++t) acc += wrow[t] * shifted[static_cast<std::size_t>(t)];
            row[s] = acc > 0.0 ? m + std::log(acc) : kNegInf;
        }
    }
}

void eval_hadamard_linear(const Layer& l, int batch_size,
                          const std::vector<const double*>& in, double* out) {
    const int k = l.width;
    for (int b = 0; b < batch_size; ++b) {
        double* row = out + static_cast<std::ptrdiff_t>(b) * k;
        for (int u = 0; u < k; ++u) row[u] = 1.0;
        for (const double* src : in) {
            const double* srow = src + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) row[u] *= srow[u];
        }
    }
}

void eval_kronecker_linear(const Circuit& c, const Layer& l, int batch_size,
                           const std::vector<const double*>& in, double* out) {
    const int arity = static_cast<int>(l.inputs.size());
    std::vector<int> widths(static_cast<std::size_t>(arity));
    for (int i = 0; i < arity; ++i) {
        widths[static_cast<std::size_t>(i)] = c.layer(l.inputs[static_cast<std::size_t>(i)]).width;
    }
    for (int b = 0; b < batch_size; ++b) {
        double* row = out + static_cast<std::ptrdiff_t>(b) * l.width;
        std::vector<int> idx(static_cast<std::size_t>(arity), 0);
        for (int u = 0; u < l.width; ++u) {
            double v = 1.0;
            for (int i = 0; i < arity; ++i) {
                const double* srow =
                    in[static_cast<std::size_t>(i)] +
                    static_cast<std::ptrdiff_t>(b) * widths[static_cast<std::size_t>(i)];
                v *= srow[idx[static_cast<std::size_t>(i)]];
            }
            row[u] = v;
            for (int i = arity - 1; i >= 0; --i) {
                if (++idx[static_cast<std::size_t>(i)] < widths[static_cast<std::size_t>(i)]) break;
                idx[static_cast<std::size_t>(i)] = 0;
            }
        }
    }
}

void eval_sum_linear(const Circuit& c, const Layer& l, int batch_size,
                     const std::vector<const double*>& in, const std::vector<double>& weights,
                     double* out) {
    const int s_width = l.width;
    if (l.structure == SumStructure::Diagonal) {
        const double* src = in.front();
        for (int b = 0; b < batch_size; ++b) {
            const double* srow = src + static_cast<std::ptrdiff_t>(b) * s_width;
            double* row = out + static_cast<std::ptrdiff_t>(b) * s_width;
            for (int u = 0; u < s_width; ++u) row[u] = weights[static_cast<std::size_t>(u)] * srow[u];
        }
        return;
    }
    if (l.structure == SumStructure::BlockDiagonal) {
        const int k = l.width;
        const int blocks = l.diag_blocks;
        for (int b = 0; b < batch_size; ++b) {
            double* row = out + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) {
                double acc = 0.0;
                for (int i = 0; i < blocks; ++i) {
                    const double* srow = in[static_cast<std::size_t>(i)] +
                                         static_cast<std::ptrdiff_t>(b) * k;
                    acc += weights[static_cast<std::size_t>(i * k + u)] * srow[u];
                }
                row[u] = acc;
            }
        }
        return;
    }
    int total = 0;
    for (int id : l.inputs) total += c.layer(id).width;
    std::vector<double> concat(static_cast<std::size_t>(total));
    for (int b = 0; b < batch_size; ++b) {
        int offset = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            int k = c.layer(l.inputs[i]).width;
            const double* srow = in[i] + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) concat[static_cast<std::size_t>(offset + u)] = srow[u];
            offset += k;
        }
        double* row = out + static_cast<std::ptrdiff_t>(b) * s_width;
        for (int s = 0; s < s_width; ++s) {
            const double* wrow = weights.data() + static_cast<std::ptrdiff_t>(s) * total;
            double acc = 0.0;
            for (int t = 0; t < total; ++t) acc += wrow[t] * concat[static_cast<std::size_t>(t)];
            row[s] = acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Reverse mode
// ---------------------------------------------------------------------------

void backward_input_log(const Circuit& c, const Layer& l, const Batch& batch,
                        const double* out_adj, std::vector<double>& param_grad) {
    const ParamBlock& p = c.param(l.param);
    if (!p.trainable) return;
    const int k = l.width;
    const int var = l.scope[0];
    switch (l.family) {
        case InputFamily::Categorical: {
            const int cats = l.categories;
            std::vector<double> probs(static_cast<std::size_t>(k) * cats);
            for (int u = 0; u < k; ++u) {
                const double* row = p.data.data() + static_cast<std::ptrdiff_t>(u) * cats;
                double m = row[0];
                for (int t = 1; t < cats; ++t) m = std::max(m, row[t]);
                double z = 0.0;
                for (int t = 0; t < cats; ++t) z += std::exp(row[t] - m);
                for (int t = 0; t < cats; ++t) {
                    probs[static_cast<std::size_t>(u) * cats + t] = std::exp(row[t] - m) / z;
                }
            }
            for (int b = 0; b < batch.size; ++b) {
                if (batch.is_marginalized(b, var)) continue;
                int v = static_cast<int>(batch.value(b, var));
                const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * k;
                for (int u = 0; u < k; ++u) {
                    double a = arow[u];
                    if (a == 0.0) continue;
                    // d log softmax(theta)[v] / d theta[t] = 1{t=v} - softmax[t]
                    for (int t = 0; t < cats; ++t) {
                        param_grad[static_cast<std::size_t>(u) * cats + t] -=
                            a * probs[static_cast<std::size_t>(u) * cats + t];
                    }
                    param_grad[static_cast<std::size_t>(u) * cats + v] += a;
                }
            }
            break;
        }
        case InputFamily::Gaussian: {
            for (int b = 0; b < batch.size; ++b) {
                if (batch.is_marginalized(b, var)) continue;
                double x = batch.value(b, var);
                const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * k;
                for (int u = 0; u < k; ++u) {
                    double a = arow[u];
                    if (a == 0.0) continue;
                    double mean = p.data[static_cast<std::size_t>(u) * 2];
                    double raw_sigma = std::exp(p.data[static_cast<std::size_t>(u) * 2 + 1]);
                    double sigma = std::max(raw_sigma, kSigmaFloor);
                    double z = (x - mean) / sigma;
                    param_grad[static_cast<std::size_t>(u) * 2] += a * z / sigma;
                    if (raw_sigma > kSigmaFloor) {
                        param_grad[static_cast<std::size_t>(u) * 2 + 1] += a * (z * z - 1.0);
                    }
                }
            }
            break;
        }
        case InputFamily::Binomial: {
            for (int b = 0; b < batch.size; ++b) {
                if (batch.is_marginalized(b, var)) continue;
                double x = batch.value(b, var);
                const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * k;
                for (int u = 0; u < k; ++u) {
                    double a = arow[u];
                    if (a == 0.0) continue;
                    double pr = 1.0 / (1.0 + std::exp(-p.data[static_cast<std::size_t>(u)]));
                    param_grad[static_cast<std::size_t>(u)] += a * (x - l.binomial_n * pr);
                }
            }
            break;
        }
        case InputFamily::Embedding:
            throw std::invalid_argument("embedding inputs are not trainable in log domain");
    }
}

void backward_hadamard_log(const Layer& l, int batch_size, const double* out_adj,
                           std::vector<double*>& in_adj) {
    const int k = l.width;
    for (int b = 0; b < batch_size; ++b) {
        const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * k;
        for (double* dst : in_adj) {
            double* drow = dst + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) drow[u] += arow[u];
        }
    }
}

void backward_kronecker_log(const Circuit& c, const Layer& l, int batch_size,
                            const double* out_adj, std::vector<double*>& in_adj) {
    const int arity = static_cast<int>(l.inputs.size());
    std::vector<int> widths(static_cast<std::size_t>(arity));
    for (int i = 0; i < arity; ++i) {
        widths[static_cast<std::size_t>(i)] = c.layer(l.inputs[static_cast<std::size_t>(i)]).width;
    }
    for (int b = 0; b < batch_size; ++b) {
        const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * l.width;
        std::vector<int> idx(static_cast<std::size_t>(arity), 0);
        for (int u = 0; u < l.width; ++u) {
            double a = arow[u];
            if (a != 0.0) {
                for (int i = 0; i < arity; ++i) {
                    double* drow =
                        in_adj[static_cast<std::size_t>(i)] +
                        static_cast<std::ptrdiff_t>(b) * widths[static_cast<std::size_t>(i)];
                    drow[idx[static_cast<std::size_t>(i)]] += a;
                }
            }
            for (int i = arity - 1; i >= 0; --i) {
                if (++idx[static_cast<std::size_t>(i)] < widths[static_cast<std::size_t>(i)]) break;
                idx[static_cast<std::size_t>(i)] = 0;
            }
        }
    }
}

void backward_sum_log(const Circuit& c, const Layer& l, int batch_size,
                      const std::vector<const double*>& in, const double* out_log,
                      const double* out_adj, const std::vector<double>& weights,
                      std::vector<double*>& in_adj, std::vector<double>& weight_adj) {
    const int s_width = l.width;
    if (l.structure == SumStructure::Diagonal) {
        const int k = l.width;
        for (int b = 0; b < batch_size; ++b) {
            const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * k;
            double* drow = in_adj.front() + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) {
                double a = arow[u];
                if (a == 0.0) continue;
                double w = weights[static_cast<std::size_t>(u)];
                if (w <= 0.0) continue;
                drow[u] += a;
                weight_adj[static_cast<std::size_t>(u)] += a / w;
            }
        }
        return;
    }
    if (l.structure == SumStructure::BlockDiagonal) {
        const int k = l.width;
        const int blocks = l.diag_blocks;
        for (int b = 0; b < batch_size; ++b) {
            const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * k;
            const double* orow = out_log + static_cast<std::ptrdiff_t>(b) * k;
            for (int u = 0; u < k; ++u) {
                double a = arow[u];
                if (a == 0.0 || orow[u] == kNegInf) continue;
                for (int i = 0; i < blocks; ++i) {
                    const double* srow = in[static_cast<std::size_t>(i)] +
                                         static_cast<std::ptrdiff_t>(b) * k;
                    if (srow[u] == kNegInf) continue;
                    double ratio = std::exp(srow[u] - orow[u]);
                    double w = weights[static_cast<std::size_t>(i * k + u)];
                    in_adj[static_cast<std::size_t>(i)]
                          [static_cast<std::ptrdiff_t>(b) * k + u] += a * w * ratio;
                    weight_adj[static_cast<std::size_t>(i * k + u)] += a * ratio;
                }
            }
        }
        return;
    }
    int total = 0;
    for (int id : l.inputs) total += c.layer(id).width;
    for (int b = 0; b < batch_size; ++b) {
        const double* arow = out_adj + static_cast<std::ptrdiff_t>(b) * s_width;
        const double* orow = out_log + static_cast<std::ptrdiff_t>(b) * s_width;
        for (int s = 0; s < s_width; ++s) {
            double a = arow[s];
            if (a == 0.0 || orow[s] == kNegInf) continue;
            const double* wrow = weights.data() + static_cast<std::ptrdiff_t>(s) * total;
            int offset = 0;
            for (std::size_t i = 0; i < in.size(); ++i) {
                int k = c.layer(l.inputs[i]).width;
                const double* srow = in[i] + static_cast<std::ptrdiff_t>(b) * k;
                double* drow = in_adj[i] + static_cast<std::ptrdiff_t>(b) * k;
                for (int u = 0; u < k; ++u) {
                    if (srow[u] == kNegInf) continue;
                    double ratio = std::exp(srow[u] - orow[s]);
                    drow[u] += a * wrow[offset + u] * ratio;
                    weight_adj[static_cast<std::size_t>(s) * total + offset + u] += a * ratio;
                }
                offset += k;
            }
        }
    }
}

void apply_reparam_jacobian(const Circuit& c, const Layer& l,
                            const std::vector<double>& weights,
                            const std::vector<double>& weight_adj,
                            std::vector<double>& param_grad) {
    const ParamBlock& p = c.param(l.param);
    switch (p.reparam) {
        case Reparam::None:
            for (std::size_t i = 0; i < weight_adj.size(); ++i) param_grad[i] += weight_adj[i];
            break;
        case Reparam::Frozen:
            break;
        case Reparam::Exp:
            for (std::size_t i = 0; i < weight_adj.size(); ++i) {
                param_grad[i] += weight_adj[i] * weights[i];
            }
            break;
        case Reparam::Clamp:
            for (std::size_t i = 0; i < weight_adj.size(); ++i) {
                if (p.data[i] > kClampEpsilon) param_grad[i] += weight_adj[i];
            }
            break;
        case Reparam::Softmax: {
            // Row Jacobian: dtheta_i = w_i*(wbar_i - sum_j wbar_j*w_j).
            auto softmax_row = [&](std::size_t begin, std::size_t stride, int count) {
                double dot = 0.0;
                for (int j = 0; j < count; ++j) {
                    std::size_t idx = begin + static_cast<std::size_t>(j) * stride;
                    dot += weight_adj[idx] * weights[idx];
                }
                for (int j = 0; j < count; ++j) {
                    std::size_t idx = begin + static_cast<std::size_t>(j) * stride;
                    param_grad[idx] += weights[idx] * (weight_adj[idx] - dot);
                }
            };
            if (l.structure == SumStructure::Dense) {
                int rows = p.rows(), cols = p.cols();
                for (int r = 0; r < rows; ++r) {
                    softmax_row(static_cast<std::size_t>(r) * cols, 1, cols);
                }
            } else if (l.structure == SumStructure::Diagonal) {
                // Single-entry rows: the weight is constant 1, zero gradient.
            } else {
                int k = l.width;
                for (int u = 0; u < k; ++u) {
                    softmax_row(static_cast<std::size_t>(u), static_cast<std::size_t>(k),
                                l.diag_blocks);
                }
            }
            break;
        }
    }
}

}  // namespace tenscirc::kernels
