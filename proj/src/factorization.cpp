#include "tenscirc/factorization.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "tenscirc/rng.hpp"

namespace tenscirc {

namespace {

constexpr double kNonnegFloor = 1e-12;
constexpr double kRidge = 1e-10;

// Solves X * H = M for X given symmetric positive semi-definite H (R x R),
// via ridge-regularized Cholesky; the ridge grows if a pivot fails.
Matrix solve_normal_equations(const Matrix& h, const Matrix& m, double base_ridge) {
    const int r = h.rows;
    double ridge = base_ridge;
    for (int attempt = 0; attempt < 12; ++attempt) {
        Matrix chol(r, r);
        bool ok = true;
        for (int i = 0; i < r && ok; ++i) {
            for (int j = 0; j <= i; ++j) {
                double sum = h.at(i, j) + (i == j ? ridge : 0.0);
                for (int k = 0; k < j; ++k) sum -= chol.at(i, k) * chol.at(j, k);
                if (i == j) {
                    if (sum <= 0.0) { ok = false; break; }
                    chol.at(i, i) = std::sqrt(sum);
                } else {
                    chol.at(i, j) = sum / chol.at(j, j);
                }
            }
        }
        if (!ok) { ridge *= 100.0; continue; }
        Matrix x(m.rows, r);
        std::vector<double> y(static_cast<std::size_t>(r));
        for (int row = 0; row < m.rows; ++row) {
            for (int i = 0; i < r; ++i) {
                double sum = m.at(row, i);
                for (int k = 0; k < i; ++k) sum -= chol.at(i, k) * y[static_cast<std::size_t>(k)];
                y[static_cast<std::size_t>(i)] = sum / chol.at(i, i);
            }
            for (int i = r - 1; i >= 0; --i) {
                double sum = y[static_cast<std::size_t>(i)];
                for (int k = i + 1; k < r; ++k) sum -= chol.at(k, i) * x.at(row, k);
                x.at(row, i) = sum / chol.at(i, i);
            }
        }
        return x;
    }
    throw std::runtime_error("cp_als: normal equations unsolvable even with ridge");
}

Matrix gram(const Matrix& v) {
    Matrix g(v.cols, v.cols);
    for (int i = 0; i < v.rows; ++i) {
        for (int a = 0; a < v.cols; ++a) {
            double via = v.at(i, a);
            if (via == 0.0) continue;
            for (int b = 0; b < v.cols; ++b) g.at(a, b) += via * v.at(i, b);
        }
    }
    return g;
}

// Matricized-tensor-times-Khatri-Rao-product along `mode`.
Matrix mttkrp(const DenseTensor& t, const std::vector<Matrix>& factors, int mode, int rank) {
    const auto& dims = t.dims();
    const int d = static_cast<int>(dims.size());
    Matrix m(dims[static_cast<std::size_t>(mode)], rank);
    std::vector<int> index(static_cast<std::size_t>(d), 0);
    std::vector<double> w(static_cast<std::size_t>(rank));
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        double val = t[flat];
        if (val != 0.0) {
            for (int r = 0; r < rank; ++r) w[static_cast<std::size_t>(r)] = val;
            for (int j = 0; j < d; ++j) {
                if (j == mode) continue;
                const Matrix& f = factors[static_cast<std::size_t>(j)];
                const double* row =
                    f.data.data() +
                    static_cast<std::ptrdiff_t>(index[static_cast<std::size_t>(j)]) * rank;
                for (int r = 0; r < rank; ++r) w[static_cast<std::size_t>(r)] *= row[r];
            }
            double* dst = m.data.data() +
                          static_cast<std::ptrdiff_t>(index[static_cast<std::size_t>(mode)]) * rank;
            for (int r = 0; r < rank; ++r) dst[r] += w[static_cast<std::size_t>(r)];
        }
        for (int j = d - 1; j >= 0; --j) {
            if (++index[static_cast<std::size_t>(j)] < dims[static_cast<std::size_t>(j)]) break;
            index[static_cast<std::size_t>(j)] = 0;
        }
    }
    return m;
}

double hadamard_trace(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// Multiplicative non-negative updates (monotone for the mode objective).
// Exact projected/column solves converge faster in Frobenius norm but zero
// out factor entries, and a zeroed reconstructed weight costs the circuit a
// near -inf log-likelihood wherever data visits it; the multiplicative form
// keeps every entry strictly positive.
void nonneg_multiplicative(Matrix& v, const Matrix& m, const Matrix& h, int passes) {
    const int rows = v.rows, rank = v.cols;
    for (int pass = 0; pass < passes; ++pass) {
        for (int i = 0; i < rows; ++i) {
            for (int r = 0; r < rank; ++r) {
                double denom = 0.0;
                for (int q = 0; q < rank; ++q) denom += v.at(i, q) * h.at(q, r);
                if (denom <= 0.0) continue;
                double numer = m.at(i, r);
                if (numer <= 0.0) numer = kNonnegFloor * denom;
                v.at(i, r) = std::max(v.at(i, r) * numer / denom, kNonnegFloor);
            }
        }
    }
}

struct AlsRun {
    std::vector<Matrix> factors;
    double objective = 0.0;  // ||T - X||^2
    int iterations = 0;
};

double full_objective(const DenseTensor& t, const std::vector<Matrix>& factors, double norm_t2) {
    int rank = factors.front().cols;
    Matrix prod(rank, rank);
    std::fill(prod.data.begin(), prod.data.end(), 1.0);
    for (const Matrix& v : factors) {
        Matrix g = gram(v);
        for (std::size_t k = 0; k < prod.data.size(); ++k) prod.data[k] *= g.data[k];
    }
    double norm_x2 = 0.0;
    for (double x : prod.data) norm_x2 += x;
    Matrix m = mttkrp(t, factors, 0, rank);
    return norm_t2 - 2.0 * hadamard_trace(m, factors.front()) + norm_x2;
}

std::vector<Matrix> random_factors(const DenseTensor& t, const CpAlsOptions& opt, int rank,
                                   Rng& rng) {
    const auto& dims = t.dims();
    const int d = static_cast<int>(dims.size());
    std::vector<Matrix> factors;
    for (int j = 0; j < d; ++j) {
        Matrix v(dims[static_cast<std::size_t>(j)], rank);
        for (double& x : v.data) x = opt.nonneg ? rng.uniform() : rng.gaussian();
        if (opt.nonneg) {
            for (double& x : v.data) x = std::max(x, kNonnegFloor);
        }
        factors.push_back(std::move(v));
    }
    // Rescale the random start so its reconstruction has the tensor's
    // magnitude; otherwise overcomplete ranks begin far out of range.
    double norm_t2 = 0.0;
    for (double x : t.data()) norm_t2 += x * x;
    Matrix prod(rank, rank);
    std::fill(prod.data.begin(), prod.data.end(), 1.0);
    for (const Matrix& v : factors) {
        Matrix g = gram(v);
        for (std::size_t k = 0; k < prod.data.size(); ++k) prod.data[k] *= g.data[k];
    }
    double norm_x2 = 0.0;
    for (double x : prod.data) norm_x2 += x;
    if (norm_x2 > 0.0 && norm_t2 > 0.0) {
        double scale = std::pow(norm_t2 / norm_x2, 1.0 / (2.0 * d));
        for (Matrix& v : factors) {
            for (double& x : v.data) x *= scale;
        }
    }
    return factors;
}

AlsRun run_als_from(const DenseTensor& t, const CpAlsOptions& opt,
                    std::vector<Matrix> factors, int max_iters) {
    const auto& dims = t.dims();
    const int d = static_cast<int>(dims.size());
    const int rank = factors.front().cols;
    std::vector<Matrix> grams;
    double norm_t2 = 0.0;
    for (double x : t.data()) norm_t2 += x * x;
    for (const Matrix& v : factors) grams.push_back(gram(v));

    double prev_obj = std::numeric_limits<double>::infinity();
    const double accept_slack = 1e-12 * std::max(1.0, norm_t2);
    std::vector<Matrix> sweep_start = factors;
    int it = 0;
    for (; it < max_iters; ++it) {
        double obj = prev_obj;
        sweep_start = factors;
        for (int j = 0; j < d; ++j) {
            Matrix h(rank, rank);
            std::fill(h.data.begin(), h.data.end(), 1.0);
            for (int i = 0; i < d; ++i) {
                if (i == j) continue;
                for (std::size_t k = 0; k < h.data.size(); ++k) {
                    h.data[k] *= grams[static_cast<std::size_t>(i)].data[k];
                }
            }
            double trace = 0.0;
            for (int r = 0; r < rank; ++r) trace += h.at(r, r);
            double ridge = std::max(kRidge, 1e-12 * trace / rank);
            Matrix m = mttkrp(t, factors, j, rank);
            auto objective_with = [&](const Matrix& v) {
                return norm_t2 - 2.0 * hadamard_trace(m, v) + hadamard_trace(gram(v), h);
            };
            Matrix candidate;
            if (opt.nonneg) {
                candidate = factors[static_cast<std::size_t>(j)];
                nonneg_multiplicative(candidate, m, h, 6);
            } else {
                candidate = solve_normal_equations(h, m, ridge);
            }
            Matrix& current = factors[static_cast<std::size_t>(j)];
            double obj_old = objective_with(current);
            double obj_new = objective_with(candidate);
            // The projection (or an ill-conditioned solve) can push the exact
            // minimizer uphill; damp towards the previous factor until the
            // mode objective improves, else keep the old factor. Sweeps can
            // therefore never regress.
            if (obj_new > obj_old + accept_slack) {
                double alpha = 0.5;
                bool accepted = false;
                for (int tries = 0; tries < 10; ++tries, alpha *= 0.5) {
                    Matrix blend = current;
                    for (std::size_t k = 0; k < blend.data.size(); ++k) {
                        blend.data[k] += alpha * (candidate.data[k] - blend.data[k]);
                        if (opt.nonneg) blend.data[k] = std::max(blend.data[k], kNonnegFloor);
                    }
                    double obj_blend = objective_with(blend);
                    if (obj_blend <= obj_old + accept_slack) {
                        candidate = std::move(blend);
                        obj_new = obj_blend;
                        accepted = true;
                        break;
                    }
                }
                if (!accepted) {
                    obj = obj_old;
                    continue;
                }
            }
            current = std::move(candidate);
            grams[static_cast<std::size_t>(j)] = gram(current);
            obj = obj_new;
        }
        // Sweep-level extrapolation to escape swamps; only accepted when it
        // lowers the objective, so sweeps stay monotone. Geometric in the
        // non-negative mode so entries stay strictly positive.
        if (it >= 2) {
            double step = std::cbrt(static_cast<double>(it));
            std::vector<Matrix> jumped = factors;
            for (int j = 0; j < d; ++j) {
                auto& dst = jumped[static_cast<std::size_t>(j)].data;
                const auto& from = sweep_start[static_cast<std::size_t>(j)].data;
                for (std::size_t k = 0; k < dst.size(); ++k) {
                    if (opt.nonneg) {
                        double a = std::max(from[k], kNonnegFloor);
                        double b = std::max(dst[k], kNonnegFloor);
                        dst[k] = a * std::exp(step * std::log(b / a));
                    } else {
                        dst[k] = from[k] + step * (dst[k] - from[k]);
                    }
                }
            }
            double obj_jump = full_objective(t, jumped, norm_t2);
            if (obj_jump < obj - accept_slack) {
                factors = std::move(jumped);
                for (int j = 0; j < d; ++j) {
                    grams[static_cast<std::size_t>(j)] = gram(factors[static_cast<std::size_t>(j)]);
                }
                obj = obj_jump;
            }
        }
        if (obj > prev_obj + 1e-9 * std::max(1.0, norm_t2)) {
            throw std::logic_error("cp_als: objective increased across a sweep");
        }
        // Relative-progress stop: swamps make slow absolute progress while
        // the remaining error is still shrinking at a steady rate.
        if (std::isfinite(prev_obj) &&
            prev_obj - obj <= opt.tol * std::max(obj, 1e-30 * std::max(1.0, norm_t2))) {
            prev_obj = obj;
            ++it;
            break;
        }
        prev_obj = obj;
    }
    return {std::move(factors), std::max(prev_obj, 0.0), it};
}

}  // namespace

CpAlsResult cp_als(const DenseTensor& t, const CpAlsOptions& options) {
    if (options.rank < 1) throw std::invalid_argument("cp_als: rank must be >= 1");
    const auto& dims = t.dims();
    if (dims.size() < 2) throw std::invalid_argument("cp_als: need at least a 2-way tensor");
    for (double x : t.data()) {
        if (!std::isfinite(x)) throw std::invalid_argument("cp_als: tensor must be finite");
        if (options.nonneg && x < 0.0) {
            throw std::invalid_argument("cp_als: negative entry in non-negative mode");
        }
    }
    double norm_t = 0.0;
    for (double x : t.data()) norm_t += x * x;
    norm_t = std::sqrt(norm_t);

    CpAlsResult result;
    result.degenerate = static_cast<std::size_t>(options.rank) >= t.size();
    if (norm_t == 0.0) {
        for (int dim : dims) result.factors.factors.emplace_back(dim, options.rank);
        result.relative_residual = 0.0;
        return result;
    }

    double best_obj = std::numeric_limits<double>::infinity();
    auto keep_best = [&](AlsRun run) {
        if (run.objective < best_obj) {
            best_obj = run.objective;
            result.factors.factors = std::move(run.factors);
            result.iterations = run.iterations;
        }
    };
    for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
        Rng rng(Rng::split(options.seed, static_cast<std::uint64_t>(restart)));
        keep_best(run_als_from(t, options, random_factors(t, options, options.rank, rng),
                               options.max_iters));
    }
    // Rank continuation: grow a low-rank solution by padding it with small
    // fresh columns and re-sweeping, as one extra deterministic restart.
    // Cold starts at high rank tend to land in spiky basins; the grown
    // solution extends the smoother low-rank fit instead.
    if (options.rank > 2) {
        std::vector<int> ladder;
        for (int r = options.rank; r > 2; r = (r + 1) / 2) ladder.push_back(r);
        ladder.push_back(2);
        std::reverse(ladder.begin(), ladder.end());
        Rng rng(Rng::split(options.seed, 0xC0117));
        std::vector<Matrix> current =
            random_factors(t, options, ladder.front(), rng);
        AlsRun last;
        for (std::size_t step = 0; step < ladder.size(); ++step) {
            int iters = step + 1 == ladder.size() ? options.max_iters
                                                  : std::max(10, options.max_iters / 3);
            last = run_als_from(t, options, std::move(current), iters);
            current = last.factors;
            if (step + 1 < ladder.size()) {
                int next_rank = ladder[step + 1];
                double rms = 0.0;
                std::size_t n = 0;
                for (const Matrix& v : current) {
                    for (double x : v.data) rms += x * x;
                    n += v.data.size();
                }
                rms = std::sqrt(rms / std::max<std::size_t>(n, 1));
                for (Matrix& v : current) {
                    Matrix grown(v.rows, next_rank);
                    for (int i = 0; i < v.rows; ++i) {
                        for (int r = 0; r < v.cols; ++r) grown.at(i, r) = v.at(i, r);
                        for (int r = v.cols; r < next_rank; ++r) {
                            double fresh = options.nonneg ? rng.uniform() : rng.gaussian();
                            grown.at(i, r) = 0.01 * rms * fresh;
                            if (options.nonneg) {
                                grown.at(i, r) = std::max(grown.at(i, r), kNonnegFloor);
                            }
                        }
                    }
                    v = std::move(grown);
                }
            }
        }
        keep_best(std::move(last));
    }
    result.relative_residual = std::sqrt(std::max(best_obj, 0.0)) / norm_t;
    return result;
}

// ---------------------------------------------------------------------------
// Bridges
// ---------------------------------------------------------------------------

namespace {

int add_embedding_layer(Circuit& c, int var, const Matrix& factor) {
    // Factor rows are indexed by the variable value; the layer parameter is
    // stored unit-major, hence the transpose.
    Layer input;
    input.kind = LayerKind::Input;
    input.scope = Scope::singleton(var);
    input.width = factor.cols;
    input.family = InputFamily::Embedding;
    input.categories = factor.rows;
    ParamBlock p;
    p.shape = {factor.cols, factor.rows};
    Matrix t = factor.transposed();
    p.data = std::move(t.data);
    p.reparam = Reparam::None;
    p.trainable = false;
    input.param = c.add_param(std::move(p));
    return c.add_layer(std::move(input));
}

int add_dense_sum(Circuit& c, const Scope& scope, const std::vector<int>& inputs,
                  Matrix weights, Reparam reparam, bool trainable) {
    Layer sum;
    sum.kind = LayerKind::Sum;
    sum.scope = scope;
    sum.width = weights.rows;
    sum.inputs = inputs;
    ParamBlock p;
    p.shape = {weights.rows, weights.cols};
    p.data = std::move(weights.data);
    p.reparam = reparam;
    p.trainable = trainable;
    sum.param = c.add_param(std::move(p));
    return c.add_layer(std::move(sum));
}

int add_hadamard(Circuit& c, const std::vector<int>& inputs) {
    Layer had;
    had.kind = LayerKind::Hadamard;
    had.width = c.layer(inputs.front()).width;
    for (int id : inputs) had.scope = had.scope.united_with(c.layer(id).scope);
    had.inputs = inputs;
    return c.add_layer(std::move(had));
}

int add_kronecker(Circuit& c, const std::vector<int>& inputs) {
    Layer kron;
    kron.kind = LayerKind::Kronecker;
    long long width = 1;
    for (int id : inputs) {
        kron.scope = kron.scope.united_with(c.layer(id).scope);
        width *= c.layer(id).width;
    }
    kron.width = static_cast<int>(width);
    kron.inputs = inputs;
    return c.add_layer(std::move(kron));
}

}  // namespace

Circuit tucker_to_circuit(const TuckerFactors& f) {
    const int d = static_cast<int>(f.factors.size());
    if (d < 1) throw std::invalid_argument("tucker_to_circuit: no factor matrices");
    if (static_cast<int>(f.core.dims().size()) != d) {
        throw std::invalid_argument("tucker_to_circuit: core order does not match factor count");
    }
    for (int j = 0; j < d; ++j) {
        if (f.factors[static_cast<std::size_t>(j)].cols !=
            f.core.dims()[static_cast<std::size_t>(j)]) {
            throw std::invalid_argument("tucker_to_circuit: rank mismatch on mode " +
                                        std::to_string(j));
        }
    }
    Circuit c;
    c.set_var_count(d);
    std::vector<int> inputs;
    for (int j = 0; j < d; ++j) {
        inputs.push_back(add_embedding_layer(c, j, f.factors[static_cast<std::size_t>(j)]));
    }
    int out;
    if (d == 1) {
        Matrix w(1, f.core.dims()[0]);
        w.data = f.core.data();
        out = add_dense_sum(c, Scope::full(d), inputs, std::move(w), Reparam::None, false);
    } else {
        int kron = add_kronecker(c, inputs);
        // Row-major vectorization of the core matches the Kronecker order.
        Matrix w(1, static_cast<int>(f.core.size()));
        w.data = f.core.data();
        if (c.layer(kron).width != w.cols) {
            throw std::invalid_argument("tucker_to_circuit: core size mismatch");
        }
        out = add_dense_sum(c, Scope::full(d), {kron}, std::move(w), Reparam::None, false);
        c.blocks().push_back({BlockKind::Tucker, {kron, out}, out});
    }
    c.set_output(out);
    c.nomenclature = "TUCKER-BRIDGE-" + std::to_string(d);
    return c;
}

Circuit htucker_to_circuit(const HTuckerFactors& f) {
    if (!f.rg.is_tree()) {
        throw std::invalid_argument("htucker_to_circuit: region graph must be a tree");
    }
    auto violations = f.rg.validate();
    if (!violations.empty()) {
        throw std::invalid_argument("htucker_to_circuit: " + violations.front());
    }
    Circuit c;
    c.set_var_count(f.rg.var_count());
    // Returns the layer id and its width (the region's rank).
    std::function<std::pair<int, int>(int)> emit = [&](int region_id) -> std::pair<int, int> {
        const RegionNode& region = f.rg.region(region_id);
        if (region.partitions.empty()) {
            if (region.scope.size() != 1) {
                throw std::invalid_argument("htucker_to_circuit: leaves must be univariate");
            }
            auto it = f.leaf_factors.find(region_id);
            if (it == f.leaf_factors.end()) {
                throw std::invalid_argument(
                    "htucker_to_circuit: missing leaf factor for region " +
                    std::to_string(region_id));
            }
            return {add_embedding_layer(c, region.scope[0], it->second), it->second.cols};
        }
        const PartitionNode& part = f.rg.partition(region.partitions.front());
        if (part.children.size() != 2) {
            throw std::invalid_argument("htucker_to_circuit: partitions must be binary");
        }
        auto [left, left_rank] = emit(part.children[0]);
        auto [right, right_rank] = emit(part.children[1]);
        auto it = f.cores.find(region_id);
        if (it == f.cores.end()) {
            throw std::invalid_argument("htucker_to_circuit: missing core for region " +
                                        std::to_string(region_id));
        }
        const DenseTensor& core = it->second;
        if (core.dims().size() != 3 || core.dims()[1] != left_rank ||
            core.dims()[2] != right_rank) {
            throw std::invalid_argument("htucker_to_circuit: core rank mismatch at region " +
                                        std::to_string(region_id));
        }
        int out_rank = core.dims()[0];
        if (region_id == f.rg.root() && out_rank != 1) {
            throw std::invalid_argument("htucker_to_circuit: root rank must be 1");
        }
        int kron = add_kronecker(c, {left, right});
        Matrix w(out_rank, left_rank * right_rank);
        w.data = core.data();
        int sum = add_dense_sum(c, region.scope, {kron}, std::move(w), Reparam::None, false);
        c.blocks().push_back({BlockKind::Tucker, {kron, sum}, sum});
        return {sum, out_rank};
    };
    auto [root_layer, root_rank] = emit(f.rg.root());
    (void)root_rank;
    c.set_output(root_layer);
    c.nomenclature = "HTUCKER-BRIDGE-" + std::to_string(f.rg.var_count());
    return c;
}

Circuit mps_to_circuit(const MPSFactors& f, int inner_rank, MpsBridgeReport* report,
                       const CpAlsOptions& als_in) {
    const int d = static_cast<int>(f.inner.size()) + 2;
    if (f.first.rows < 1 || f.last.rows < 1) {
        throw std::invalid_argument("mps_to_circuit: missing boundary matrices");
    }
    const int chain_rank = f.first.cols;
    if (f.last.cols != chain_rank) {
        throw std::invalid_argument("mps_to_circuit: boundary rank mismatch");
    }
    for (const DenseTensor& a : f.inner) {
        if (a.dims().size() != 3 || a.dims()[1] != chain_rank || a.dims()[2] != chain_rank) {
            throw std::invalid_argument("mps_to_circuit: inner tensor shape mismatch");
        }
    }
    Circuit c;
    c.set_var_count(d);

    if (d == 2) {
        // No inner tensors: t = A1 A2^T, exactly.
        int l1 = add_embedding_layer(c, 0, f.first);
        int l2 = add_embedding_layer(c, 1, f.last);
        int had = add_hadamard(c, {l1, l2});
        Matrix ones(1, chain_rank);
        std::fill(ones.data.begin(), ones.data.end(), 1.0);
        int out = add_dense_sum(c, Scope::full(d), {had}, std::move(ones), Reparam::Frozen, false);
        c.set_output(out);
        c.nomenclature = "MPS-BRIDGE-2";
        return c;
    }

    // CP-decompose each inner tensor A^(j) (I x R x R) into V (I x R'),
    // B (R x R'), C (R x R').
    std::vector<Matrix> v_mats, b_mats, c_mats;
    for (const DenseTensor& a : f.inner) {
        CpAlsOptions als = als_in;
        als.rank = inner_rank;
        CpAlsResult res = cp_als(a, als);
        if (report) report->inner_residuals.push_back(res.relative_residual);
        v_mats.push_back(res.factors.factors[0]);
        b_mats.push_back(res.factors.factors[1]);
        c_mats.push_back(res.factors.factors[2]);
    }

    auto matmul_t = [](const Matrix& a_t, const Matrix& b) {
        // a_t^T * b, giving (a_t.cols x b.cols)
        Matrix out(a_t.cols, b.cols);
        for (int k = 0; k < a_t.rows; ++k) {
            for (int i = 0; i < a_t.cols; ++i) {
                double v = a_t.at(k, i);
                if (v == 0.0) continue;
                for (int j = 0; j < b.cols; ++j) out.at(i, j) += v * b.at(k, j);
            }
        }
        return out;
    };

    int l1 = add_embedding_layer(c, 0, f.first);
    // acc_q = [B_2^T a1]_q * v2_q, with C_{j-1}^T B_j couplings folded in
    // between consecutive positions.
    int acc = add_dense_sum(c, Scope::singleton(0), {l1}, b_mats[0].transposed(),
                            Reparam::None, false);
    int l2 = add_embedding_layer(c, 1, v_mats[0]);
    acc = add_hadamard(c, {acc, l2});
    for (int j = 2; j < d - 1; ++j) {
        Matrix coupling = matmul_t(b_mats[static_cast<std::size_t>(j - 1)],
                                   c_mats[static_cast<std::size_t>(j - 2)]);
        acc = add_dense_sum(c, c.layer(acc).scope, {acc}, std::move(coupling),
                            Reparam::None, false);
        int lj = add_embedding_layer(c, j, v_mats[static_cast<std::size_t>(j - 1)]);
        acc = add_hadamard(c, {acc, lj});
    }
    int ld = add_embedding_layer(c, d - 1, f.last);
    int tail = add_dense_sum(c, Scope::singleton(d - 1), {ld}, c_mats.back().transposed(),
                             Reparam::None, false);
    int had = add_hadamard(c, {acc, tail});
    Matrix ones(1, inner_rank);
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    int out = add_dense_sum(c, Scope::full(d), {had}, std::move(ones), Reparam::Frozen, false);
    c.set_output(out);
    c.nomenclature = "MPS-BRIDGE-" + std::to_string(d);
    return c;
}

// ---------------------------------------------------------------------------
// Tucker-block compression
// ---------------------------------------------------------------------------

namespace {

struct TuckerBlockInfo {
    int sum_id = -1;
    int kron_id = -1;
    std::vector<int> child_widths;
};

std::vector<TuckerBlockInfo> find_tucker_blocks(const Circuit& c) {
    std::vector<int> consumer_count(c.layers().size(), 0);
    std::vector<int> param_refs(c.params().size(), 0);
    for (const Layer& l : c.layers()) {
        for (int in : l.inputs) ++consumer_count[static_cast<std::size_t>(in)];
        if (l.param >= 0) ++param_refs[static_cast<std::size_t>(l.param)];
    }
    std::vector<TuckerBlockInfo> out;
    for (const Layer& l : c.layers()) {
        if (l.kind != LayerKind::Sum || l.structure != SumStructure::Dense) continue;
        if (l.inputs.size() != 1) continue;
        const Layer& in = c.layer(l.inputs.front());
        if (in.kind != LayerKind::Kronecker) continue;
        if (consumer_count[static_cast<std::size_t>(in.id)] != 1) continue;
        if (param_refs[static_cast<std::size_t>(l.param)] != 1) continue;
        TuckerBlockInfo info;
        info.sum_id = l.id;
        info.kron_id = in.id;
        for (int ch : in.inputs) info.child_widths.push_back(c.layer(ch).width);
        out.push_back(info);
    }
    return out;
}

}  // namespace

Circuit compress_tucker_circuit(const Circuit& c, const CompressOptions& options,
                                CompressReport* report) {
    if (options.rank < 1) {
        throw std::invalid_argument("compress_tucker_circuit: rank must be >= 1");
    }
    if (options.nonneg && !c.monotonic()) {
        throw std::invalid_argument(
            "compress_tucker_circuit: non-negative factorization of a non-monotonic circuit");
    }
    std::vector<TuckerBlockInfo> blocks = find_tucker_blocks(c);
    if (blocks.empty()) {
        throw std::invalid_argument("compress_tucker_circuit: no Tucker blocks found");
    }

    // Shared modes stack same-depth, same-shape blocks along the fold
    // dimension and decompose them jointly; plain mode goes block by block.
    std::vector<int> depth(c.layers().size(), 0);
    for (int id = static_cast<int>(c.layers().size()) - 1; id >= 0; --id) {
        for (int in : c.layer(id).inputs) {
            depth[static_cast<std::size_t>(in)] =
                std::max(depth[static_cast<std::size_t>(in)],
                         depth[static_cast<std::size_t>(id)] + 1);
        }
    }
    std::map<std::vector<int>, std::vector<int>> groups;  // key -> indices into `blocks`
    for (int i = 0; i < static_cast<int>(blocks.size()); ++i) {
        const TuckerBlockInfo& b = blocks[static_cast<std::size_t>(i)];
        std::vector<int> key;
        if (options.share != ShareMode::None) {
            key.push_back(depth[static_cast<std::size_t>(b.sum_id)]);
        } else {
            key.push_back(-1 - i);  // singleton group per block
        }
        key.push_back(c.layer(b.sum_id).width);
        for (int w : b.child_widths) key.push_back(w);
        groups[key].push_back(i);
    }

    struct Replacement {
        std::vector<int> factor_params;  // new-circuit param ids: B_i^T ..., then A
        int scale_param = -1;            // CPS only
        int rank = 0;
    };
    std::map<int, Replacement> replacement_by_sum;
    Circuit out;
    out.set_var_count(c.var_count());
    out.nomenclature = c.nomenclature;

    auto make_param = [&](Matrix m, bool trainable) {
        ParamBlock p;
        p.shape = {m.rows, m.cols};
        p.data = std::move(m.data);
        p.reparam = options.nonneg ? Reparam::Clamp : Reparam::None;
        p.trainable = trainable;
        return out.add_param(std::move(p));
    };

    for (const auto& [key, members] : groups) {
        const TuckerBlockInfo& first = blocks[static_cast<std::size_t>(members.front())];
        const int s_width = c.layer(first.sum_id).width;
        const int arity = static_cast<int>(first.child_widths.size());
        const int f_dim = static_cast<int>(members.size());
        const bool stacked_mode = options.share != ShareMode::None;
        std::vector<int> dims;
        if (stacked_mode) dims.push_back(f_dim);
        dims.push_back(s_width);
        for (int w : first.child_widths) dims.push_back(w);
        DenseTensor stacked(dims);
        std::size_t block_size = stacked.size() / static_cast<std::size_t>(f_dim);
        if (!stacked_mode) block_size = stacked.size();
        for (int f = 0; f < f_dim; ++f) {
            const TuckerBlockInfo& b =
                blocks[static_cast<std::size_t>(members[static_cast<std::size_t>(f)])];
            std::vector<double> w = c.sum_weights_dense(b.sum_id);
            std::copy(w.begin(), w.end(),
                      stacked.data().begin() +
                          static_cast<std::ptrdiff_t>(f) * static_cast<std::ptrdiff_t>(block_size));
        }
        CpAlsOptions als = options.als;
        als.rank = options.rank;
        als.nonneg = options.nonneg;
        CpAlsResult res = cp_als(stacked, als);
        if (report) report->block_residuals.push_back(res.relative_residual);

        const int mode_offset = stacked_mode ? 1 : 0;
        std::vector<int> factor_params;
        for (int i = 0; i < arity; ++i) {
            factor_params.push_back(make_param(
                res.factors.factors[static_cast<std::size_t>(mode_offset + 1 + i)].transposed(),
                true));
        }
        factor_params.push_back(
            make_param(res.factors.factors[static_cast<std::size_t>(mode_offset)], true));
        for (int f = 0; f < f_dim; ++f) {
            Replacement r;
            r.factor_params = factor_params;
            r.rank = options.rank;
            if (stacked_mode) {
                // The fold mode factor D: CPS keeps it as a per-fold scale,
                // CPXS absorbs it by averaging into the shared top matrix.
                if (options.share == ShareMode::CPS) {
                    ParamBlock p;
                    p.shape = {options.rank};
                    p.data.resize(static_cast<std::size_t>(options.rank));
                    for (int rr = 0; rr < options.rank; ++rr) {
                        p.data[static_cast<std::size_t>(rr)] =
                            res.factors.factors[0].at(f, rr);
                    }
                    p.reparam = options.nonneg ? Reparam::Clamp : Reparam::None;
                    p.trainable = true;
                    r.scale_param = out.add_param(std::move(p));
                }
            }
            replacement_by_sum[blocks[static_cast<std::size_t>(
                                          members[static_cast<std::size_t>(f)])]
                                   .sum_id] = std::move(r);
        }
        if (stacked_mode && options.share == ShareMode::CPXS) {
            // Mean fold scale folded into the shared top matrix.
            ParamBlock& top = out.param(factor_params.back());
            for (int s = 0; s < s_width; ++s) {
                for (int rr = 0; rr < options.rank; ++rr) {
                    double mean_scale = 0.0;
                    for (int f = 0; f < f_dim; ++f) {
                        mean_scale += res.factors.factors[0].at(f, rr);
                    }
                    mean_scale /= static_cast<double>(f_dim);
                    top.data[static_cast<std::size_t>(s) * options.rank + rr] *= mean_scale;
                }
            }
        }
    }

    // Rebuild the circuit with each Tucker block swapped for its CP form.
    std::vector<int> layer_map(c.layers().size(), -1);
    std::map<int, int> param_map;
    std::set<int> dropped_krons;
    for (const auto& [sum_id, repl] : replacement_by_sum) {
        (void)repl;
        dropped_krons.insert(c.layer(sum_id).inputs.front());
    }
    for (const Layer& l : c.layers()) {
        if (dropped_krons.count(l.id)) continue;
        auto it = replacement_by_sum.find(l.id);
        if (it == replacement_by_sum.end()) {
            Layer copy = l;
            copy.inputs.clear();
            for (int in : l.inputs) copy.inputs.push_back(layer_map[static_cast<std::size_t>(in)]);
            if (l.param >= 0) {
                auto [pit, inserted] = param_map.try_emplace(l.param, -1);
                if (inserted) pit->second = out.add_param(c.param(l.param));
                copy.param = pit->second;
            }
            layer_map[static_cast<std::size_t>(l.id)] = out.add_layer(std::move(copy));
            continue;
        }
        const Replacement& repl = it->second;
        const Layer& old_sum = c.layer(l.id);
        const Layer& old_kron = c.layer(old_sum.inputs.front());
        std::vector<int> q_ids;
        std::vector<int> block_layers;
        for (std::size_t i = 0; i < old_kron.inputs.size(); ++i) {
            int child = layer_map[static_cast<std::size_t>(old_kron.inputs[i])];
            Layer q;
            q.kind = LayerKind::Sum;
            q.scope = out.layer(child).scope;
            q.width = repl.rank;
            q.inputs = {child};
            q.param = repl.factor_params[i];
            q_ids.push_back(out.add_layer(std::move(q)));
            block_layers.push_back(q_ids.back());
        }
        int had = add_hadamard(out, q_ids);
        block_layers.push_back(had);
        int stage = had;
        if (repl.scale_param >= 0) {
            Layer diag;
            diag.kind = LayerKind::Sum;
            diag.scope = out.layer(had).scope;
            diag.width = repl.rank;
            diag.structure = SumStructure::Diagonal;
            diag.inputs = {had};
            diag.param = repl.scale_param;
            stage = out.add_layer(std::move(diag));
            block_layers.push_back(stage);
        }
        Layer top;
        top.kind = LayerKind::Sum;
        top.scope = out.layer(stage).scope;
        top.width = old_sum.width;
        top.inputs = {stage};
        top.param = repl.factor_params.back();
        int top_id = out.add_layer(std::move(top));
        block_layers.push_back(top_id);
        BlockKind kind = options.share == ShareMode::None
                             ? BlockKind::CP
                             : (options.share == ShareMode::CPS ? BlockKind::CPS
                                                                : BlockKind::CPXS);
        out.blocks().push_back({kind, block_layers, top_id});
        layer_map[static_cast<std::size_t>(l.id)] = top_id;
    }
    out.set_output(layer_map[static_cast<std::size_t>(c.output())]);
    for (const BlockRecord& b : c.blocks()) {
        BlockRecord nb;
        nb.kind = b.kind;
        bool alive = true;
        for (int id : b.layer_ids) {
            int mapped = layer_map[static_cast<std::size_t>(id)];
            if (mapped < 0 || replacement_by_sum.count(id)) { alive = false; break; }
            nb.layer_ids.push_back(mapped);
        }
        if (alive) {
            nb.output_layer = layer_map[static_cast<std::size_t>(b.output_layer)];
            out.blocks().push_back(std::move(nb));
        }
    }
    if (options.collapse) {
        out = collapse_sum_chains(out);
    }
    return out;
}

}  // namespace tenscirc
