#include "tenscirc/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "tenscirc/rng.hpp"

namespace tenscirc {

std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::Tucker: return "tucker";
        case BlockKind::CP: return "cp";
        case BlockKind::CPT: return "cpt";
        case BlockKind::CPS: return "cps";
        case BlockKind::CPXS: return "cpxs";
    }
    return "?";
}

std::string to_string(InputFamily f) {
    switch (f) {
        case InputFamily::Categorical: return "categorical";
        case InputFamily::Gaussian: return "gaussian";
        case InputFamily::Binomial: return "binomial";
        case InputFamily::Embedding: return "embedding";
    }
    return "?";
}

std::string to_string(Reparam r) {
    switch (r) {
        case Reparam::Softmax: return "softmax";
        case Reparam::Exp: return "exp";
        case Reparam::Clamp: return "clamp";
        case Reparam::None: return "none";
        case Reparam::Frozen: return "frozen";
    }
    return "?";
}

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "tucker") return BlockKind::Tucker;
    if (s == "cp") return BlockKind::CP;
    if (s == "cpt") return BlockKind::CPT;
    if (s == "cps") return BlockKind::CPS;
    if (s == "cpxs") return BlockKind::CPXS;
    throw std::invalid_argument("unknown layer kind: " + s);
}

InputFamily family_from_string(const std::string& s) {
    if (s == "categorical") return InputFamily::Categorical;
    if (s == "gaussian") return InputFamily::Gaussian;
    if (s == "binomial") return InputFamily::Binomial;
    if (s == "embedding") return InputFamily::Embedding;
    throw std::invalid_argument("unknown input family: " + s);
}

Reparam reparam_from_string(const std::string& s) {
    if (s == "softmax") return Reparam::Softmax;
    if (s == "exp") return Reparam::Exp;
    if (s == "clamp") return Reparam::Clamp;
    if (s == "none") return Reparam::None;
    if (s == "frozen") return Reparam::Frozen;
    throw std::invalid_argument("unknown reparameterization: " + s);
}

int Circuit::add_param(ParamBlock p) {
    int id = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    return id;
}

int Circuit::add_layer(Layer layer) {
    for (int in : layer.inputs) {
        if (in < 0 || in >= static_cast<int>(layers_.size())) {
            throw std::invalid_argument("add_layer: input layer does not exist yet");
        }
    }
    layer.id = static_cast<int>(layers_.size());
    layers_.push_back(std::move(layer));
    return layers_.back().id;
}

void Circuit::set_output(int layer_id) {
    if (layer_id < 0 || layer_id >= static_cast<int>(layers_.size())) {
        throw std::invalid_argument("set_output: bad layer id");
    }
    output_ = layer_id;
}

void Circuit::set_layer_param(int layer_id, int param_id) {
    if (param_id < 0 || param_id >= static_cast<int>(params_.size())) {
        throw std::invalid_argument("set_layer_param: bad param id");
    }
    layers_.at(static_cast<std::size_t>(layer_id)).param = param_id;
}

int Circuit::input_width_total(int layer_id) const {
    const Layer& l = layer(layer_id);
    int total = 0;
    for (int in : l.inputs) total += layer(in).width;
    return total;
}

std::vector<int> Circuit::consumers_of(int layer_id) const {
    std::vector<int> out;
    for (const Layer& l : layers_) {
        for (int in : l.inputs) {
            if (in == layer_id) out.push_back(l.id);
        }
    }
    return out;
}

std::vector<double> Circuit::sum_weights_raw(int layer_id) const {
    const Layer& l = layer(layer_id);
    if (l.kind != LayerKind::Sum) {
        throw std::invalid_argument("sum_weights_raw: not a sum layer");
    }
    const ParamBlock& p = param(l.param);
    std::vector<double> w(p.data);
    switch (p.reparam) {
        case Reparam::None:
        case Reparam::Frozen:
            break;
        case Reparam::Exp:
            for (double& x : w) x = std::exp(x);
            break;
        case Reparam::Clamp:
            for (double& x : w) x = std::max(kClampEpsilon, x);
            break;
        case Reparam::Softmax: {
            // Normalization runs over each conceptual weight-matrix row:
            // contiguous for dense layers, strided across blocks for
            // block-diagonal ones, and a single entry for diagonal ones.
            if (l.structure == SumStructure::Dense) {
                int rows = p.rows(), cols = p.cols();
                for (int r = 0; r < rows; ++r) {
                    double* row = w.data() + static_cast<std::ptrdiff_t>(r) * cols;
                    double m = row[0];
                    for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
                    double z = 0.0;
                    for (int c = 0; c < cols; ++c) z += std::exp(row[c] - m);
                    for (int c = 0; c < cols; ++c) row[c] = std::exp(row[c] - m) / z;
                }
            } else if (l.structure == SumStructure::Diagonal) {
                std::fill(w.begin(), w.end(), 1.0);
            } else {
                int blocks = l.diag_blocks, k = l.width;
                for (int col = 0; col < k; ++col) {
                    double m = w[static_cast<std::size_t>(col)];
                    for (int i = 1; i < blocks; ++i) {
                        m = std::max(m, w[static_cast<std::size_t>(i * k + col)]);
                    }
                    double z = 0.0;
                    for (int i = 0; i < blocks; ++i) {
                        z += std::exp(w[static_cast<std::size_t>(i * k + col)] - m);
                    }
                    for (int i = 0; i < blocks; ++i) {
                        auto idx = static_cast<std::size_t>(i * k + col);
                        w[idx] = std::exp(w[idx] - m) / z;
                    }
                }
            }
            break;
        }
    }
    return w;
}

std::vector<double> Circuit::sum_weights_dense(int layer_id) const {
    const Layer& l = layer(layer_id);
    std::vector<double> w = sum_weights_raw(layer_id);
    if (l.structure == SumStructure::Dense) return w;
    int k = l.width;
    if (l.structure == SumStructure::Diagonal) {
        std::vector<double> dense(static_cast<std::size_t>(k) * k, 0.0);
        for (int i = 0; i < k; ++i) {
            dense[static_cast<std::size_t>(i) * k + i] = w[static_cast<std::size_t>(i)];
        }
        return dense;
    }
    int blocks = l.diag_blocks;
    std::vector<double> dense(static_cast<std::size_t>(k) * blocks * k, 0.0);
    for (int i = 0; i < blocks; ++i) {
        for (int j = 0; j < k; ++j) {
            dense[static_cast<std::size_t>(j) * (blocks * k) + i * k + j] =
                w[static_cast<std::size_t>(i * k + j)];
        }
    }
    return dense;
}

std::int64_t Circuit::layer_edge_count(int layer_id) const {
    const Layer& l = layer(layer_id);
    switch (l.kind) {
        case LayerKind::Input:
            return 0;
        case LayerKind::Hadamard:
        case LayerKind::Kronecker:
            return static_cast<std::int64_t>(l.width) * static_cast<std::int64_t>(l.inputs.size());
        case LayerKind::Sum:
            if (l.structure == SumStructure::Diagonal) return l.width;
            if (l.structure == SumStructure::BlockDiagonal) {
                return static_cast<std::int64_t>(l.diag_blocks) * l.width;
            }
            return static_cast<std::int64_t>(l.width) * input_width_total(layer_id);
    }
    return 0;
}

std::int64_t Circuit::edge_count() const {
    std::int64_t total = 0;
    for (const Layer& l : layers_) total += layer_edge_count(l.id);
    return total;
}

std::int64_t Circuit::parameter_count() const {
    std::set<int> seen;
    std::int64_t total = 0;
    for (const Layer& l : layers_) {
        if (l.param >= 0 && seen.insert(l.param).second) {
            total += static_cast<std::int64_t>(param(l.param).size());
        }
    }
    return total;
}

bool Circuit::monotonic() const {
    std::set<int> checked;
    for (const Layer& l : layers_) {
        if (l.param < 0 || !checked.insert(l.param).second) continue;
        const ParamBlock& p = param(l.param);
        if (l.kind == LayerKind::Sum) {
            if (p.reparam == Reparam::None || p.reparam == Reparam::Frozen) {
                for (double x : p.data) {
                    if (x < 0.0) return false;
                }
            }
        } else if (l.family == InputFamily::Embedding) {
            for (double x : p.data) {
                if (x < 0.0) return false;
            }
        }
    }
    return true;
}

std::vector<std::string> Circuit::validate() const {
    std::vector<std::string> out;
    auto err = [&](int id, const std::string& msg) {
        out.push_back("layer " + std::to_string(id) + ": " + msg);
    };
    for (const Layer& l : layers_) {
        if (l.kind == LayerKind::Input) {
            if (!l.inputs.empty()) err(l.id, "input layer with inputs");
            if (l.param < 0) { err(l.id, "input layer without parameters"); continue; }
            const ParamBlock& p = param(l.param);
            int expected_cols = 0;
            switch (l.family) {
                case InputFamily::Categorical:
                case InputFamily::Embedding: expected_cols = l.categories; break;
                case InputFamily::Gaussian: expected_cols = 2; break;
                case InputFamily::Binomial: expected_cols = 1; break;
            }
            if (p.rows() != l.width || p.cols() != expected_cols) {
                err(l.id, "input parameter shape mismatch");
            }
            continue;
        }
        Scope merged;
        for (int in : l.inputs) merged = merged.united_with(layer(in).scope);
        if (merged != l.scope) err(l.id, "scope is not the union of input scopes");
        if (l.inputs.empty()) err(l.id, "inner layer without inputs");
        if (l.kind == LayerKind::Hadamard) {
            for (int in : l.inputs) {
                if (layer(in).width != l.width) err(l.id, "hadamard width mismatch");
            }
        } else if (l.kind == LayerKind::Kronecker) {
            long long prod = 1;
            for (int in : l.inputs) prod *= layer(in).width;
            if (prod != l.width) err(l.id, "kronecker width mismatch");
        } else {
            if (l.param < 0) { err(l.id, "sum layer without parameters"); continue; }
            const ParamBlock& p = param(l.param);
            int total = input_width_total(l.id);
            if (l.structure == SumStructure::Dense) {
                if (p.rows() != l.width || p.cols() != total) err(l.id, "sum shape mismatch");
            } else if (l.structure == SumStructure::Diagonal) {
                if (l.inputs.size() != 1 || total != l.width ||
                    static_cast<int>(p.size()) != l.width) {
                    err(l.id, "diagonal sum shape mismatch");
                }
            } else {
                if (total != l.diag_blocks * l.width ||
                    static_cast<int>(p.size()) != l.diag_blocks * l.width) {
                    err(l.id, "block-diagonal sum shape mismatch");
                }
            }
        }
    }
    if (output_ < 0) out.push_back("circuit: no output layer");
    else if (layer(output_).scope != Scope::full(d_)) {
        out.push_back("circuit: output scope does not cover all variables");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural checks
// ---------------------------------------------------------------------------

bool check_smooth(const Circuit& c) {
    for (const Layer& l : c.layers()) {
        if (l.kind != LayerKind::Sum) continue;
        for (int in : l.inputs) {
            if (c.layer(in).scope != l.scope) return false;
        }
    }
    return true;
}

bool check_decomposable(const Circuit& c) {
    for (const Layer& l : c.layers()) {
        if (l.kind != LayerKind::Hadamard && l.kind != LayerKind::Kronecker) continue;
        for (std::size_t i = 0; i < l.inputs.size(); ++i) {
            for (std::size_t j = i + 1; j < l.inputs.size(); ++j) {
                if (!c.layer(l.inputs[i]).scope.disjoint_with(c.layer(l.inputs[j]).scope)) {
                    return false;
                }
            }
        }
    }
    return true;
}

bool check_structured(const Circuit& c) {
    if (!check_smooth(c) || !check_decomposable(c)) return false;
    std::map<Scope, std::vector<Scope>> decomposition;
    for (const Layer& l : c.layers()) {
        if (l.kind != LayerKind::Hadamard && l.kind != LayerKind::Kronecker) continue;
        std::vector<Scope> parts;
        for (int in : l.inputs) parts.push_back(c.layer(in).scope);
        std::sort(parts.begin(), parts.end());
        auto [it, inserted] = decomposition.try_emplace(l.scope, parts);
        if (!inserted && it->second != parts) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Compile pipeline
// ---------------------------------------------------------------------------

namespace {

ParamBlock make_sum_param(Rng& rng, int rows, int cols, Reparam reparam) {
    ParamBlock p;
    p.shape = {rows, cols};
    p.data.resize(static_cast<std::size_t>(rows) * cols);
    for (double& x : p.data) x = rng.uniform(0.01, 1.01);
    p.reparam = reparam;
    p.trainable = reparam != Reparam::Frozen;
    return p;
}

ParamBlock make_input_param(Rng& rng, InputFamily family, int width, int categories) {
    ParamBlock p;
    p.trainable = true;
    switch (family) {
        case InputFamily::Categorical:
            p.shape = {width, categories};
            p.data.resize(static_cast<std::size_t>(width) * categories);
            for (double& x : p.data) x = 0.5 * rng.gaussian();
            p.reparam = Reparam::Softmax;
            break;
        case InputFamily::Gaussian:
            p.shape = {width, 2};
            p.data.resize(static_cast<std::size_t>(width) * 2);
            for (int k = 0; k < width; ++k) {
                p.data[static_cast<std::size_t>(k) * 2] = rng.gaussian();  // mean
                p.data[static_cast<std::size_t>(k) * 2 + 1] = 0.0;         // log stddev
            }
            p.reparam = Reparam::None;
            break;
        case InputFamily::Binomial:
            p.shape = {width, 1};
            p.data.resize(static_cast<std::size_t>(width));
            for (double& x : p.data) x = 0.5 * rng.gaussian();
            p.reparam = Reparam::None;
            break;
        case InputFamily::Embedding:
            p.shape = {width, categories};
            p.data.resize(static_cast<std::size_t>(width) * categories);
            for (double& x : p.data) x = rng.gaussian();
            p.reparam = Reparam::None;
            break;
    }
    return p;
}

struct BlockBuilder {
    Circuit& c;
    const CompileOptions& opt;
    Rng& rng;

    // One composite sum-product block for a partition with child layers
    // `children`, producing `out_width` units.
    int build(const std::vector<int>& children, int out_width) {
        switch (opt.block) {
            case BlockKind::Tucker: return build_tucker(children, out_width);
            case BlockKind::CP: return build_cp(children, out_width, false, false);
            case BlockKind::CPT: return build_cpt(children, out_width);
            case BlockKind::CPS: return build_cp(children, out_width, true, true);
            case BlockKind::CPXS: return build_cp(children, out_width, true, false);
        }
        throw std::logic_error("unreachable");
    }

    int build_tucker(const std::vector<int>& children, int out_width) {
        Scope scope;
        long long kron_width = 1;
        for (int ch : children) {
            scope = scope.united_with(c.layer(ch).scope);
            kron_width *= c.layer(ch).width;
        }
        Layer kron;
        kron.kind = LayerKind::Kronecker;
        kron.scope = scope;
        kron.width = static_cast<int>(kron_width);
        kron.inputs = children;
        int kron_id = c.add_layer(kron);

        Layer sum;
        sum.kind = LayerKind::Sum;
        sum.scope = scope;
        sum.width = out_width;
        sum.inputs = {kron_id};
        sum.param = c.add_param(make_sum_param(rng, out_width, static_cast<int>(kron_width),
                                               opt.reparam));
        int sum_id = c.add_layer(sum);
        c.blocks().push_back({opt.block, {kron_id, sum_id}, sum_id});
        return sum_id;
    }

    int build_cp(const std::vector<int>& children, int out_width, bool shared, bool with_scale) {
        int inner = opt.cp_rank > 0 ? opt.cp_rank : opt.width;
        bool widen = inner != opt.width && !shared;  // explicit inner rank: A (Q1 l1 . Q2 l2)
        int had_width = widen ? inner : out_width;
        Scope scope;
        std::vector<int> sums;
        std::vector<int> block_layers;
        for (int ch : children) {
            const Layer& child = c.layer(ch);
            scope = scope.united_with(child.scope);
            Layer q;
            q.kind = LayerKind::Sum;
            q.scope = child.scope;
            q.width = had_width;
            q.inputs = {ch};
            q.param = c.add_param(make_sum_param(rng, had_width, child.width, opt.reparam));
            sums.push_back(c.add_layer(q));
            block_layers.push_back(sums.back());
        }
        Layer had;
        had.kind = LayerKind::Hadamard;
        had.scope = scope;
        had.width = had_width;
        had.inputs = sums;
        int had_id = c.add_layer(had);
        block_layers.push_back(had_id);
        int out_id = had_id;
        if (widen) {
            Layer top;
            top.kind = LayerKind::Sum;
            top.scope = scope;
            top.width = out_width;
            top.inputs = {had_id};
            top.param = c.add_param(make_sum_param(rng, out_width, inner, opt.reparam));
            out_id = c.add_layer(top);
            block_layers.push_back(out_id);
        }
        if (with_scale) {
            Layer diag;
            diag.kind = LayerKind::Sum;
            diag.scope = scope;
            diag.width = out_width;
            diag.structure = SumStructure::Diagonal;
            diag.inputs = {out_id};
            ParamBlock p;
            p.shape = {out_width};
            p.data.resize(static_cast<std::size_t>(out_width));
            for (double& x : p.data) x = rng.uniform(0.01, 1.01);
            p.reparam = opt.reparam;
            p.trainable = true;
            diag.param = c.add_param(p);
            out_id = c.add_layer(diag);
            block_layers.push_back(out_id);
        }
        c.blocks().push_back({opt.block, block_layers, out_id});
        return out_id;
    }

    int build_cpt(const std::vector<int>& children, int out_width) {
        Scope scope;
        int in_width = c.layer(children.front()).width;
        for (int ch : children) scope = scope.united_with(c.layer(ch).scope);
        Layer had;
        had.kind = LayerKind::Hadamard;
        had.scope = scope;
        had.width = in_width;
        had.inputs = children;
        int had_id = c.add_layer(had);

        Layer sum;
        sum.kind = LayerKind::Sum;
        sum.scope = scope;
        sum.width = out_width;
        sum.inputs = {had_id};
        sum.param = c.add_param(make_sum_param(rng, out_width, in_width, opt.reparam));
        int sum_id = c.add_layer(sum);
        c.blocks().push_back({opt.block, {had_id, sum_id}, sum_id});
        return sum_id;
    }
};

// Ties the Q-matrices of same-depth CPS/CPXS blocks to a single parameter
// block per (depth, slot, shape) group; depth is distance from the output.
void share_cp_params(Circuit& c) {
    std::vector<int> depth(c.layers().size(), 0);
    for (int id = static_cast<int>(c.layers().size()) - 1; id >= 0; --id) {
        for (int in : c.layer(id).inputs) {
            depth[static_cast<std::size_t>(in)] =
                std::max(depth[static_cast<std::size_t>(in)],
                         depth[static_cast<std::size_t>(id)] + 1);
        }
    }
    struct Key {
        int depth, slot, rows, cols;
        bool operator<(const Key& o) const {
            return std::tie(depth, slot, rows, cols) < std::tie(o.depth, o.slot, o.rows, o.cols);
        }
    };
    std::map<Key, int> shared;
    // The layer table is immutable by design, so re-pointing parameters runs
    // through a mutation pass local to compile().
    std::vector<Layer> layers(c.layers());
    for (const BlockRecord& b : c.blocks()) {
        if (b.kind != BlockKind::CPS && b.kind != BlockKind::CPXS) continue;
        for (std::size_t slot = 0; slot < b.layer_ids.size(); ++slot) {
            const Layer& l = c.layer(b.layer_ids[slot]);
            if (l.kind != LayerKind::Sum || l.structure != SumStructure::Dense) continue;
            const ParamBlock& p = c.param(l.param);
            Key key{depth[static_cast<std::size_t>(l.id)], static_cast<int>(slot),
                    p.rows(), p.cols()};
            auto [it, inserted] = shared.try_emplace(key, l.param);
            if (!inserted) {
                layers[static_cast<std::size_t>(l.id)].param = it->second;
            }
        }
    }
    Circuit rebuilt;
    rebuilt.set_var_count(c.var_count());
    rebuilt.nomenclature = c.nomenclature;
    std::vector<int> param_map(c.params().size(), -1);
    for (Layer& l : layers) {
        if (l.param >= 0) {
            auto idx = static_cast<std::size_t>(l.param);
            if (param_map[idx] < 0) {
                param_map[idx] = rebuilt.add_param(c.param(l.param));
            }
            l.param = param_map[idx];
        }
        Layer copy = l;
        rebuilt.add_layer(std::move(copy));
    }
    rebuilt.set_output(c.output());
    rebuilt.blocks() = c.blocks();
    c = std::move(rebuilt);
}

}  // namespace

Circuit compile(const RegionGraph& rg, const CompileOptions& options) {
    auto violations = rg.validate();
    if (!violations.empty()) {
        throw std::invalid_argument("compile: invalid region graph: " + violations.front());
    }
    if (options.width < 1) throw std::invalid_argument("compile: width must be >= 1");
    if ((options.block == BlockKind::CPS || options.block == BlockKind::CPXS) && !options.fold) {
        throw std::invalid_argument(
            "compile: cps/cpxs layers share parameters across folds and require fold=true");
    }
    if (options.family == InputFamily::Embedding) {
        throw std::invalid_argument("compile: embedding inputs are reserved for bridges");
    }

    Circuit c;
    c.set_var_count(rg.var_count());
    Rng rng(options.seed);
    BlockBuilder builder{c, options, rng};

    std::vector<int> region_layer(rg.regions().size(), -1);
    std::function<int(int)> visit = [&](int region_id) -> int {
        int& cached = region_layer[static_cast<std::size_t>(region_id)];
        if (cached >= 0) return cached;
        const RegionNode& region = rg.region(region_id);
        if (region.partitions.empty()) {
            Layer input;
            input.kind = LayerKind::Input;
            input.scope = region.scope;
            input.width = options.width;
            input.family = options.family;
            input.categories = options.categories;
            input.binomial_n = options.binomial_n;
            input.param = c.add_param(make_input_param(rng, options.family, options.width,
                                                       options.categories));
            cached = c.add_layer(input);
            return cached;
        }
        // CP-family blocks put their sums below the Hadamard, so collapsing
        // the root to width 1 inside the block would force the partition's
        // sides independent; those keep width K here and get a width-1 sum
        // head after the traversal.
        const bool sum_below_product = options.block == BlockKind::CP ||
                                       options.block == BlockKind::CPS ||
                                       options.block == BlockKind::CPXS;
        int out_width = (region_id == rg.root() && !sum_below_product) ? 1 : options.width;
        std::vector<int> candidates;
        for (int pid : region.partitions) {
            std::vector<int> children;
            for (int child : rg.partition(pid).children) {
                children.push_back(visit(child));
            }
            candidates.push_back(builder.build(children, out_width));
        }
        if (candidates.size() == 1) {
            cached = candidates.front();
            return cached;
        }
        if (options.learn_mixing) {
            int n = static_cast<int>(candidates.size());
            Layer sum;
            sum.kind = LayerKind::Sum;
            sum.scope = region.scope;
            sum.width = out_width;
            sum.inputs = candidates;
            sum.param = c.add_param(make_sum_param(rng, out_width, n * out_width,
                                                   options.reparam));
            cached = c.add_layer(sum);
        } else {
            int n = static_cast<int>(candidates.size());
            std::vector<double> weights(static_cast<std::size_t>(n) * out_width,
                                        1.0 / static_cast<double>(n));
            cached = rewrite_mixing_as_sum(c, candidates, weights, /*frozen=*/true);
        }
        return cached;
    };

    int root_layer = visit(rg.root());
    if (c.layer(root_layer).width != 1) {
        // Width-1 output head (CP-family roots and leaf-only region graphs).
        Layer sum;
        sum.kind = LayerKind::Sum;
        sum.scope = c.layer(root_layer).scope;
        sum.width = 1;
        sum.inputs = {root_layer};
        sum.param = c.add_param(make_sum_param(rng, 1, c.layer(root_layer).width,
                                               options.reparam));
        root_layer = c.add_layer(sum);
    }
    c.set_output(root_layer);

    if (options.block == BlockKind::CPS || options.block == BlockKind::CPXS) {
        share_cp_params(c);
    }

    std::string rg_tag = options.rg_name.empty() ? "RG" : options.rg_name;
    std::string kind_tag = to_string(options.block);
    for (char& ch : rg_tag) ch = static_cast<char>(std::toupper(ch));
    for (char& ch : kind_tag) ch = static_cast<char>(std::toupper(ch));
    c.nomenclature = rg_tag + "-" + kind_tag + "-" + std::to_string(options.width);
    return c;
}

int rewrite_mixing_as_sum(Circuit& c, const std::vector<int>& candidates,
                          const std::vector<double>& weights, bool frozen) {
    if (candidates.empty()) {
        throw std::invalid_argument("rewrite_mixing_as_sum: no candidate layers");
    }
    int k = c.layer(candidates.front()).width;
    const Scope& scope = c.layer(candidates.front()).scope;
    for (int id : candidates) {
        if (c.layer(id).width != k) {
            throw std::invalid_argument("rewrite_mixing_as_sum: width mismatch");
        }
        if (c.layer(id).scope != scope) {
            throw std::invalid_argument("rewrite_mixing_as_sum: scope mismatch");
        }
    }
    int n = static_cast<int>(candidates.size());
    if (static_cast<int>(weights.size()) != n * k) {
        throw std::invalid_argument("rewrite_mixing_as_sum: weights must be N x K");
    }
    Layer sum;
    sum.kind = LayerKind::Sum;
    sum.scope = scope;
    sum.width = k;
    sum.structure = SumStructure::BlockDiagonal;
    sum.diag_blocks = n;
    sum.inputs = candidates;
    ParamBlock p;
    p.shape = {n, k};
    p.data = weights;
    p.reparam = frozen ? Reparam::Frozen : Reparam::None;
    p.trainable = !frozen;
    sum.param = c.add_param(p);
    return c.add_layer(sum);
}

Circuit collapse_sum_chains(const Circuit& c) {
    if (!check_smooth(c) || !check_decomposable(c)) {
        throw std::invalid_argument("collapse_sum_chains: circuit must be smooth and decomposable");
    }
    Circuit current = c;
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<int> consumer_count(current.layers().size(), 0);
        std::vector<int> param_refs(current.params().size(), 0);
        for (const Layer& l : current.layers()) {
            for (int in : l.inputs) ++consumer_count[static_cast<std::size_t>(in)];
            if (l.param >= 0) ++param_refs[static_cast<std::size_t>(l.param)];
        }
        // v absorbs its single sum input u when v is u's only consumer and
        // the merged matrix does not add edges. Multi-link chains settle
        // over several passes; within one pass an absorber is never itself
        // absorbed.
        std::vector<int> absorbed_into(current.layers().size(), -1);
        std::vector<char> is_absorber(current.layers().size(), 0);
        for (const Layer& v : current.layers()) {
            if (v.kind != LayerKind::Sum || v.inputs.size() != 1) continue;
            int u_id = v.inputs.front();
            const Layer& u = current.layer(u_id);
            if (u.kind != LayerKind::Sum) continue;
            if (u_id == current.output()) continue;
            if (consumer_count[static_cast<std::size_t>(u_id)] != 1) continue;
            if (is_absorber[static_cast<std::size_t>(u_id)] ||
                absorbed_into[static_cast<std::size_t>(u_id)] >= 0) {
                continue;
            }
            // Merging rewrites the weights, so parameters tied to other
            // layers (fold-shared matrices) must stay untouched.
            if (param_refs[static_cast<std::size_t>(v.param)] > 1 ||
                param_refs[static_cast<std::size_t>(u.param)] > 1) {
                continue;
            }
            std::int64_t merged_edges = static_cast<std::int64_t>(v.width) *
                                        current.input_width_total(u_id);
            if (merged_edges > current.layer_edge_count(v.id) + current.layer_edge_count(u_id)) {
                continue;
            }
            absorbed_into[static_cast<std::size_t>(u_id)] = v.id;
            is_absorber[static_cast<std::size_t>(v.id)] = 1;
            changed = true;
        }
        if (!changed) break;

        Circuit next;
        next.set_var_count(current.var_count());
        next.nomenclature = current.nomenclature;
        std::vector<int> layer_map(current.layers().size(), -1);
        for (const Layer& l : current.layers()) {
            if (absorbed_into[static_cast<std::size_t>(l.id)] >= 0) continue;  // merged away
            Layer copy = l;
            copy.inputs.clear();
            if (l.kind == LayerKind::Sum && l.inputs.size() == 1 &&
                absorbed_into[static_cast<std::size_t>(l.inputs.front())] == l.id) {
                const Layer& u = current.layer(l.inputs.front());
                std::vector<double> wv = current.sum_weights_dense(l.id);
                std::vector<double> wu = current.sum_weights_dense(u.id);
                int rows = l.width, mid = u.width, cols = current.input_width_total(u.id);
                ParamBlock merged;
                if (l.structure == SumStructure::Diagonal &&
                    u.structure == SumStructure::Diagonal) {
                    merged.shape = {rows};
                    merged.data.resize(static_cast<std::size_t>(rows));
                    std::vector<double> dv = current.sum_weights_raw(l.id);
                    std::vector<double> du = current.sum_weights_raw(u.id);
                    for (int i = 0; i < rows; ++i) {
                        merged.data[static_cast<std::size_t>(i)] =
                            dv[static_cast<std::size_t>(i)] * du[static_cast<std::size_t>(i)];
                    }
                    copy.structure = SumStructure::Diagonal;
                } else {
                    merged.shape = {rows, cols};
                    merged.data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
                    for (int i = 0; i < rows; ++i) {
                        for (int m = 0; m < mid; ++m) {
                            double w = wv[static_cast<std::size_t>(i) * mid + m];
                            if (w == 0.0) continue;
                            for (int j = 0; j < cols; ++j) {
                                merged.data[static_cast<std::size_t>(i) * cols + j] +=
                                    w * wu[static_cast<std::size_t>(m) * cols + j];
                            }
                        }
                    }
                    copy.structure = SumStructure::Dense;
                    copy.diag_blocks = 1;
                }
                const ParamBlock& pv = current.param(l.param);
                const ParamBlock& pu = current.param(u.param);
                bool frozen = pv.reparam == Reparam::Frozen && pu.reparam == Reparam::Frozen;
                bool monotone = pv.reparam != Reparam::None && pu.reparam != Reparam::None;
                merged.reparam = frozen ? Reparam::Frozen
                                        : (monotone ? Reparam::Clamp : Reparam::None);
                merged.trainable = !frozen && (pv.trainable || pu.trainable);
                copy.param = next.add_param(merged);
                for (int in : u.inputs) {
                    copy.inputs.push_back(layer_map[static_cast<std::size_t>(in)]);
                }
            } else {
                if (l.param >= 0) copy.param = next.add_param(current.param(l.param));
                for (int in : l.inputs) {
                    copy.inputs.push_back(layer_map[static_cast<std::size_t>(in)]);
                }
            }
            layer_map[static_cast<std::size_t>(l.id)] = next.add_layer(std::move(copy));
        }
        next.set_output(layer_map[static_cast<std::size_t>(current.output())]);
        for (const BlockRecord& b : current.blocks()) {
            BlockRecord nb;
            nb.kind = b.kind;
            bool alive = true;
            for (int id : b.layer_ids) {
                int mapped = layer_map[static_cast<std::size_t>(id)];
                if (mapped < 0) { alive = false; break; }
                nb.layer_ids.push_back(mapped);
            }
            if (alive) {
                nb.output_layer = layer_map[static_cast<std::size_t>(b.output_layer)];
                next.blocks().push_back(std::move(nb));
            }
        }
        current = std::move(next);
    }
    return current;
}

}  // namespace tenscirc
