#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>

#include "tenscirc/factorization.hpp"
#include "tenscirc/fold.hpp"
#include "tenscirc/inference.hpp"
#include "test_util.hpp"

using namespace tenscirc;
using testutil::rel_close;

namespace {

// The worked rank-(2,2,2) example: all-0.5 core with three 3x2 factors.
TuckerFactors worked_example_factors() {
    TuckerFactors f;
    f.core = DenseTensor({2, 2, 2});
    for (std::size_t i = 0; i < f.core.size(); ++i) f.core[i] = 0.5;
    Matrix v1(3, 2), v2(3, 2), v3(3, 2);
    v1.data = {0.1, 0.2, -2.0, -1.0, 1.5, -5.4};
    v2.data = {1.1, 9.1, -3.3, -0.5, 0.7, -2.2};
    v3.data = {-2.0, 0.9, 0.23, 2.4, -1.4, 0.2};
    f.factors = {v1, v2, v3};
    return f;
}

// Printed reconstruction of that example, one 3x3 slice per first index.
const double kWorkedTensor[3][3][3] = {
    {{-1.68, 4.02, -1.84}, {0.63, -1.50, 0.68}, {0.25, -0.59, 0.27}},
    {{16.83, -40.24, 18.36}, {-6.27, 14.99, -6.84}, {-2.48, 5.918, -2.7}},
    {{21.88, -52.31, 23.87}, {-8.15, 19.49, -8.89}, {-3.22, 7.69, -3.51}},
};

CompileOptions options_for(BlockKind kind, Reparam reparam, std::uint64_t seed) {
    CompileOptions opt;
    opt.width = 2;
    opt.block = kind;
    opt.family = InputFamily::Categorical;
    opt.categories = 2;
    opt.reparam = reparam;
    opt.fold = kind == BlockKind::CPS || kind == BlockKind::CPXS;
    opt.seed = seed;
    return opt;
}

}  // namespace

TEST_CASE("worked tucker example: output entry and full reconstruction") {
    Circuit c = tucker_to_circuit(worked_example_factors());
    CHECK(c.validate().empty());
    CHECK(check_smooth(c));
    CHECK(check_decomposable(c));
    CHECK(check_structured(c));

    // Entry (1,2,2) in 1-based index notation.
    Batch b = Batch::observed(3, {0.0, 1.0, 1.0});
    double value = forward_linear(c, b).front();
    CHECK(std::fabs(value - (-1.4991)) <= 5e-4);

    // Entry (1,1,1) reconstructs -1.683, printed rounded to -1.68.
    Batch b111 = Batch::observed(3, {0.0, 0.0, 0.0});
    double v111 = forward_linear(c, b111).front();
    CHECK(std::fabs(v111 - (-1.683)) <= 5e-4);
    CHECK(std::fabs(v111 - kWorkedTensor[0][0][0]) <= 0.01);

    DenseTensor t = reconstruct_tensor(c);
    REQUIRE(t.dims() == std::vector<int>{3, 3, 3});
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) {
                INFO(i, " ", j, " ", k);
                CHECK(std::fabs(t.at({i, j, k}) - kWorkedTensor[i][j][k]) <= 0.01);
            }
        }
    }
}

TEST_CASE("oracle equivalence over every region graph and layer kind") {
    int combos = 0;
    for (const auto& [name, rg] : testutil::small_region_graphs(31)) {
        for (BlockKind kind : testutil::all_block_kinds()) {
            for (Reparam reparam : {Reparam::Softmax, Reparam::Clamp}) {
                INFO(name, " ", to_string(kind), " ", to_string(reparam));
                Circuit c = compile(rg, options_for(kind, reparam, 100 + combos));
                DenseTensor oracle = reconstruct_tensor(c);
                double z = oracle.sum();

                double logz = log_partition(c);
                CHECK(rel_close(std::exp(logz), z, 1e-10));

                FoldedCircuit fc = fold(c);
                Rng rng(500 + combos);
                for (int trial = 0; trial < 4; ++trial) {
                    std::vector<int> row(static_cast<std::size_t>(c.var_count()));
                    Batch b;
                    b.var_count = c.var_count();
                    b.size = 1;
                    b.values.assign(static_cast<std::size_t>(c.var_count()), 0.0);
                    b.marginalized.assign(static_cast<std::size_t>(c.var_count()), 0);
                    for (int j = 0; j < c.var_count(); ++j) {
                        int choice = static_cast<int>(rng.below(3));
                        if (choice == 2 && trial % 2 == 1) {
                            row[static_cast<std::size_t>(j)] = -1;
                            b.marginalized[static_cast<std::size_t>(j)] = 1;
                        } else {
                            int v = static_cast<int>(rng.below(2));
                            row[static_cast<std::size_t>(j)] = v;
                            b.values[static_cast<std::size_t>(j)] = v;
                        }
                    }
                    double expected = testutil::oracle_marginal(oracle, row);
                    double unfolded = forward_log(c, b).front();
                    double folded = forward_log(fc, b).front();
                    CHECK(rel_close(std::exp(unfolded), expected, 1e-10));
                    CHECK(rel_close(std::exp(folded), expected, 1e-10));
                }
                ++combos;
            }
        }
    }
    CHECK(combos >= 50);
}

TEST_CASE("softmax-reparameterized circuits have unit partition function") {
    for (BlockKind kind : testutil::all_block_kinds()) {
        Circuit c = compile(build_qg(2, 2), options_for(kind, Reparam::Softmax, 3));
        CHECK(std::fabs(log_partition(c)) <= 1e-10);
        Batch all = Batch::all_marginalized(c.var_count());
        CHECK(std::fabs(forward_log(c, all).front()) <= 1e-10);
    }
}

TEST_CASE("clamped circuit partition matches dense enumeration on 4 binary vars") {
    Circuit c = compile(build_lt(4), options_for(BlockKind::CP, Reparam::Clamp, 9));
    DenseTensor oracle = reconstruct_tensor(c);
    CHECK(rel_close(std::exp(log_partition(c)), oracle.sum(), 1e-10));
    CHECK(oracle.sum() > 0.0);
}

TEST_CASE("scaling the root weights scales Z but not the distribution") {
    Circuit c = compile(build_lt(3), options_for(BlockKind::CPT, Reparam::Clamp, 4));
    DenseTensor before = reconstruct_tensor(c);
    double z_before = std::exp(log_partition(c));

    Circuit scaled = c;
    int root_param = scaled.layer(scaled.output()).param;
    for (double& x : scaled.param(root_param).data) x *= 2.0;
    DenseTensor after = reconstruct_tensor(scaled);
    double z_after = std::exp(log_partition(scaled));
    CHECK(z_after > z_before);
    CHECK(rel_close(z_after, 2.0 * z_before, 1e-10));
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(rel_close(before[i] / z_before, after[i] / z_after, 1e-10));
    }
}

TEST_CASE("marginal queries agree with dense partial sums") {
    Circuit c = compile(build_qt(2, 2, 4), options_for(BlockKind::Tucker, Reparam::Clamp, 6));
    DenseTensor oracle = reconstruct_tensor(c);

    // Marginalize nothing: equals forward.
    Batch full = Batch::observed(4, {1.0, 0.0, 1.0, 1.0});
    CHECK(rel_close(std::exp(marginal_log(c, full).front()), oracle.at({1, 0, 1, 1}), 1e-10));

    // Marginalize variables 2 and 3: sum over 4 completions.
    Batch partial = full;
    partial.marginalized[2] = 1;
    partial.marginalized[3] = 1;
    double expected = testutil::oracle_marginal(oracle, {1, 0, -1, -1});
    CHECK(rel_close(std::exp(marginal_log(c, partial).front()), expected, 1e-10));

    // Marginalize everything: the partition function.
    Batch all = Batch::all_marginalized(4);
    CHECK(rel_close(marginal_log(c, all).front(), log_partition(c), 1e-12));
}

TEST_CASE("marginalization is consistent across nesting levels") {
    Circuit c = compile(build_lt(3), options_for(BlockKind::CP, Reparam::Clamp, 12));
    // Sum over X1 of p(x0, X1) marginals equals p(x0) marginals.
    for (int x0 = 0; x0 < 2; ++x0) {
        Batch coarse;
        coarse.var_count = 3;
        coarse.size = 1;
        coarse.values = {static_cast<double>(x0), 0.0, 0.0};
        coarse.marginalized = {0, 1, 1};
        double lhs = std::exp(forward_log(c, coarse).front());
        double rhs = 0.0;
        for (int x1 = 0; x1 < 2; ++x1) {
            Batch fine = coarse;
            fine.values[1] = x1;
            fine.marginalized[1] = 0;
            rhs += std::exp(forward_log(c, fine).front());
        }
        CHECK(rel_close(lhs, rhs, 1e-12));
    }
}

TEST_CASE("linear and log evaluation agree on monotonic circuits") {
    for (BlockKind kind : {BlockKind::Tucker, BlockKind::CP, BlockKind::CPT}) {
        Circuit c = compile(build_qg(2, 2), options_for(kind, Reparam::Exp, 15));
        Rng rng(44);
        Batch b = testutil::random_categorical_batch(c, 32, rng,
                                                     testutil::categorical_domains(c));
        auto lin = forward_linear(c, b);
        auto log = forward_log(c, b);
        for (std::size_t i = 0; i < lin.size(); ++i) {
            CHECK(rel_close(lin[i], std::exp(log[i]), 1e-8));
        }
    }
}

TEST_CASE("zero-probability categories propagate as -inf without NaN") {
    // Non-negative embedding with an exact zero: log path yields -inf.
    TuckerFactors f;
    f.core = DenseTensor({1, 1});
    f.core[0] = 1.0;
    Matrix v1(2, 1), v2(2, 1);
    v1.data = {0.0, 1.0};
    v2.data = {0.5, 0.5};
    f.factors = {v1, v2};
    Circuit c = tucker_to_circuit(f);
    Batch b = Batch::observed(2, {0.0, 0.0, 1.0, 1.0});
    auto out = forward_log(c, b);
    CHECK(std::isinf(out[0]));
    CHECK(out[0] < 0.0);
    CHECK(std::isfinite(out[1]));
    CHECK(!std::isnan(out[0]));
}

TEST_CASE("out-of-range categorical values are rejected") {
    Circuit c = compile(build_lt(2), options_for(BlockKind::CP, Reparam::Softmax, 7));
    Batch bad = Batch::observed(2, {0.0, 5.0});
    CHECK_THROWS_AS(forward_log(c, bad), std::invalid_argument);
    Batch frac = Batch::observed(2, {0.5, 1.0});
    CHECK_THROWS_AS(forward_log(c, frac), std::invalid_argument);
}

TEST_CASE("folding groups identical tucker blocks and matches unfolded output") {
    Circuit c = compile(build_qg(2, 2), options_for(BlockKind::Tucker, Reparam::Clamp, 19));
    FoldedCircuit fc = fold(c);
    // Two root Tucker sums (width 1, K^2 inputs) land in one group of 2.
    bool found_pair = false;
    for (std::size_t g = 0; g < fc.groups().size(); ++g) {
        const FoldGroup& group = fc.groups()[g];
        if (group.kind == LayerKind::Sum && group.fold_size() == 2 &&
            fc.base().layer(group.members[0]).width == 1) {
            found_pair = true;
            CHECK(fc.stacked_params(static_cast<int>(g)).size() == 2 * 4);
        }
    }
    CHECK(found_pair);
    // All four categorical input layers fold together.
    for (const FoldGroup& group : fc.groups()) {
        if (group.kind == LayerKind::Input) CHECK(group.fold_size() == 4);
    }

    Rng rng(3);
    Batch b = testutil::random_categorical_batch(c, 64, rng, testutil::categorical_domains(c));
    auto unfolded = forward_log(c, b);
    auto folded = forward_log(fc, b);
    for (std::size_t i = 0; i < unfolded.size(); ++i) {
        CHECK(rel_close(unfolded[i], folded[i], 1e-12));
    }
}

TEST_CASE("folding a single-layer-per-depth circuit is the identity regrouping") {
    RegionGraph rg(1);
    rg.set_root(rg.add_region(Scope{0}));
    Circuit c = compile(rg, options_for(BlockKind::CP, Reparam::Softmax, 2));
    FoldedCircuit fc = fold(c);
    for (const FoldGroup& g : fc.groups()) CHECK(g.fold_size() == 1);
    Batch b = Batch::observed(1, {1.0});
    CHECK(rel_close(forward_log(c, b).front(), forward_log(fc, b).front(), 1e-15));
}

TEST_CASE("fold keeps forward outputs across kinds and batches") {
    for (BlockKind kind : testutil::all_block_kinds()) {
        Circuit c = compile(build_qg(2, 2), options_for(kind, Reparam::Clamp, 23));
        FoldedCircuit fc = fold(c);
        Rng rng(91);
        for (int rep = 0; rep < 25; ++rep) {
            Batch b = testutil::random_categorical_batch(c, 4, rng,
                                                         testutil::categorical_domains(c));
            auto a = forward_log(c, b);
            auto f = forward_log(fc, b);
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(rel_close(a[i], f[i], 1e-12));
        }
    }
}

TEST_CASE("reconstruct_tensor matches a single categorical input pmf") {
    Circuit c;
    c.set_var_count(1);
    Layer in;
    in.kind = LayerKind::Input;
    in.scope = Scope::singleton(0);
    in.width = 1;
    in.family = InputFamily::Categorical;
    in.categories = 4;
    ParamBlock p;
    p.shape = {1, 4};
    p.data = {0.0, 1.0, -0.5, 0.25};
    p.reparam = Reparam::Softmax;
    in.param = c.add_param(p);
    int in_id = c.add_layer(in);
    Layer sum;
    sum.kind = LayerKind::Sum;
    sum.scope = Scope::singleton(0);
    sum.width = 1;
    sum.inputs = {in_id};
    ParamBlock ps;
    ps.shape = {1, 1};
    ps.data = {1.0};
    ps.reparam = Reparam::Frozen;
    sum.param = c.add_param(ps);
    c.set_output(c.add_layer(sum));

    DenseTensor t = reconstruct_tensor(c);
    double z = 0.0;
    for (double x : p.data) z += std::exp(x);
    for (int v = 0; v < 4; ++v) {
        CHECK(rel_close(t.at({v}), std::exp(p.data[static_cast<std::size_t>(v)]) / z, 1e-12));
    }
    CHECK(rel_close(t.sum(), 1.0, 1e-12));
}

TEST_CASE("reconstruct_tensor respects the state-count guard") {
    Circuit c = compile(build_lt(4), options_for(BlockKind::CP, Reparam::Softmax, 1));
    CHECK_THROWS_AS(reconstruct_tensor(c, 8), std::invalid_argument);
}

TEST_CASE("monotonic reconstruction is non-negative and sums to Z") {
    Circuit c = compile(build_rnd(4, 77), options_for(BlockKind::Tucker, Reparam::Clamp, 8));
    DenseTensor t = reconstruct_tensor(c);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] >= 0.0);
    CHECK(rel_close(t.sum(), std::exp(log_partition(c)), 1e-10));
}

TEST_CASE("sampling a deterministic circuit yields the constant row") {
    Circuit c;
    c.set_var_count(2);
    std::vector<int> inputs;
    for (int var = 0; var < 2; ++var) {
        Layer in;
        in.kind = LayerKind::Input;
        in.scope = Scope::singleton(var);
        in.width = 1;
        in.family = InputFamily::Categorical;
        in.categories = 3;
        ParamBlock p;
        p.shape = {1, 3};
        p.data = {-1000.0, 1000.0, -1000.0};  // all mass on state 1
        p.reparam = Reparam::Softmax;
        in.param = c.add_param(p);
        inputs.push_back(c.add_layer(in));
    }
    Layer had;
    had.kind = LayerKind::Hadamard;
    had.scope = Scope{0, 1};
    had.width = 1;
    had.inputs = inputs;
    int had_id = c.add_layer(had);
    Layer sum;
    sum.kind = LayerKind::Sum;
    sum.scope = Scope{0, 1};
    sum.width = 1;
    sum.inputs = {had_id};
    ParamBlock ps;
    ps.shape = {1, 1};
    ps.data = {1.0};
    ps.reparam = Reparam::Frozen;
    sum.param = c.add_param(ps);
    c.set_output(c.add_layer(sum));

    auto rows = sample(c, 50, 99);
    for (const auto& row : rows) {
        CHECK(row[0] == 1.0);
        CHECK(row[1] == 1.0);
    }
}

TEST_CASE("sampling matches the exact joint on a 3-variable cpt circuit") {
    Circuit c = compile(build_lt(3), options_for(BlockKind::CPT, Reparam::Softmax, 41));
    DenseTensor oracle = reconstruct_tensor(c);
    const int n = 200000;
    FoldedCircuit fc = fold(c);
    auto rows = sample(fc, n, 12345);
    std::map<std::vector<int>, int> counts;
    for (const auto& row : rows) {
        counts[{static_cast<int>(row[0]), static_cast<int>(row[1]),
                static_cast<int>(row[2])}]++;
    }
    double tv = 0.0;
    for (std::size_t flat = 0; flat < oracle.size(); ++flat) {
        std::vector<int> idx = oracle.unflatten(flat);
        double freq = counts.count(idx) ? counts[idx] / static_cast<double>(n) : 0.0;
        tv += std::fabs(freq - oracle[flat]);
    }
    tv /= 2.0;
    CHECK(tv < 0.01);

    // Fixed seed reproduces the matrix bit for bit.
    auto again = sample(fc, 64, 777);
    auto again2 = sample(fc, 64, 777);
    CHECK(again == again2);
    auto different = sample(fc, 64, 778);
    CHECK(again != different);
}

TEST_CASE("sampling requires a normalized circuit") {
    Circuit c = compile(build_lt(3), options_for(BlockKind::CPT, Reparam::Clamp, 2));
    CHECK_THROWS_AS(sample(c, 10, 1), std::invalid_argument);
}

TEST_CASE("embedding inputs reject marginalization") {
    Circuit c = tucker_to_circuit(worked_example_factors());
    Batch b = Batch::observed(3, {0.0, 1.0, 1.0});
    b.marginalized[1] = 1;
    CHECK_THROWS_AS(forward_linear(c, b), std::invalid_argument);
}
