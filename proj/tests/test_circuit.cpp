#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "tenscirc/circuit.hpp"
#include "tenscirc/inference.hpp"
#include "tenscirc/region_graph.hpp"
#include "test_util.hpp"

using namespace tenscirc;
using testutil::rel_close;

namespace {

CompileOptions binary_options(BlockKind kind, int k, Reparam reparam = Reparam::Clamp) {
    CompileOptions opt;
    opt.width = k;
    opt.block = kind;
    opt.family = InputFamily::Categorical;
    opt.categories = 2;
    opt.reparam = reparam;
    opt.fold = kind == BlockKind::CPS || kind == BlockKind::CPXS;
    opt.seed = 123;
    return opt;
}

int count_kind(const Circuit& c, LayerKind kind) {
    int n = 0;
    for (const Layer& l : c.layers()) n += l.kind == kind;
    return n;
}

}  // namespace

TEST_CASE("cpt over a linear tree interleaves hadamard and sum layers") {
    Circuit c = compile(build_lt(3), binary_options(BlockKind::CPT, 2));
    CHECK(c.validate().empty());
    CHECK(count_kind(c, LayerKind::Input) == 3);
    CHECK(count_kind(c, LayerKind::Hadamard) == 2);
    CHECK(count_kind(c, LayerKind::Sum) == 2);
    CHECK(count_kind(c, LayerKind::Kronecker) == 0);
    CHECK(c.layer(c.output()).width == 1);
    CHECK(check_smooth(c));
    CHECK(check_decomposable(c));
    CHECK(check_structured(c));
}

TEST_CASE("single-leaf region graph compiles to input plus width-1 sum") {
    RegionGraph rg(1);
    rg.set_root(rg.add_region(Scope{0}));
    CompileOptions opt = binary_options(BlockKind::Tucker, 4);
    opt.categories = 3;
    Circuit c = compile(rg, opt);
    CHECK(c.validate().empty());
    REQUIRE(c.layers().size() == 2);
    CHECK(c.layer(0).kind == LayerKind::Input);
    CHECK(c.layer(0).width == 4);
    CHECK(c.layer(1).kind == LayerKind::Sum);
    CHECK(c.layer(1).width == 1);
    CHECK(c.param(c.layer(1).param).cols() == 4);
}

TEST_CASE("tucker over the 2x2 quad graph: traced layer and parameter counts") {
    Circuit c = compile(build_qg(2, 2), binary_options(BlockKind::Tucker, 2));
    CHECK(c.validate().empty());
    // 4 pixel inputs; 4 pair blocks and 2 root blocks (kronecker+sum each);
    // one mixing sum over the two root candidates.
    CHECK(count_kind(c, LayerKind::Input) == 4);
    CHECK(count_kind(c, LayerKind::Kronecker) == 6);
    CHECK(count_kind(c, LayerKind::Sum) == 7);
    CHECK(c.layers().size() == 17);
    // Parameters: inputs 4*(2*2), pair sums 4*(2*4), root sums 2*(1*4),
    // frozen mixing 2*1.
    CHECK(c.parameter_count() == 16 + 32 + 8 + 2);
    const Layer& out = c.layer(c.output());
    CHECK(out.structure == SumStructure::BlockDiagonal);
    CHECK(out.inputs.size() == 2);
    CHECK(c.param(out.param).reparam == Reparam::Frozen);
}

TEST_CASE("per-block parameter counts match the layer kind") {
    const int k = 3;
    for (BlockKind kind : testutil::all_block_kinds()) {
        Circuit c = compile(build_qt(2, 2, 2), binary_options(kind, k));
        for (const BlockRecord& b : c.blocks()) {
            const Layer& out = c.layer(b.output_layer);
            int s = out.width;
            std::set<int> params;
            for (int id : b.layer_ids) {
                if (c.layer(id).param >= 0) params.insert(c.layer(id).param);
            }
            std::int64_t total = 0;
            for (int p : params) total += static_cast<std::int64_t>(c.param(p).size());
            switch (kind) {
                case BlockKind::Tucker:
                    CHECK(total == static_cast<std::int64_t>(s) * k * k);
                    break;
                case BlockKind::CP:
                case BlockKind::CPXS:
                    CHECK(total == 2 * static_cast<std::int64_t>(s) * k);
                    break;
                case BlockKind::CPS:
                    CHECK(total == 2 * static_cast<std::int64_t>(s) * k + s);
                    break;
                case BlockKind::CPT:
                    CHECK(total == static_cast<std::int64_t>(s) * k);
                    break;
            }
        }
    }
}

TEST_CASE("cps shares its sum matrices across same-depth blocks") {
    Circuit c = compile(build_qt(4, 4, 4), binary_options(BlockKind::CPS, 2));
    CHECK(c.validate().empty());
    // The four depth-matched quadrant blocks must reference shared Q's.
    std::map<int, int> refs;
    for (const Layer& l : c.layers()) {
        if (l.param >= 0) ++refs[l.param];
    }
    int shared = 0;
    for (auto [p, n] : refs) {
        (void)p;
        if (n > 1) ++shared;
    }
    CHECK(shared >= 2);
    // Unfolded evaluation still works with tied parameters.
    Rng rng(5);
    Batch b = testutil::random_categorical_batch(c, 8, rng, testutil::categorical_domains(c));
    CHECK_NOTHROW(forward_log(c, b));
}

TEST_CASE("cps and cpxs require fold intent") {
    CompileOptions opt = binary_options(BlockKind::CPS, 2);
    opt.fold = false;
    CHECK_THROWS_AS(compile(build_lt(3), opt), std::invalid_argument);
    opt.block = BlockKind::CPXS;
    CHECK_THROWS_AS(compile(build_lt(3), opt), std::invalid_argument);
}

TEST_CASE("compile outputs are smooth and decomposable for every rg and kind") {
    for (const auto& [name, rg] : testutil::small_region_graphs(21)) {
        for (BlockKind kind : testutil::all_block_kinds()) {
            INFO(name, " ", to_string(kind));
            Circuit c = compile(rg, binary_options(kind, 2));
            CHECK(c.validate().empty());
            CHECK(check_smooth(c));
            CHECK(check_decomposable(c));
            bool tree = rg.is_tree();
            CHECK(check_structured(c) == tree);
        }
    }
}

TEST_CASE("hand-built sum with mismatched scopes is not smooth") {
    Circuit c;
    c.set_var_count(2);
    for (int var = 0; var < 2; ++var) {
        Layer in;
        in.kind = LayerKind::Input;
        in.scope = Scope::singleton(var);
        in.width = 2;
        in.family = InputFamily::Categorical;
        in.categories = 2;
        ParamBlock p;
        p.shape = {2, 2};
        p.data = {0.1, 0.2, 0.3, 0.4};
        p.reparam = Reparam::Softmax;
        in.param = c.add_param(p);
        c.add_layer(in);
    }
    Layer sum;
    sum.kind = LayerKind::Sum;
    sum.scope = Scope{0, 1};
    sum.width = 1;
    sum.inputs = {0, 1};
    ParamBlock p;
    p.shape = {1, 4};
    p.data = {0.25, 0.25, 0.25, 0.25};
    p.reparam = Reparam::None;
    sum.param = c.add_param(p);
    c.set_output(c.add_layer(sum));
    CHECK_FALSE(check_smooth(c));
    CHECK(check_decomposable(c));
}

TEST_CASE("mixing rewrite equals the elementwise combination") {
    // Two width-2 candidate layers over the same variable.
    Circuit c;
    c.set_var_count(1);
    for (int i = 0; i < 2; ++i) {
        Layer in;
        in.kind = LayerKind::Input;
        in.scope = Scope::singleton(0);
        in.width = 2;
        in.family = InputFamily::Embedding;
        in.categories = 3;
        ParamBlock p;
        p.shape = {2, 3};
        p.data = {0.5 + i, 1.5, 2.5, 3.5, 4.5 + i, 5.5};
        p.reparam = Reparam::None;
        in.param = c.add_param(p);
        c.add_layer(in);
    }

    SUBCASE("selector weights pick one candidate per unit") {
        std::vector<double> w = {1.0, 0.0, 0.0, 1.0};  // rows: block weights
        int id = rewrite_mixing_as_sum(c, {0, 1}, w, false);
        c.set_output(id);
        Batch b = Batch::observed(1, {0.0, 1.0, 2.0});
        auto out = forward_linear(c, b);
        // Expected: unit0 from candidate 0, unit1 from candidate 1.
        for (int row = 0; row < 3; ++row) {
            const ParamBlock& p0 = c.param(c.layer(0).param);
            const ParamBlock& p1 = c.param(c.layer(1).param);
            double expect0 = p0.data[static_cast<std::size_t>(row)];
            double expect1 = p1.data[static_cast<std::size_t>(3 + row)];
            CHECK(out[static_cast<std::size_t>(row) * 2] == doctest::Approx(expect0));
            CHECK(out[static_cast<std::size_t>(row) * 2 + 1] == doctest::Approx(expect1));
        }
    }

    SUBCASE("direct elementwise weighted combination") {
        std::vector<double> w = {0.3, 0.8, 0.7, 0.2};
        int id = rewrite_mixing_as_sum(c, {0, 1}, w, false);
        c.set_output(id);
        Batch b = Batch::observed(1, {2.0});
        auto out = forward_linear(c, b);
        const ParamBlock& p0 = c.param(c.layer(0).param);
        const ParamBlock& p1 = c.param(c.layer(1).param);
        for (int u = 0; u < 2; ++u) {
            double expect = w[static_cast<std::size_t>(u)] *
                                p0.data[static_cast<std::size_t>(u * 3 + 2)] +
                            w[static_cast<std::size_t>(2 + u)] *
                                p1.data[static_cast<std::size_t>(u * 3 + 2)];
            CHECK(rel_close(out[static_cast<std::size_t>(u)], expect, 1e-12));
        }
    }

    SUBCASE("single candidate with identity weights is a pass-through") {
        std::vector<double> w = {1.0, 1.0};
        int id = rewrite_mixing_as_sum(c, {0}, w, true);
        c.set_output(id);
        Batch b = Batch::observed(1, {1.0});
        auto out = forward_linear(c, b);
        const ParamBlock& p0 = c.param(c.layer(0).param);
        CHECK(out[0] == doctest::Approx(p0.data[1]));
        CHECK(out[1] == doctest::Approx(p0.data[4]));
    }

    SUBCASE("frozen uniform weights average the candidates") {
        std::vector<double> w = {0.5, 0.5, 0.5, 0.5};
        int id = rewrite_mixing_as_sum(c, {0, 1}, w, true);
        CHECK(c.param(c.layer(id).param).reparam == Reparam::Frozen);
        c.set_output(id);
        Batch b = Batch::observed(1, {0.0});
        auto out = forward_linear(c, b);
        const ParamBlock& p0 = c.param(c.layer(0).param);
        const ParamBlock& p1 = c.param(c.layer(1).param);
        CHECK(rel_close(out[0], 0.5 * (p0.data[0] + p1.data[0]), 1e-12));
    }

    SUBCASE("width mismatch is rejected") {
        Layer narrow;
        narrow.kind = LayerKind::Input;
        narrow.scope = Scope::singleton(0);
        narrow.width = 1;
        narrow.family = InputFamily::Embedding;
        narrow.categories = 3;
        ParamBlock p;
        p.shape = {1, 3};
        p.data = {1.0, 2.0, 3.0};
        narrow.param = c.add_param(p);
        int nid = c.add_layer(narrow);
        std::vector<double> w = {1.0, 1.0, 1.0, 1.0};
        CHECK_THROWS_AS(rewrite_mixing_as_sum(c, {0, nid}, w, false), std::invalid_argument);
    }
}

TEST_CASE("collapsing a chain with identity on top recovers the bottom matrix") {
    Circuit c;
    c.set_var_count(1);
    Layer in;
    in.kind = LayerKind::Input;
    in.scope = Scope::singleton(0);
    in.width = 2;
    in.family = InputFamily::Categorical;
    in.categories = 2;
    ParamBlock pin;
    pin.shape = {2, 2};
    pin.data = {0.4, 0.6, 0.9, 0.1};
    pin.reparam = Reparam::Softmax;
    in.param = c.add_param(pin);
    int in_id = c.add_layer(in);

    Layer w1;
    w1.kind = LayerKind::Sum;
    w1.scope = Scope::singleton(0);
    w1.width = 2;
    w1.inputs = {in_id};
    ParamBlock p1;
    p1.shape = {2, 2};
    p1.data = {0.2, 0.8, 0.6, 0.4};
    p1.reparam = Reparam::None;
    w1.param = c.add_param(p1);
    int w1_id = c.add_layer(w1);

    Layer w2;
    w2.kind = LayerKind::Sum;
    w2.scope = Scope::singleton(0);
    w2.width = 2;
    w2.inputs = {w1_id};
    ParamBlock p2;
    p2.shape = {2, 2};
    p2.data = {1.0, 0.0, 0.0, 1.0};
    p2.reparam = Reparam::None;
    w2.param = c.add_param(p2);
    c.set_output(c.add_layer(w2));

    Circuit collapsed = collapse_sum_chains(c);
    CHECK(collapsed.layers().size() == 2);
    const Layer& merged = collapsed.layer(collapsed.output());
    REQUIRE(merged.kind == LayerKind::Sum);
    const ParamBlock& merged_p = collapsed.param(merged.param);
    CHECK(merged_p.data == std::vector<double>{0.2, 0.8, 0.6, 0.4});
    CHECK(collapsed.edge_count() <= c.edge_count());
}

TEST_CASE("collapse preserves the encoded function on a linear-tree circuit") {
    Circuit c = compile(build_lt(3), binary_options(BlockKind::CPT, 2, Reparam::Softmax));
    Circuit collapsed = collapse_sum_chains(c);
    CHECK(collapsed.edge_count() <= c.edge_count());
    Rng rng(77);
    auto domains = testutil::categorical_domains(c);
    Batch b = testutil::random_categorical_batch(c, 100, rng, domains);
    auto before = forward_log(c, b);
    auto after = forward_log(collapsed, b);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(rel_close(before[i], after[i], 1e-12));
    }
}

TEST_CASE("collapse leaves fold-shared parameters alone") {
    Circuit c = compile(build_qt(4, 4, 4), binary_options(BlockKind::CPS, 2));
    Circuit collapsed = collapse_sum_chains(c);
    Rng rng(8);
    auto domains = testutil::categorical_domains(c);
    Batch b = testutil::random_categorical_batch(c, 20, rng, domains);
    auto before = forward_log(c, b);
    auto after = forward_log(collapsed, b);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(rel_close(before[i], after[i], 1e-12));
    }
}

TEST_CASE("tucker blocks grow cubically and cp blocks quadratically") {
    for (int k : {2, 4, 8}) {
        Circuit tucker = compile(build_qt(2, 2, 2), binary_options(BlockKind::Tucker, k));
        Circuit cp = compile(build_qt(2, 2, 2), binary_options(BlockKind::CP, k));
        for (const BlockRecord& b : tucker.blocks()) {
            const Layer& sum = tucker.layer(b.output_layer);
            CHECK(tucker.param(sum.param).size() ==
                  static_cast<std::size_t>(sum.width) * k * k);
        }
        for (const BlockRecord& b : cp.blocks()) {
            std::set<int> params;
            for (int id : b.layer_ids) {
                if (cp.layer(id).param >= 0) params.insert(cp.layer(id).param);
            }
            std::size_t total = 0;
            for (int p : params) total += cp.param(p).size();
            CHECK(total == 2 * static_cast<std::size_t>(cp.layer(b.output_layer).width) * k);
        }
    }
}

TEST_CASE("compile rejects invalid region graphs and widths") {
    RegionGraph bad(2);
    bad.add_partition(Scope{0, 1}, {Scope{0}, Scope{0, 1}});
    bad.set_root(bad.find_region(Scope{0, 1}));
    CHECK_THROWS_AS(compile(bad, binary_options(BlockKind::CP, 2)), std::invalid_argument);
    CompileOptions opt = binary_options(BlockKind::CP, 0);
    CHECK_THROWS_AS(compile(build_lt(2), opt), std::invalid_argument);
}

TEST_CASE("nomenclature strings are assembled from the options") {
    CompileOptions opt = binary_options(BlockKind::CP, 16);
    opt.rg_name = "qg";
    Circuit c = compile(build_qg(2, 2), opt);
    CHECK(c.nomenclature == "QG-CP-16");
}
