#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tenscirc/region_graph.hpp"
#include "tenscirc/scope.hpp"

namespace tenscirc {

enum class LayerKind { Input, Hadamard, Kronecker, Sum };

enum class InputFamily { Categorical, Gaussian, Binomial, Embedding };

/// How raw sum parameters theta map to the weights used at evaluation time.
/// Frozen weights are raw values excluded from training.
enum class Reparam { Softmax, Exp, Clamp, None, Frozen };

/// Storage structure of a sum layer's parameter matrix. Diagonal and
/// block-diagonal layers only store (and only ever learn) their structural
/// nonzeros, which keeps parameter counts and sampling semantics exact.
enum class SumStructure { Dense, Diagonal, BlockDiagonal };

constexpr double kClampEpsilon = 1e-19;

struct ParamBlock {
    std::vector<int> shape;     // row-major
    std::vector<double> data;
    Reparam reparam = Reparam::None;
    bool trainable = false;

    std::size_t size() const { return data.size(); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const {
        int c = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }
};

struct Layer {
    int id = -1;
    LayerKind kind = LayerKind::Sum;
    Scope scope;
    int width = 0;
    std::vector<int> inputs;

    // Input layers only.
    InputFamily family = InputFamily::Categorical;
    int categories = 0;   // Categorical / Embedding domain size
    int binomial_n = 0;

    // Sum layers only.
    SumStructure structure = SumStructure::Dense;
    int diag_blocks = 1;  // BlockDiagonal: number of stacked diagonal blocks

    int param = -1;       // index into Circuit::params, -1 for product layers
};

/// Composite sum-product layer chosen at compile time (Tucker, CP and its
/// transpose/shared variants). CPS and CPXS tie their sum matrices across
/// same-depth blocks and therefore require folding to be enabled.
enum class BlockKind { Tucker, CP, CPT, CPS, CPXS };

std::string to_string(BlockKind k);
std::string to_string(InputFamily f);
std::string to_string(Reparam r);
BlockKind block_kind_from_string(const std::string& s);
InputFamily family_from_string(const std::string& s);
Reparam reparam_from_string(const std::string& s);

/// Record of one compiled sum-product block; kept so that compression and
/// the benchmark harness can address blocks without pattern matching.
struct BlockRecord {
    BlockKind kind = BlockKind::Tucker;
    std::vector<int> layer_ids;  // all layers of the block, output last
    int output_layer = -1;
};

class Circuit {
public:
    int var_count() const { return d_; }
    int output() const { return output_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(int id) const { return layers_.at(static_cast<std::size_t>(id)); }
    const std::vector<ParamBlock>& params() const { return params_; }
    const ParamBlock& param(int id) const { return params_.at(static_cast<std::size_t>(id)); }
    ParamBlock& param(int id) { return params_.at(static_cast<std::size_t>(id)); }
    const std::vector<BlockRecord>& blocks() const { return blocks_; }
    std::vector<BlockRecord>& blocks() { return blocks_; }

    int add_param(ParamBlock p);
    /// Appends a layer; inputs must already exist, so layer ids are a
    /// topological order by construction.
    int add_layer(Layer layer);
    void set_output(int layer_id);
    void set_var_count(int d) { d_ = d; }
    /// Re-points a layer at another parameter block (used by passes that
    /// must unshare fold-tied matrices before rewriting them).
    void set_layer_param(int layer_id, int param_id);

    /// Reparameterized weight matrix of a sum layer, densified row-major
    /// (rows x total input width). Structural zeros stay zero.
    std::vector<double> sum_weights_dense(int layer_id) const;
    /// Reparameterized weights in storage order (dense: S*M, diagonal: K,
    /// block-diagonal: N*K).
    std::vector<double> sum_weights_raw(int layer_id) const;

    int input_width_total(int layer_id) const;
    std::vector<int> consumers_of(int layer_id) const;

    /// Number of unit-to-unit edges (dense sum: S*M, diagonal: K,
    /// block-diagonal: N*K, product: width * arity).
    std::int64_t edge_count() const;
    std::int64_t layer_edge_count(int layer_id) const;
    /// Total stored parameters, counting shared blocks once.
    std::int64_t parameter_count() const;

    /// True when every sum weight and input family output is non-negative,
    /// i.e. log-domain evaluation is well defined.
    bool monotonic() const;

    /// Layer invariant violations (width arithmetic, scope unions, param
    /// shapes); empty for well-formed circuits.
    std::vector<std::string> validate() const;

    std::string nomenclature;  // e.g. "QG-CP-16"

private:
    int d_ = 0;
    int output_ = -1;
    std::vector<Layer> layers_;
    std::vector<ParamBlock> params_;
    std::vector<BlockRecord> blocks_;
};

struct CompileOptions {
    int width = 1;                 // K
    BlockKind block = BlockKind::Tucker;
    InputFamily family = InputFamily::Categorical;
    int categories = 2;
    int binomial_n = 1;
    Reparam reparam = Reparam::Clamp;
    bool fold = false;             // fold intent; required by CPS/CPXS
    bool learn_mixing = false;     // unfreeze multi-partition sum layers
    int cp_rank = 0;               // 0: use width (square Q matrices)
    std::uint64_t seed = 1;
    std::string rg_name;           // used for the nomenclature string
};

/// Overparameterize-and-tensorize: post-order traversal of the region graph,
/// one composite block per partition, a mixing sum over multi-partition
/// regions, output width forced to 1 at the root.
Circuit compile(const RegionGraph& rg, const CompileOptions& options);

bool check_smooth(const Circuit& c);
bool check_decomposable(const Circuit& c);
bool check_structured(const Circuit& c);

/// Appends a block-diagonal sum layer equal to the elementwise mixing
/// combination sum_i w_i .* candidate_i. `weights` is N x K row-major.
int rewrite_mixing_as_sum(Circuit& c, const std::vector<int>& candidates,
                          const std::vector<double>& weights, bool frozen);

/// Collapses sum layers feeding directly into a sum layer that is their only
/// consumer, replacing the pair by the product of their weight matrices.
/// Chains are only collapsed when doing so does not increase the edge count.
Circuit collapse_sum_chains(const Circuit& c);

}  // namespace tenscirc
