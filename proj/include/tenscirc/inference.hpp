#pragma once

#include <cstdint>
#include <vector>

#include "tenscirc/circuit.hpp"
#include "tenscirc/fold.hpp"
#include "tenscirc/tensor.hpp"

namespace tenscirc {

/// Batch of assignments; each variable is either observed or marginalized.
/// Categorical observations are stored as their (double-valued) index.
struct Batch {
    int size = 0;
    int var_count = 0;
    std::vector<double> values;        // size x var_count, row-major
    std::vector<std::uint8_t> marginalized;  // same layout; 1 = summed out

    static Batch observed(int d, const std::vector<double>& rows);
    static Batch all_marginalized(int d);

    double value(int row, int var) const {
        return values[static_cast<std::size_t>(row) * var_count + var];
    }
    bool is_marginalized(int row, int var) const {
        return marginalized[static_cast<std::size_t>(row) * var_count + var] != 0;
    }
};

/// Per-layer log-value matrices (batch x width, row-major), cached so the
/// learning module can replay the pass in reverse.
struct Activations {
    std::vector<std::vector<double>> layer_log;
};

/// Log-domain feedforward with per-sum max-shifted log-sum-exp; requires a
/// monotonic circuit. Marginalized variables make normalized input layers
/// emit log 1 = 0. Returns log c(x) per batch row.
std::vector<double> forward_log(const Circuit& c, const Batch& batch,
                                Activations* cache = nullptr);

/// Linear-domain feedforward; the path for bridges with possibly negative
/// embeddings and the entry-wise oracle.
std::vector<double> forward_linear(const Circuit& c, const Batch& batch);

/// log Z via a single all-marginalized pass.
double log_partition(const Circuit& c);

/// log p(evidence): forward with MARGINALIZED marks summing out the rest.
std::vector<double> marginal_log(const Circuit& c, const Batch& batch);

/// Dense materialization: entry(x) = linear-domain c(x) for every joint
/// categorical state. Guarded to at most `max_states` entries.
DenseTensor reconstruct_tensor(const Circuit& c, std::size_t max_states = 1000000);

/// Exact ancestral sampling by top-down traversal; requires a normalized
/// monotonic circuit (every sum row sums to 1) with univariate inputs.
/// Returns an N x d assignment matrix, deterministic in `seed`.
std::vector<std::vector<double>> sample(const Circuit& c, int n, std::uint64_t seed);
std::vector<std::vector<double>> sample(const FoldedCircuit& fc, int n, std::uint64_t seed);

/// Folded evaluation; matches the unfolded path on the same circuit.
std::vector<double> forward_log(const FoldedCircuit& fc, const Batch& batch,
                                Activations* cache = nullptr);

}  // namespace tenscirc
