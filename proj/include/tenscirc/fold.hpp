#pragma once

#include <utility>
#include <vector>

#include "tenscirc/circuit.hpp"

namespace tenscirc {

/// One stack of same-shaped layers evaluated together. `members` lists the
/// original layer ids along the fold dimension; `routing[f][slot]` names the
/// (group, fold index) supplying input `slot` of member `f`, so shared
/// sources appear multiple times.
struct FoldGroup {
    LayerKind kind = LayerKind::Sum;
    std::vector<int> members;
    std::vector<std::vector<std::pair<int, int>>> routing;

    int fold_size() const { return static_cast<int>(members.size()); }
};

/// Syntactic regrouping of a circuit along a fold dimension. The folded form
/// references the base circuit's layers and parameter store, so evaluation
/// and gradients act on the very same parameters.
class FoldedCircuit {
public:
    FoldedCircuit() = default;
    FoldedCircuit(Circuit base, std::vector<FoldGroup> groups);

    const Circuit& base() const { return base_; }
    Circuit& base() { return base_; }
    const std::vector<FoldGroup>& groups() const { return groups_; }
    int group_of(int layer_id) const { return group_of_[static_cast<std::size_t>(layer_id)]; }
    int slot_of(int layer_id) const { return slot_of_[static_cast<std::size_t>(layer_id)]; }
    std::pair<int, int> output_position() const;

    /// Stacked parameter tensor of a group: F x (member parameter size),
    /// materialized row-major (shared members repeat their block).
    std::vector<double> stacked_params(int group_id) const;

private:
    Circuit base_;
    std::vector<FoldGroup> groups_;
    std::vector<int> group_of_;
    std::vector<int> slot_of_;
};

/// Depth-based folding: layers grouped by (distance from output, kind,
/// arity, width signature, input family); input layers of one family fold
/// into a single group regardless of depth.
FoldedCircuit fold(const Circuit& c);

}  // namespace tenscirc
