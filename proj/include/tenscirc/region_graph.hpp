#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tenscirc/scope.hpp"

namespace tenscirc {

struct RegionNode {
    Scope scope;
    std::vector<int> partitions;  // outgoing partition ids (empty for leaves)
};

struct PartitionNode {
    int parent = -1;            // region id whose scope this node partitions
    std::vector<int> children;  // region ids; scopes are disjoint, union = parent scope
};

/// Rooted bipartite DAG of regions (variable scopes) and partition nodes.
/// Region nodes are deduplicated by scope, so DAG-shaped constructions
/// (quad graph, Poon-Domingos) share sub-regions between partitionings.
class RegionGraph {
public:
    explicit RegionGraph(int var_count);

    int var_count() const { return d_; }
    int root() const { return root_; }
    const std::vector<RegionNode>& regions() const { return regions_; }
    const std::vector<PartitionNode>& partitions() const { return partitions_; }
    const RegionNode& region(int id) const { return regions_.at(static_cast<std::size_t>(id)); }
    const PartitionNode& partition(int id) const { return partitions_.at(static_cast<std::size_t>(id)); }

    /// Returns the region id for `scope`, creating the node if absent.
    int add_region(const Scope& scope);

    /// Adds a partition of `parent` into `children` (all given as scopes).
    /// Duplicate partitions of the same region are ignored.
    int add_partition(const Scope& parent, const std::vector<Scope>& children);

    int find_region(const Scope& scope) const;  // -1 if absent
    void set_root(int region_id);

    bool is_leaf(int region_id) const { return region(region_id).partitions.empty(); }
    std::vector<int> leaf_regions() const;

    /// True when every non-root region has exactly one parent partition and
    /// every region is partitioned at most once.
    bool is_tree() const;

    /// Structural violations (empty means the graph is well-formed):
    /// bipartite rooted DAG, root scope = all variables, disjoint partition
    /// children covering the parent scope, no childless inner nodes.
    std::vector<std::string> validate() const;

    /// One line per node: `R <id> <scope csv>` then
    /// `P <id> <parent-region-id> <child-region-ids csv>`.
    std::string to_text() const;
    std::string to_dot() const;

private:
    int d_;
    int root_ = -1;
    std::vector<RegionNode> regions_;
    std::vector<PartitionNode> partitions_;
    std::map<Scope, int> by_scope_;
};

/// Linear tree: peels one variable at a time following `ordering`.
RegionGraph build_lt(int d, const std::vector<int>& ordering);
RegionGraph build_lt(int d);  // identity ordering

/// Balanced random binary tree; deterministic in `seed`.
RegionGraph build_rnd(int d, std::uint64_t seed);

/// Poon-Domingos over an height x width pixel grid (row-major variables).
/// `delta >= 1`: axis-aligned cuts at absolute multiples of delta; patches
/// with no admissible coarse cut fall back to unit cuts so leaves stay
/// univariate. `delta == 0` selects the default single-center-cut rule.
RegionGraph build_pd(int height, int width, int delta);

/// Quad tree, bottom-up pixel merging; arity 4 emits one 4-way partition per
/// merged block, arity 2 splits the block top/bottom then left/right.
RegionGraph build_qt(int height, int width, int arity);

/// Quad graph: DAG variant sharing the horizontal/vertical pair regions.
RegionGraph build_qg(int height, int width);

/// Chow-Liu tree over pairwise mutual information (add-one smoothing),
/// rooted at the tree centroid and converted to a binary region graph.
/// `data` is row-major N x d with values in [0, num_categories[j]).
RegionGraph build_cl(const std::vector<int>& data, int rows, int cols,
                     const std::vector<int>& num_categories);

RegionGraph parse_region_graph_text(const std::string& text);

}  // namespace tenscirc
