#include "tenscirc/fold.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <tuple>

namespace tenscirc {

FoldedCircuit::FoldedCircuit(Circuit base, std::vector<FoldGroup> groups)
    : base_(std::move(base)), groups_(std::move(groups)) {
    group_of_.assign(base_.layers().size(), -1);
    slot_of_.assign(base_.layers().size(), -1);
    for (int g = 0; g < static_cast<int>(groups_.size()); ++g) {
        const FoldGroup& group = groups_[static_cast<std::size_t>(g)];
        for (int f = 0; f < group.fold_size(); ++f) {
            int layer_id = group.members[static_cast<std::size_t>(f)];
            group_of_[static_cast<std::size_t>(layer_id)] = g;
            slot_of_[static_cast<std::size_t>(layer_id)] = f;
        }
    }
    for (int id = 0; id < static_cast<int>(base_.layers().size()); ++id) {
        if (group_of_[static_cast<std::size_t>(id)] < 0) {
            throw std::invalid_argument("FoldedCircuit: layer missing from fold groups");
        }
    }
}

std::pair<int, int> FoldedCircuit::output_position() const {
    int out = base_.output();
    return {group_of(out), slot_of(out)};
}

std::vector<double> FoldedCircuit::stacked_params(int group_id) const {
    const FoldGroup& group = groups_.at(static_cast<std::size_t>(group_id));
    std::vector<double> stacked;
    for (int member : group.members) {
        const Layer& l = base_.layer(member);
        if (l.param < 0) continue;
        const ParamBlock& p = base_.param(l.param);
        stacked.insert(stacked.end(), p.data.begin(), p.data.end());
    }
    return stacked;
}

FoldedCircuit fold(const Circuit& c) {
    const auto& layers = c.layers();
    const int n = static_cast<int>(layers.size());

    // Longest distance from the output; inputs always end up strictly deeper
    // than their consumers, so groups evaluate in decreasing depth.
    std::vector<int> depth(static_cast<std::size_t>(n), 0);
    for (int id = n - 1; id >= 0; --id) {
        for (int in : layers[static_cast<std::size_t>(id)].inputs) {
            depth[static_cast<std::size_t>(in)] =
                std::max(depth[static_cast<std::size_t>(in)],
                         depth[static_cast<std::size_t>(id)] + 1);
        }
    }

    using Key = std::tuple<int, int, int, int, std::vector<int>, int, int, int>;
    std::map<Key, std::vector<int>> buckets;
    for (const Layer& l : layers) {
        std::vector<int> input_widths;
        for (int in : l.inputs) input_widths.push_back(c.layer(in).width);
        int param_cols = l.param >= 0 ? c.param(l.param).cols() : 0;
        Key key;
        if (l.kind == LayerKind::Input) {
            // All input layers of one family fold together, depth ignored.
            key = Key{-1, static_cast<int>(l.kind), static_cast<int>(l.family), l.width,
                      {}, l.categories, l.binomial_n, param_cols};
        } else {
            key = Key{depth[static_cast<std::size_t>(l.id)], static_cast<int>(l.kind),
                      static_cast<int>(l.structure), l.width, input_widths, l.diag_blocks,
                      0, param_cols};
        }
        buckets[key].push_back(l.id);
    }

    struct Pending { int min_depth; bool is_input; std::vector<int> members; };
    std::vector<Pending> pending;
    for (auto& [key, members] : buckets) {
        std::sort(members.begin(), members.end());
        int d = std::get<0>(key) < 0 ? 0 : std::get<0>(key);
        pending.push_back({d, std::get<0>(key) < 0, members});
    }
    std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
        if (a.is_input != b.is_input) return a.is_input;  // input groups first
        if (a.min_depth != b.min_depth) return a.min_depth > b.min_depth;
        return a.members.front() < b.members.front();
    });

    std::vector<FoldGroup> groups;
    std::vector<int> group_of(static_cast<std::size_t>(n), -1);
    std::vector<int> slot_of(static_cast<std::size_t>(n), -1);
    for (const Pending& p : pending) {
        FoldGroup g;
        g.kind = c.layer(p.members.front()).kind;
        g.members = p.members;
        for (int f = 0; f < static_cast<int>(p.members.size()); ++f) {
            group_of[static_cast<std::size_t>(p.members[static_cast<std::size_t>(f)])] =
                static_cast<int>(groups.size());
            slot_of[static_cast<std::size_t>(p.members[static_cast<std::size_t>(f)])] = f;
        }
        groups.push_back(std::move(g));
    }
    for (FoldGroup& g : groups) {
        for (int member : g.members) {
            std::vector<std::pair<int, int>> route;
            for (int in : c.layer(member).inputs) {
                route.emplace_back(group_of[static_cast<std::size_t>(in)],
                                   slot_of[static_cast<std::size_t>(in)]);
            }
            g.routing.push_back(std::move(route));
        }
    }
    return FoldedCircuit(c, std::move(groups));
}

}  // namespace tenscirc
