#include "tenscirc/region_graph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tenscirc/rng.hpp"

namespace tenscirc {

RegionGraph::RegionGraph(int var_count) : d_(var_count) {
    if (var_count < 1) {
        throw std::invalid_argument("RegionGraph: var_count must be >= 1");
    }
}

int RegionGraph::add_region(const Scope& scope) {
    if (scope.empty()) {
        throw std::invalid_argument("add_region: empty scope");
    }
    if (scope.vars().back() >= d_) {
        throw std::invalid_argument("add_region: variable index out of range");
    }
    auto it = by_scope_.find(scope);
    if (it != by_scope_.end()) {
        return it->second;
    }
    int id = static_cast<int>(regions_.size());
    regions_.push_back(RegionNode{scope, {}});
    by_scope_.emplace(scope, id);
    return id;
}

int RegionGraph::add_partition(const Scope& parent, const std::vector<Scope>& children) {
    if (children.size() < 2) {
        throw std::invalid_argument("add_partition: needs at least two children");
    }
    int parent_id = add_region(parent);
    std::vector<int> child_ids;
    child_ids.reserve(children.size());
    for (const Scope& child : children) {
        child_ids.push_back(add_region(child));
    }
    // Skip exact duplicates so shared sub-blocks do not double a partitioning.
    for (int pid : regions_[static_cast<std::size_t>(parent_id)].partitions) {
        if (partitions_[static_cast<std::size_t>(pid)].children == child_ids) {
            return pid;
        }
    }
    int id = static_cast<int>(partitions_.size());
    partitions_.push_back(PartitionNode{parent_id, child_ids});
    regions_[static_cast<std::size_t>(parent_id)].partitions.push_back(id);
    return id;
}

int RegionGraph::find_region(const Scope& scope) const {
    auto it = by_scope_.find(scope);
    return it == by_scope_.end() ? -1 : it->second;
}

void RegionGraph::set_root(int region_id) {
    if (region_id < 0 || region_id >= static_cast<int>(regions_.size())) {
        throw std::invalid_argument("set_root: bad region id");
    }
    root_ = region_id;
}

std::vector<int> RegionGraph::leaf_regions() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(regions_.size()); ++i) {
        if (regions_[static_cast<std::size_t>(i)].partitions.empty()) {
            out.push_back(i);
        }
    }
    return out;
}

bool RegionGraph::is_tree() const {
    std::vector<int> parent_count(regions_.size(), 0);
    for (const PartitionNode& p : partitions_) {
        for (int c : p.children) {
            ++parent_count[static_cast<std::size_t>(c)];
        }
    }
    for (int i = 0; i < static_cast<int>(regions_.size()); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        int expected = (i == root_) ? 0 : 1;
        if (parent_count[idx] != expected) return false;
        if (regions_[idx].partitions.size() > 1) return false;
    }
    return true;
}

std::vector<std::string> RegionGraph::validate() const {
    std::vector<std::string> out;
    if (root_ < 0) {
        out.push_back("root: no root region set");
        return out;
    }
    if (region(root_).scope != Scope::full(d_)) {
        out.push_back("root scope: region " + std::to_string(root_) +
                      " does not cover all " + std::to_string(d_) + " variables");
    }
    for (int pid = 0; pid < static_cast<int>(partitions_.size()); ++pid) {
        const PartitionNode& p = partitions_[static_cast<std::size_t>(pid)];
        Scope merged;
        bool disjoint = true;
        for (int c : p.children) {
            const Scope& cs = region(c).scope;
            if (!merged.disjoint_with(cs)) disjoint = false;
            merged = merged.united_with(cs);
        }
        if (!disjoint) {
            out.push_back("non-disjoint partition: partition " + std::to_string(pid));
        }
        if (merged != region(p.parent).scope) {
            out.push_back("partition coverage: partition " + std::to_string(pid) +
                          " children do not union to parent scope");
        }
    }
    // Acyclicity and reachability via DFS from the root over region->partition->region edges.
    std::vector<int> state(regions_.size(), 0);  // 0 unseen, 1 on stack, 2 done
    bool cyclic = false;
    std::function<void(int)> dfs = [&](int r) {
        auto idx = static_cast<std::size_t>(r);
        if (state[idx] == 1) { cyclic = true; return; }
        if (state[idx] == 2) return;
        state[idx] = 1;
        for (int pid : regions_[idx].partitions) {
            for (int c : partition(pid).children) {
                dfs(c);
            }
        }
        state[idx] = 2;
    };
    dfs(root_);
    if (cyclic) out.push_back("cycle: region graph is not acyclic");
    for (int i = 0; i < static_cast<int>(regions_.size()); ++i) {
        if (state[static_cast<std::size_t>(i)] == 0) {
            out.push_back("unreachable: region " + std::to_string(i));
        }
    }
    return out;
}

std::string RegionGraph::to_text() const {
    std::ostringstream os;
    os << "RG " << d_ << ' ' << root_ << '\n';
    for (int i = 0; i < static_cast<int>(regions_.size()); ++i) {
        os << "R " << i << ' ' << regions_[static_cast<std::size_t>(i)].scope.to_string() << '\n';
    }
    for (int i = 0; i < static_cast<int>(partitions_.size()); ++i) {
        const PartitionNode& p = partitions_[static_cast<std::size_t>(i)];
        os << "P " << i << ' ' << p.parent << ' ';
        for (std::size_t j = 0; j < p.children.size(); ++j) {
            if (j > 0) os << ',';
            os << p.children[j];
        }
        os << '\n';
    }
    return os.str();
}

std::string RegionGraph::to_dot() const {
    std::ostringstream os;
    os << "digraph rg {\n  rankdir=TB;\n";
    for (int i = 0; i < static_cast<int>(regions_.size()); ++i) {
        os << "  r" << i << " [shape=box,label=\"{"
           << regions_[static_cast<std::size_t>(i)].scope.to_string() << "}\"];\n";
    }
    for (int i = 0; i < static_cast<int>(partitions_.size()); ++i) {
        const PartitionNode& p = partitions_[static_cast<std::size_t>(i)];
        os << "  p" << i << " [shape=point];\n";
        os << "  r" << p.parent << " -> p" << i << ";\n";
        for (int c : p.children) {
            os << "  p" << i << " -> r" << c << ";\n";
        }
    }
    os << "}\n";
    return os.str();
}

RegionGraph parse_region_graph_text(const std::string& text) {
    std::istringstream is(text);
    std::string tag;
    int d = 0, root = 0;
    if (!(is >> tag >> d >> root) || tag != "RG") {
        throw std::runtime_error("parse_region_graph_text: missing RG header");
    }
    RegionGraph rg(d);
    std::vector<Scope> scopes;
    struct PendingPartition { int parent; std::vector<int> children; };
    std::vector<PendingPartition> pending;
    while (is >> tag) {
        if (tag == "R") {
            int id;
            std::string csv;
            is >> id >> csv;
            std::vector<int> vars;
            std::istringstream cs(csv);
            std::string item;
            while (std::getline(cs, item, ',')) vars.push_back(std::stoi(item));
            if (id != static_cast<int>(scopes.size())) {
                throw std::runtime_error("parse_region_graph_text: non-sequential region id");
            }
            scopes.emplace_back(vars);
        } else if (tag == "P") {
            int id, parent;
            std::string csv;
            is >> id >> parent >> csv;
            (void)id;
            PendingPartition p;
            p.parent = parent;
            std::istringstream cs(csv);
            std::string item;
            while (std::getline(cs, item, ',')) p.children.push_back(std::stoi(item));
            pending.push_back(std::move(p));
        } else {
            throw std::runtime_error("parse_region_graph_text: unknown tag " + tag);
        }
    }
    for (const Scope& s : scopes) rg.add_region(s);
    for (const auto& p : pending) {
        std::vector<Scope> children;
        for (int c : p.children) children.push_back(scopes.at(static_cast<std::size_t>(c)));
        rg.add_partition(scopes.at(static_cast<std::size_t>(p.parent)), children);
    }
    rg.set_root(root);
    return rg;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

RegionGraph build_lt(int d, const std::vector<int>& ordering) {
    if (d < 1) throw std::invalid_argument("build_lt: d must be >= 1");
    std::vector<bool> seen(static_cast<std::size_t>(d), false);
    if (static_cast<int>(ordering.size()) != d) {
        throw std::invalid_argument("build_lt: ordering size mismatch");
    }
    for (int v : ordering) {
        if (v < 0 || v >= d || seen[static_cast<std::size_t>(v)]) {
            throw std::invalid_argument("build_lt: ordering is not a permutation");
        }
        seen[static_cast<std::size_t>(v)] = true;
    }
    RegionGraph rg(d);
    Scope prefix = Scope::singleton(ordering[0]);
    rg.add_region(prefix);
    for (int i = 1; i < d; ++i) {
        Scope next = Scope::singleton(ordering[static_cast<std::size_t>(i)]);
        Scope merged = prefix.united_with(next);
        rg.add_partition(merged, {prefix, next});
        prefix = merged;
    }
    rg.set_root(rg.find_region(prefix));
    return rg;
}

RegionGraph build_lt(int d) {
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    return build_lt(d, order);
}

RegionGraph build_rnd(int d, std::uint64_t seed) {
    if (d < 1) throw std::invalid_argument("build_rnd: d must be >= 1");
    RegionGraph rg(d);
    Rng rng(seed);
    std::function<Scope(std::vector<int>)> split = [&](std::vector<int> vars) -> Scope {
        Scope scope{std::vector<int>(vars)};
        rg.add_region(scope);
        if (vars.size() > 1) {
            rng.shuffle(vars);
            std::size_t half = (vars.size() + 1) / 2;
            std::vector<int> left(vars.begin(), vars.begin() + static_cast<std::ptrdiff_t>(half));
            std::vector<int> right(vars.begin() + static_cast<std::ptrdiff_t>(half), vars.end());
            Scope ls = split(std::move(left));
            Scope rs = split(std::move(right));
            rg.add_partition(scope, {ls, rs});
        }
        return scope;
    };
    std::vector<int> all(static_cast<std::size_t>(d));
    std::iota(all.begin(), all.end(), 0);
    Scope root = split(std::move(all));
    rg.set_root(rg.find_region(root));
    return rg;
}

namespace {

struct Patch {
    int r0, r1, c0, c1;  // half-open pixel ranges
    bool operator<(const Patch& o) const {
        return std::tie(r0, r1, c0, c1) < std::tie(o.r0, o.r1, o.c0, o.c1);
    }
};

Scope patch_scope(const Patch& p, int width) {
    std::vector<int> vars;
    vars.reserve(static_cast<std::size_t>((p.r1 - p.r0) * (p.c1 - p.c0)));
    for (int r = p.r0; r < p.r1; ++r) {
        for (int c = p.c0; c < p.c1; ++c) {
            vars.push_back(r * width + c);
        }
    }
    return Scope{std::move(vars)};
}

}  // namespace

RegionGraph build_pd(int height, int width, int delta) {
    if (height < 1 || width < 1) {
        throw std::invalid_argument("build_pd: height and width must be >= 1");
    }
    if (delta < 0) throw std::invalid_argument("build_pd: delta must be >= 0");
    if (delta > std::max(height, width)) {
        throw std::invalid_argument("build_pd: delta exceeds both image sides");
    }
    const bool center_mode = delta == 0;
    RegionGraph rg(height * width);

    auto grid_cuts = [&](int lo, int hi) {
        std::vector<int> cuts;
        if (center_mode) {
            if (hi - lo > 1) cuts.push_back(lo + (hi - lo + 1) / 2);
            return cuts;
        }
        int first = (lo / delta + 1) * delta;
        for (int x = first; x < hi; x += delta) {
            if (x > lo) cuts.push_back(x);
        }
        // Blocks finer than the cut grid fall back to unit cuts.
        if (cuts.empty() && hi - lo > 1) {
            for (int x = lo + 1; x < hi; ++x) cuts.push_back(x);
        }
        return cuts;
    };

    std::map<Patch, bool> visited;
    std::function<void(const Patch&)> expand = [&](const Patch& p) {
        if (visited.count(p)) return;
        visited[p] = true;
        Scope scope = patch_scope(p, width);
        rg.add_region(scope);
        for (int r : grid_cuts(p.r0, p.r1)) {
            Patch top{p.r0, r, p.c0, p.c1};
            Patch bottom{r, p.r1, p.c0, p.c1};
            rg.add_partition(scope, {patch_scope(top, width), patch_scope(bottom, width)});
            expand(top);
            expand(bottom);
        }
        for (int c : grid_cuts(p.c0, p.c1)) {
            Patch left{p.r0, p.r1, p.c0, c};
            Patch right{p.r0, p.r1, c, p.c1};
            rg.add_partition(scope, {patch_scope(left, width), patch_scope(right, width)});
            expand(left);
            expand(right);
        }
    };
    Patch root{0, height, 0, width};
    expand(root);
    rg.set_root(rg.find_region(patch_scope(root, width)));
    return rg;
}

namespace {

// Shared bottom-up skeleton for the quad tree and quad graph constructions:
// the pixel grid is coarsened by ceil-halving both axes, and every 2x2 block
// of surviving cells is merged through `merge4`.
RegionGraph build_quad(int height, int width,
                       const std::function<void(RegionGraph&, const Scope[2][2])>& merge4) {
    if (height < 1 || width < 1) {
        throw std::invalid_argument("quad builder: height and width must be >= 1");
    }
    RegionGraph rg(height * width);
    std::vector<std::vector<Scope>> grid(static_cast<std::size_t>(height),
                                         std::vector<Scope>(static_cast<std::size_t>(width)));
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                Scope::singleton(r * width + c);
            rg.add_region(grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
        }
    }
    int h = height, w = width;
    while (h > 1 || w > 1) {
        int nh = (h + 1) / 2, nw = (w + 1) / 2;
        std::vector<std::vector<Scope>> next(static_cast<std::size_t>(nh),
                                             std::vector<Scope>(static_cast<std::size_t>(nw)));
        for (int i = 0; i < nh; ++i) {
            for (int j = 0; j < nw; ++j) {
                std::vector<std::pair<int, int>> block;
                for (int u = 0; u < 2; ++u) {
                    for (int v = 0; v < 2; ++v) {
                        int p = 2 * i + u, q = 2 * j + v;
                        if (p < h && q < w) block.emplace_back(p, q);
                    }
                }
                Scope merged;
                for (auto [p, q] : block) {
                    merged = merged.united_with(
                        grid[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)]);
                }
                if (block.size() == 1) {
                    rg.add_region(merged);
                } else if (block.size() == 2) {
                    rg.add_partition(merged,
                                     {grid[static_cast<std::size_t>(block[0].first)]
                                          [static_cast<std::size_t>(block[0].second)],
                                      grid[static_cast<std::size_t>(block[1].first)]
                                          [static_cast<std::size_t>(block[1].second)]});
                } else {
                    Scope z[2][2];
                    for (auto [p, q] : block) {
                        z[p - 2 * i][q - 2 * j] =
                            grid[static_cast<std::size_t>(p)][static_cast<std::size_t>(q)];
                    }
                    merge4(rg, z);
                }
                next[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = merged;
            }
        }
        grid = std::move(next);
        h = nh;
        w = nw;
    }
    rg.set_root(rg.find_region(grid[0][0]));
    return rg;
}

}  // namespace

RegionGraph build_qt(int height, int width, int arity) {
    if (arity != 2 && arity != 4) {
        throw std::invalid_argument("build_qt: arity must be 2 or 4");
    }
    auto merge_tree = [arity](RegionGraph& rg, const Scope z[2][2]) {
        Scope all = z[0][0].united_with(z[0][1]).united_with(z[1][0]).united_with(z[1][1]);
        if (arity == 4) {
            rg.add_partition(all, {z[0][0], z[0][1], z[1][0], z[1][1]});
        } else {
            Scope top = z[0][0].united_with(z[0][1]);
            Scope bottom = z[1][0].united_with(z[1][1]);
            rg.add_partition(all, {top, bottom});
            rg.add_partition(top, {z[0][0], z[0][1]});
            rg.add_partition(bottom, {z[1][0], z[1][1]});
        }
    };
    return build_quad(height, width, merge_tree);
}

RegionGraph build_qg(int height, int width) {
    auto merge_dag = [](RegionGraph& rg, const Scope z[2][2]) {
        Scope all = z[0][0].united_with(z[0][1]).united_with(z[1][0]).united_with(z[1][1]);
        Scope top = z[0][0].united_with(z[0][1]);
        Scope bottom = z[1][0].united_with(z[1][1]);
        Scope left = z[0][0].united_with(z[1][0]);
        Scope right = z[0][1].united_with(z[1][1]);
        rg.add_partition(all, {top, bottom});
        rg.add_partition(all, {left, right});
        rg.add_partition(top, {z[0][0], z[0][1]});
        rg.add_partition(bottom, {z[1][0], z[1][1]});
        rg.add_partition(left, {z[0][0], z[1][0]});
        rg.add_partition(right, {z[0][1], z[1][1]});
    };
    return build_quad(height, width, merge_dag);
}

namespace {

// Empirical pairwise mutual information with add-one smoothing.
double mutual_information(const std::vector<int>& data, int rows, int cols,
                          int a, int b, int ca, int cb) {
    std::vector<double> joint(static_cast<std::size_t>(ca * cb), 1.0);  // +1 smoothing
    for (int n = 0; n < rows; ++n) {
        int va = data[static_cast<std::size_t>(n * cols + a)];
        int vb = data[static_cast<std::size_t>(n * cols + b)];
        joint[static_cast<std::size_t>(va * cb + vb)] += 1.0;
    }
    double total = static_cast<double>(rows) + static_cast<double>(ca) * cb;
    std::vector<double> pa(static_cast<std::size_t>(ca), 0.0);
    std::vector<double> pb(static_cast<std::size_t>(cb), 0.0);
    for (int i = 0; i < ca; ++i) {
        for (int j = 0; j < cb; ++j) {
            double p = joint[static_cast<std::size_t>(i * cb + j)] / total;
            joint[static_cast<std::size_t>(i * cb + j)] = p;
            pa[static_cast<std::size_t>(i)] += p;
            pb[static_cast<std::size_t>(j)] += p;
        }
    }
    double mi = 0.0;
    for (int i = 0; i < ca; ++i) {
        for (int j = 0; j < cb; ++j) {
            double p = joint[static_cast<std::size_t>(i * cb + j)];
            if (p > 0.0) {
                mi += p * std::log(p / (pa[static_cast<std::size_t>(i)] *
                                        pb[static_cast<std::size_t>(j)]));
            }
        }
    }
    return mi;
}

}  // namespace

RegionGraph build_cl(const std::vector<int>& data, int rows, int cols,
                     const std::vector<int>& num_categories) {
    if (rows < 2) throw std::invalid_argument("build_cl: need at least 2 rows");
    if (static_cast<int>(num_categories.size()) != cols) {
        throw std::invalid_argument("build_cl: num_categories size mismatch");
    }
    if (static_cast<int>(data.size()) != rows * cols) {
        throw std::invalid_argument("build_cl: data size mismatch");
    }
    for (int n = 0; n < rows; ++n) {
        for (int j = 0; j < cols; ++j) {
            int v = data[static_cast<std::size_t>(n * cols + j)];
            if (v < 0 || v >= num_categories[static_cast<std::size_t>(j)]) {
                throw std::invalid_argument("build_cl: value out of category bounds");
            }
        }
    }
    const int d = cols;
    if (d == 1) {
        RegionGraph rg(1);
        rg.set_root(rg.add_region(Scope::singleton(0)));
        return rg;
    }

    // Maximum spanning tree over MI; ties broken by (min-index, max-index).
    struct Edge { double mi; int a, b; };
    std::vector<double> mi_table(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<Edge> edges;
    for (int a = 0; a < d; ++a) {
        for (int b = a + 1; b < d; ++b) {
            double mi = mutual_information(data, rows, cols, a, b,
                                           num_categories[static_cast<std::size_t>(a)],
                                           num_categories[static_cast<std::size_t>(b)]);
            mi_table[static_cast<std::size_t>(a) * d + b] = mi;
            mi_table[static_cast<std::size_t>(b) * d + a] = mi;
            edges.push_back({mi, a, b});
        }
    }
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        if (x.mi != y.mi) return x.mi > y.mi;
        return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    std::vector<int> uf(static_cast<std::size_t>(d));
    std::iota(uf.begin(), uf.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (uf[static_cast<std::size_t>(x)] != x) {
            uf[static_cast<std::size_t>(x)] = uf[static_cast<std::size_t>(uf[static_cast<std::size_t>(x)])];
            x = uf[static_cast<std::size_t>(x)];
        }
        return x;
    };
    std::vector<std::vector<int>> adjacent(static_cast<std::size_t>(d));
    int picked = 0;
    for (const Edge& e : edges) {
        int ra = find(e.a), rb = find(e.b);
        if (ra == rb) continue;
        uf[static_cast<std::size_t>(ra)] = rb;
        adjacent[static_cast<std::size_t>(e.a)].push_back(e.b);
        adjacent[static_cast<std::size_t>(e.b)].push_back(e.a);
        if (++picked == d - 1) break;
    }
    for (auto& a : adjacent) std::sort(a.begin(), a.end());

    // Root at a centroid (minimal largest remaining component), lowest index on ties.
    std::vector<int> subtree(static_cast<std::size_t>(d), 1);
    std::function<void(int, int)> sizes = [&](int v, int parent) {
        for (int u : adjacent[static_cast<std::size_t>(v)]) {
            if (u == parent) continue;
            sizes(u, v);
            subtree[static_cast<std::size_t>(v)] += subtree[static_cast<std::size_t>(u)];
        }
    };
    sizes(0, -1);
    int best = 0, best_weight = d + 1;
    std::function<void(int, int)> centroid = [&](int v, int parent) {
        int weight = d - subtree[static_cast<std::size_t>(v)];
        for (int u : adjacent[static_cast<std::size_t>(v)]) {
            if (u == parent) continue;
            weight = std::max(weight, subtree[static_cast<std::size_t>(u)]);
            centroid(u, v);
        }
        if (weight < best_weight || (weight == best_weight && v < best)) {
            best_weight = weight;
            best = v;
        }
    };
    centroid(0, -1);

    // Binary RG by right-leaning chains: a node with children subtrees
    // S1..Sm peels one child-subtree scope off at a time until only the
    // node's own variable remains. Weakly coupled children peel first, so
    // the strongest edge of each node survives as a region.
    RegionGraph rg(d);
    std::function<Scope(int, int)> emit = [&](int v, int parent) -> Scope {
        std::vector<int> children;
        for (int u : adjacent[static_cast<std::size_t>(v)]) {
            if (u != parent) children.push_back(u);
        }
        std::stable_sort(children.begin(), children.end(), [&](int x, int y) {
            double mx = mi_table[static_cast<std::size_t>(v) * d + x];
            double my = mi_table[static_cast<std::size_t>(v) * d + y];
            if (mx != my) return mx < my;
            return x < y;
        });
        std::vector<Scope> child_scopes;
        for (int u : children) {
            child_scopes.push_back(emit(u, v));
        }
        Scope own = Scope::singleton(v);
        rg.add_region(own);
        Scope rest = own;
        for (std::size_t i = child_scopes.size(); i > 0; --i) {
            rest = rest.united_with(child_scopes[i - 1]);
        }
        Scope acc = rest;
        for (const Scope& cs : child_scopes) {
            Scope remainder;
            for (int var : acc.vars()) {
                if (!cs.contains(var)) remainder = remainder.united_with(Scope::singleton(var));
            }
            rg.add_partition(acc, {cs, remainder});
            acc = remainder;
        }
        return rest;
    };
    Scope root_scope = emit(best, -1);
    rg.set_root(rg.find_region(root_scope));
    return rg;
}

}  // namespace tenscirc
