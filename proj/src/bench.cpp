#include "tenscirc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tenscirc/fold.hpp"
#include "tenscirc/inference.hpp"
#include "tenscirc/learning.hpp"
#include "tenscirc/rng.hpp"

namespace tenscirc {

std::string BenchReport::csv_header() {
    return "nomenclature,k,batch,workers,oom,estimated_bytes,parameters,edges,"
           "forward_ms,forward_backward_ms,rep_spread";
}

std::string BenchReport::csv_row() const {
    std::ostringstream os;
    os << nomenclature << ',' << k << ',' << batch_size << ',' << worker_count << ','
       << (oom ? "OOM" : "ok") << ',' << estimated_bytes << ',' << parameter_count << ','
       << edge_count << ',' << forward_ms << ',' << forward_backward_ms << ',' << rep_spread;
    return os.str();
}

RegionGraph build_rg_by_kind(const std::string& kind, int height, int width,
                             std::uint64_t seed) {
    const int d = height * width;
    if (kind == "lt") return build_lt(d);
    if (kind == "rnd") return build_rnd(d, seed);
    if (kind == "pd") return build_pd(height, width, 0);
    if (kind == "qt2") return build_qt(height, width, 2);
    if (kind == "qt4" || kind == "qt") return build_qt(height, width, 4);
    if (kind == "qg") return build_qg(height, width);
    throw std::invalid_argument("unknown region graph kind: " + kind);
}

std::int64_t estimate_bytes(const RegionGraph& rg, BlockKind layer, int k, int categories,
                            int batch_size) {
    // Walk the region graph instead of compiling, so oversized architectures
    // are refused before their parameter tensors are ever allocated.
    std::int64_t params = 0;
    std::int64_t units = 0;
    for (int leaf : rg.leaf_regions()) {
        (void)leaf;
        params += static_cast<std::int64_t>(k) * categories;
        units += k;
    }
    for (const PartitionNode& p : rg.partitions()) {
        const int arity = static_cast<int>(p.children.size());
        const bool root = p.parent == rg.root();
        const std::int64_t out_width = root ? 1 : k;
        std::int64_t kron = 1;
        for (int i = 0; i < arity; ++i) kron *= k;
        switch (layer) {
            case BlockKind::Tucker:
                params += out_width * kron;
                units += kron + out_width;
                break;
            case BlockKind::CP:
            case BlockKind::CPXS:
                params += static_cast<std::int64_t>(arity) * out_width * k;
                units += static_cast<std::int64_t>(arity + 1) * out_width;
                break;
            case BlockKind::CPS:
                params += static_cast<std::int64_t>(arity) * out_width * k + out_width;
                units += static_cast<std::int64_t>(arity + 2) * out_width;
                break;
            case BlockKind::CPT:
                params += out_width * k;
                units += k + out_width;
                break;
        }
    }
    for (const RegionNode& r : rg.regions()) {
        if (r.partitions.size() > 1) {
            std::int64_t width = (&r == &rg.regions()[static_cast<std::size_t>(rg.root())]) ? 1 : k;
            params += static_cast<std::int64_t>(r.partitions.size()) * width;
            units += width;
        }
    }
    // Parameters carry gradient plus two Adam moments; activations carry the
    // forward value and one adjoint per unit and batch element.
    return 8 * (4 * params + 2 * units * static_cast<std::int64_t>(batch_size));
}

namespace {

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

BenchReport bench(const BenchSpec& spec) {
    BenchReport report;
    report.k = spec.k;
    report.batch_size = spec.batch_size;
    {
        std::string rg_tag = spec.rg_kind;
        std::string layer_tag = to_string(spec.layer);
        for (char& ch : rg_tag) ch = static_cast<char>(std::toupper(ch));
        for (char& ch : layer_tag) ch = static_cast<char>(std::toupper(ch));
        report.nomenclature = rg_tag + "-" + layer_tag + "-" + std::to_string(spec.k);
    }

    RegionGraph rg = build_rg_by_kind(spec.rg_kind, spec.height, spec.width, spec.seed);
    report.estimated_bytes = estimate_bytes(rg, spec.layer, spec.k, spec.categories,
                                            spec.batch_size);
    if (report.estimated_bytes > spec.memory_guard_bytes) {
        report.oom = true;
        return report;
    }

    CompileOptions opt;
    opt.width = spec.k;
    opt.block = spec.layer;
    opt.family = InputFamily::Categorical;
    opt.categories = spec.categories;
    opt.reparam = Reparam::Clamp;
    opt.fold = true;
    opt.seed = spec.seed;
    opt.rg_name = spec.rg_kind;
    Circuit c = compile(rg, opt);
    report.parameter_count = c.parameter_count();
    report.edge_count = c.edge_count();
    FoldedCircuit fc = fold(c);

    Rng rng(spec.seed + 17);
    Batch batch;
    batch.var_count = c.var_count();
    batch.size = spec.batch_size;
    batch.values.resize(static_cast<std::size_t>(spec.batch_size) * batch.var_count);
    batch.marginalized.assign(batch.values.size(), 0);
    for (double& v : batch.values) {
        v = static_cast<double>(rng.below(static_cast<std::uint64_t>(spec.categories)));
    }

    auto time_once = [&](bool with_backward) {
        auto t0 = std::chrono::steady_clock::now();
        if (with_backward) {
            GradStore grads = backward(fc, batch);
            (void)grads;
        } else {
            auto out = forward_log(fc, batch);
            (void)out;
        }
        auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(t1 - t0).count();
    };

    for (int i = 0; i < spec.warmups; ++i) time_once(false);
    std::vector<double> fwd, both;
    for (int i = 0; i < spec.reps; ++i) fwd.push_back(time_once(false));
    for (int i = 0; i < spec.reps; ++i) both.push_back(time_once(true));
    report.forward_ms = median(fwd);
    report.forward_backward_ms = median(both);
    double lo = *std::min_element(fwd.begin(), fwd.end());
    double hi = *std::max_element(fwd.begin(), fwd.end());
    report.rep_spread = report.forward_ms > 0.0 ? (hi - lo) / report.forward_ms : 0.0;
    return report;
}

ParsedNomenclature parse_nomenclature(const std::string& name) {
    auto first = name.find('-');
    auto last = name.rfind('-');
    if (first == std::string::npos || last == first) {
        throw std::invalid_argument("nomenclature must look like RG-LAYER-K: " + name);
    }
    ParsedNomenclature out;
    out.rg_kind = name.substr(0, first);
    std::string layer = name.substr(first + 1, last - first - 1);
    for (char& ch : out.rg_kind) ch = static_cast<char>(std::tolower(ch));
    for (char& ch : layer) ch = static_cast<char>(std::tolower(ch));
    out.layer = block_kind_from_string(layer);
    out.k = std::stoi(name.substr(last + 1));
    return out;
}

}  // namespace tenscirc
