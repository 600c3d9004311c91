#pragma once

#include <cstdint>
#include <string>

#include "tenscirc/circuit.hpp"
#include "tenscirc/region_graph.hpp"

namespace tenscirc {

struct BenchSpec {
    std::string rg_kind = "qg";  // lt, rnd, pd, qt2, qt4, qg
    int height = 4;
    int width = 4;
    BlockKind layer = BlockKind::CP;
    int k = 16;
    int categories = 256;
    int batch_size = 128;
    int reps = 20;
    int warmups = 3;
    std::int64_t memory_guard_bytes = 1LL << 30;
    std::uint64_t seed = 1;
};

struct BenchReport {
    std::string nomenclature;
    int k = 0;
    int batch_size = 0;
    int worker_count = 1;
    bool oom = false;                  // refused by the memory guard
    std::int64_t estimated_bytes = 0;  // runtime buffer estimate, not OS RSS
    std::int64_t parameter_count = 0;
    std::int64_t edge_count = 0;
    double forward_ms = 0.0;           // median over reps after warmups
    double forward_backward_ms = 0.0;
    double rep_spread = 0.0;           // (max-min)/median across kept reps

    std::string csv_row() const;
    static std::string csv_header();
};

/// Pre-compile buffer estimate for the guard: parameters (with optimizer
/// state) plus activations and adjoints at the given batch size.
std::int64_t estimate_bytes(const RegionGraph& rg, BlockKind layer, int k, int categories,
                            int batch_size);

RegionGraph build_rg_by_kind(const std::string& kind, int height, int width,
                             std::uint64_t seed);

/// Times folded forward and forward+backward passes; architectures over the
/// memory guard come back as an OOM row without being compiled.
BenchReport bench(const BenchSpec& spec);

/// Parses "[RG]-[LAYER]-K" nomenclature back into its pieces.
struct ParsedNomenclature {
    std::string rg_kind;
    BlockKind layer;
    int k = 0;
};
ParsedNomenclature parse_nomenclature(const std::string& name);

}  // namespace tenscirc
