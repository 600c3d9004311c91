#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "tenscirc/circuit.hpp"
#include "tenscirc/region_graph.hpp"
#include "tenscirc/tensor.hpp"

namespace tenscirc {

/// Row-major dense matrix, the shape factor matrices travel in.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) t.at(c, r) = at(r, c);
        }
        return t;
    }
};

/// Core tensor W (R1 x ... x Rd) plus factor matrices V_j (I_j x R_j).
struct TuckerFactors {
    DenseTensor core;
    std::vector<Matrix> factors;
};

/// One core per internal region of a binary tree region graph with
/// univariate leaves, plus a factor matrix per leaf; the root rank is 1.
struct HTuckerFactors {
    RegionGraph rg{1};
    std::map<int, DenseTensor> cores;     // region id -> R_Y x R_Z1 x R_Z2
    std::map<int, Matrix> leaf_factors;   // region id -> I_j x R_leaf
};

/// Matrix-product state: boundary matrices I_1 x R and I_d x R, inner
/// 3-tensors I_j x R x R sharing the chain rank R.
struct MPSFactors {
    Matrix first;
    std::vector<DenseTensor> inner;
    Matrix last;
};

/// CP factor matrices I_j x R sharing rank R.
struct CPFactors {
    std::vector<Matrix> factors;
};

struct CpAlsOptions {
    int rank = 1;
    bool nonneg = false;
    int max_iters = 200;
    double tol = 1e-10;          // relative objective improvement stop
    int restarts = 5;
    std::uint64_t seed = 1;
};

struct CpAlsResult {
    CPFactors factors;
    double relative_residual = 0.0;
    int iterations = 0;
    bool degenerate = false;  // requested rank >= tensor size
};

/// Alternating least squares CP decomposition; in non-negative mode factor
/// entries are projected to >= 1e-12 after each solve and a sweep is only
/// accepted if the objective did not increase. Best of `restarts` runs.
CpAlsResult cp_als(const DenseTensor& t, const CpAlsOptions& options);

/// Shallow circuit: d embedding inputs, one Kronecker layer, one 1 x prod(R)
/// sum layer carrying the row-major vectorized core.
Circuit tucker_to_circuit(const TuckerFactors& f);

/// Deep circuit stacking one Kronecker+sum block per internal region.
Circuit htucker_to_circuit(const HTuckerFactors& f);

struct MpsBridgeReport {
    std::vector<double> inner_residuals;  // one per inner tensor
};

/// Chain-shaped circuit with Hadamard layers and an all-ones output matrix;
/// inner tensors are CP-decomposed at `inner_rank` first. Residuals above
/// the caller's tolerance are reported through `report`, never fatal.
Circuit mps_to_circuit(const MPSFactors& f, int inner_rank,
                       MpsBridgeReport* report = nullptr,
                       const CpAlsOptions& als = {});

enum class ShareMode { None, CPS, CPXS };

struct CompressOptions {
    int rank = 1;
    ShareMode share = ShareMode::None;
    bool nonneg = true;
    bool collapse = true;   // collapse sum chains after the rewrite
    CpAlsOptions als;
};

struct CompressReport {
    std::vector<double> block_residuals;
};

/// Rewrites every Tucker block as a CP block by (NN-)CP-decomposing its
/// parameter tensor; with CPS/CPXS sharing, same-depth blocks are stacked
/// along the fold dimension and decomposed jointly, keeping the factor
/// matrices shared and (for CPS) a per-fold scale vector.
Circuit compress_tucker_circuit(const Circuit& c, const CompressOptions& options,
                                CompressReport* report = nullptr);

}  // namespace tenscirc
