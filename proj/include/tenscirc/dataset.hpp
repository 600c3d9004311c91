#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tenscirc/circuit.hpp"
#include "tenscirc/inference.hpp"

namespace tenscirc {

/// N x d value matrix with homogeneous per-variable family metadata.
struct Dataset {
    int var_count = 0;
    std::vector<double> values;  // row-major N x d
    InputFamily family = InputFamily::Categorical;
    std::vector<int> domains;    // per-variable category count (categorical only)
    std::string split;           // train / valid / test

    int size() const {
        return var_count == 0 ? 0
                              : static_cast<int>(values.size() / static_cast<std::size_t>(var_count));
    }
    double at(int row, int var) const {
        return values[static_cast<std::size_t>(row) * var_count + var];
    }
    Batch batch_of(const std::vector<int>& rows) const;
    Batch full_batch() const;
    Dataset slice(int begin, int end) const;
};

/// IDX ingestion (big-endian magic 0x803 images / 0x801 labels). Pixels load
/// as Categorical(256) variables in row-major order; `limit` truncates.
Dataset load_idx(const std::string& images_path, const std::string& labels_path = "",
                 int limit = 0, std::vector<int>* labels_out = nullptr);
void write_idx(const Dataset& data, int height, int width, const std::string& path);

/// RFC-4180-subset CSV of reals -> Gaussian dataset. `expected_columns` 0
/// infers the width from the first row; a non-numeric cell reports row/col.
Dataset load_csv(const std::string& path, int expected_columns = 0, bool header = false);
void write_csv(const Dataset& data, const std::string& path);

/// Mixture-of-products generator spec for synthetic categorical images.
struct SynthSpec {
    int height = 4;
    int width = 4;
    int categories = 2;
    int components = 3;
    double concentration = 0.25;  // smaller = peakier per-variable pmfs
};

struct SynthResult {
    Dataset data;
    std::vector<std::vector<double>> component_pmfs;  // [component][var*C + c]
    std::vector<double> mixture_weights;
    double entropy_lower_nats = 0.0;  // H(X|Z): conditional entropy
    double entropy_upper_nats = 0.0;  // H(X|Z) + H(Z)
};

SynthResult synth(const SynthSpec& spec, int n, std::uint64_t seed);

/// Exact joint entropy (nats) of the generator; guarded by total state count.
double synth_exact_entropy_nats(const SynthResult& gen, std::size_t max_states = 1 << 22);

}  // namespace tenscirc
