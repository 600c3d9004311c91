#pragma once

#include <cstdint>
#include <vector>

#include "tenscirc/circuit.hpp"
#include "tenscirc/dataset.hpp"
#include "tenscirc/fold.hpp"
#include "tenscirc/inference.hpp"

namespace tenscirc {

/// Per-parameter-block gradient accumulator, parallel to Circuit::params().
struct GradStore {
    std::vector<std::vector<double>> grads;

    explicit GradStore(const Circuit& c) {
        grads.resize(c.params().size());
        for (std::size_t i = 0; i < grads.size(); ++i) {
            grads[i].assign(c.params()[i].size(), 0.0);
        }
    }
};

/// Mean negative log-likelihood: -(sum_b log c(x_b) - B log Z)/B.
/// A -inf likelihood reports the offending datum index.
double nll(const Circuit& c, const Batch& batch);

/// Test-set bits per dimension: mean nll / (d ln 2).
double bpd(const Circuit& c, const Dataset& data);

/// Exact reverse-mode d nll / d theta (raw parameters), including the log Z
/// term for non-softmax reparameterizations.
GradStore backward(const Circuit& c, const Batch& batch);
GradStore backward(const FoldedCircuit& fc, const Batch& batch);

struct TrainConfig {
    double learning_rate = 1e-2;
    int batch_size = 256;
    int max_epochs = 200;
    int patience = 5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    bool use_fold = true;   // run forward/backward through the folded form
    bool verbose = false;
};

struct EpochStats {
    int epoch = 0;
    double train_nll = 0.0;
    double valid_nll = 0.0;
    double valid_bpd = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_valid_nll = 0.0;
    int best_epoch = -1;
    bool aborted_non_finite = false;
};

/// Adam on the raw parameters with clamp projection after each step and
/// early stopping on validation log-likelihood; the best snapshot is
/// restored. Deterministic given the seed and data order.
TrainResult train(Circuit& c, const Dataset& train_data, const Dataset& valid_data,
                  const TrainConfig& config);

/// Adam state exposed for reuse (fine-tuning, tests).
class AdamOptimizer {
public:
    AdamOptimizer(const Circuit& c, double lr, double beta1, double beta2, double eps);
    void step(Circuit& c, const GradStore& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Rescales sum weights bottom-up so every row sums to 1 while the encoded
/// distribution c(x)/Z stays fixed; afterwards log Z = 0 and sampling is
/// admissible.
Circuit normalize(const Circuit& c);

}  // namespace tenscirc
