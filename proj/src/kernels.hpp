#pragma once

// Per-layer evaluation and reverse-mode primitives shared by the unfolded,
// folded, and learning code paths. Buffers are batch-major (B x width).

#include <limits>
#include <vector>

#include "tenscirc/circuit.hpp"
#include "tenscirc/inference.hpp"

namespace tenscirc::kernels {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void eval_input_log(const Circuit& c, const Layer& l, const Batch& batch, double* out);
void eval_input_linear(const Circuit& c, const Layer& l, const Batch& batch, double* out);

void eval_hadamard_log(const Layer& l, int batch_size,
                       const std::vector<const double*>& in, double* out);
void eval_kronecker_log(const Circuit& c, const Layer& l, int batch_size,
                        const std::vector<const double*>& in, double* out);
void eval_sum_log(const Circuit& c, const Layer& l, int batch_size,
                  const std::vector<const double*>& in, const std::vector<double>& weights,
                  double* out);

void eval_hadamard_linear(const Layer& l, int batch_size,
                          const std::vector<const double*>& in, double* out);
void eval_kronecker_linear(const Circuit& c, const Layer& l, int batch_size,
                           const std::vector<const double*>& in, double* out);
void eval_sum_linear(const Circuit& c, const Layer& l, int batch_size,
                     const std::vector<const double*>& in, const std::vector<double>& weights,
                     double* out);

/// Adds the adjoints of a layer's inputs and of its raw parameters given the
/// adjoint of its log-output. `weights` must match the forward evaluation.
void backward_input_log(const Circuit& c, const Layer& l, const Batch& batch,
                        const double* out_adj, std::vector<double>& param_grad);
void backward_hadamard_log(const Layer& l, int batch_size, const double* out_adj,
                           std::vector<double*>& in_adj);
void backward_kronecker_log(const Circuit& c, const Layer& l, int batch_size,
                            const double* out_adj, std::vector<double*>& in_adj);
void backward_sum_log(const Circuit& c, const Layer& l, int batch_size,
                      const std::vector<const double*>& in, const double* out_log,
                      const double* out_adj, const std::vector<double>& weights,
                      std::vector<double*>& in_adj, std::vector<double>& weight_adj);

/// Chains d(loss)/d(weights) through the reparameterization onto raw theta.
void apply_reparam_jacobian(const Circuit& c, const Layer& l,
                            const std::vector<double>& weights,
                            const std::vector<double>& weight_adj,
                            std::vector<double>& param_grad);

}  // namespace tenscirc::kernels
