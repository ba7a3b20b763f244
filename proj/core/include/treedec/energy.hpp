#pragma once

#include "treedec/tensor.hpp"

#include <cstdint>

namespace treedec {

// Scalar attention energy per query row, with the pieces of its stable
// evaluation kept for the gradient pass:
//   value       [b, n_h, N_q]  logsumexp_a(q.k_a + source.v_a)
//   row_max     [b, n_h, N_q]  max_a of the scores
//   shifted_lse [b, n_h, N_q]  log sum_a exp(score_a - row_max)
// Recombination identity: value = shifted_lse + row_max.
struct EnergyEval {
    Tensor value, row_max, shifted_lse;
};

// The source couples to the values inside the partition function. An empty
// tensor means a zero source throughout this module; otherwise it must have
// the query shape [b, n_h, N_q, d_h].

// Z(source) = sum_a exp(q.k_a + source.v_a) per query row, evaluated as
// exp(logsumexp(...)). Throws std::overflow_error when the final exp leaves
// double range (use energy() for the log form instead).
Tensor partition_with_source(const Tensor& q, const Tensor& k, const Tensor& v,
                             const Tensor& source);

// log Z(source) per query row; stable for scores up to +-1e4.
EnergyEval energy(const Tensor& q, const Tensor& k, const Tensor& v,
                  const Tensor& source);

// Causally masked total energy: sum over batch, heads and positions i of
// logsumexp_{a<=i}(q_i.k_a + source_i.v_a). Requires one query (and one
// source row) per position: N_q == N.
double energy_total_causal(const Tensor& q, const Tensor& k, const Tensor& v,
                           const Tensor& source);

// Analytic gradient of the energy w.r.t. the source:
//   sum_a exp(q.k_a + source.v_a - F) * v_a   per query row,
// with causal truncation when `causal`. At source = 0 this is exactly the
// attention output.
Tensor grad_energy_wrt_source(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& source, bool causal = false);

// Chunked energy forward: split the key axis into `chunks` pieces, compute
// local scores, tree-reduce the max, shift, then tree-reduce the local
// logsumexps. Equal to energy() for every chunk count. Requires
// 1 <= chunks <= N.
EnergyEval energy_forward_parallel(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor& source, int chunks);

// Source-free gradient pass replaying `saved` from a zero-source forward:
// per chunk, sum_a exp((q.k_a - row_max) - shifted_lse) * v_a, then a tree
// sum-reduction across chunks. Equals the attention output.
Tensor energy_grad_parallel(const Tensor& q, const Tensor& k, const Tensor& v,
                            const EnergyEval& saved, int chunks);

// Log-likelihood whose stationary point is the attention forward pass:
//   Gamma = sum_{b,h,i,A} activation * source  -  sum_{b,h,i} F_i(source)
// with causal per-position energies (F counted once per position, not once
// per coordinate). Stationarity: dGamma/dsource = 0 at activation =
// attention output, dGamma/dactivation = source = 0.
double gamma_log_likelihood(const Tensor& source, const Tensor& activation,
                            const Tensor& q, const Tensor& k, const Tensor& v);

// Moments of the attention-score distribution, extracted at source = 0.
// order 1: sum_a P_a v[a][coord_a]; order 2: sum_a P_a v[a][coord_a] v[a][coord_b]
// where P_a = softmax_a(q.k). Returns a scalar, so inputs must be a single
// attention row: b = n_h = N_q = 1.
double moment_via_source(const Tensor& q, const Tensor& k, const Tensor& v,
                         int order, std::int64_t coord_a, std::int64_t coord_b = 0);

} // namespace treedec
