#pragma once

#include "treedec/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace treedec {

// q: [b, n_h, N_q, d_h]; k, v: [b, n_h, N, d_h]. All three share batch,
// heads, head_dim and dtype. `scale` multiplies every q.k score (default 1,
// callers wanting 1/sqrt(d_h) set it explicitly). Causal masking aligns the
// query block to the end of the key axis: query row j attends keys
// i <= j + (N - N_q).
struct AttentionInput {
    Tensor q, k, v;
    bool causal = false;
    double scale = 1.0;
};

// Associative softmax state over one contiguous chunk of the key axis.
//   row_max [b, n_h, N_q]       max of scaled scores in the chunk
//   lse     [b, n_h, N_q]       logsumexp of scaled scores in the chunk
//   out     [b, n_h, N_q, d_h]  value average, normalized by the local denominator
// An empty chunk is the identity: row_max = lse = -inf, out = 0.
// Invariant: 0 <= lse - row_max <= log(chunk length).
struct SoftmaxPartial {
    Tensor row_max, lse, out;
};

// (numerator, denominator, shift) wire triple used by the distributed
// decoders: numerator [b, n_h, N_q, d_h]; denominator and shift [b, n_h, N_q].
struct NumeratorState {
    Tensor numerator, denominator, shift;
};

// Reference attention: per query row, softmax (with max subtraction) of the
// scaled scores against all attended keys, then the weighted value average.
Tensor attention_naive(const AttentionInput& in);

// Same contract as attention_naive, computed with the online recurrence:
// one key at a time, carrying a running (max, numerator, denominator)
// that is rescaled whenever the max grows.
Tensor attention_online(const AttentionInput& in);

// Softmax state of `q` against one chunk of keys/values (not masked; the
// chunk may be empty).
SoftmaxPartial attention_chunk_partial(const Tensor& q, const Tensor& k_chunk,
                                       const Tensor& v_chunk, double scale = 1.0);

// Identity element for combining partials.
SoftmaxPartial empty_partial(std::int64_t b, std::int64_t n_h, std::int64_t n_q,
                             std::int64_t d_h, DType dtype);

// Exact combiner for partials over disjoint chunks; associative up to
// rounding, with empty_partial as its (exact) identity. `left` must cover
// lower key indices than `right`.
SoftmaxPartial combine_pair(const SoftmaxPartial& left, const SoftmaxPartial& right);

// Fold partials over disjoint chunks into the full attention output:
// shift = max of the parts' lse values, numerator = sum of out*exp(lse-shift),
// denominator = sum of exp(lse-shift), result = numerator/denominator.
// Fails if every part is empty for some row.
Tensor combine_partials(std::span<const SoftmaxPartial> parts);

// Re-express a partial relative to a common shift (normally the global max
// of the lse values): numerator = out * exp(lse - shift), denominator =
// exp(lse - shift). This is the payload the decoders put on the wire.
NumeratorState partial_to_numerator(const SoftmaxPartial& part, const Tensor& shift);

// Contiguous chunk extents for splitting n items into p chunks:
// ceil(n/p) for the first n % p chunks, floor(n/p) for the rest.
std::vector<std::int64_t> chunk_extents(std::int64_t n, int p);

} // namespace treedec
