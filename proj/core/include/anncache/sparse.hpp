#pragma once

#include <cstdint>
#include <vector>

#include "anncache/ann.hpp"
#include "anncache/attention.hpp"
#include "anncache/matrix.hpp"

namespace anncache {

/// Per-query key subsets chosen by an approximate index. `density` is the
/// executed fraction of the full query-key interaction grid.
struct SparsePlan {
    std::vector<CandidateSet> candidates;  // one sorted set per query
    std::size_t fallback_count = 0;        // queries widened to the full key set
    double density = 0.0;
};

/// Chooses which keys each query inspects. The LSH backend takes the union
/// of the query's buckets and widens to every key when that union is empty;
/// the quantization backend takes the top ceil(target_density * n_keys)
/// keys by reconstructed dot product.
SparsePlan plan_self_attention(const Matrix& queries, const Matrix& keys,
                               const AnnParams& params, double target_density);

/// Runs attention restricted to each query's candidate set: softmax over the
/// candidates only, optional +ln(multiplicity) bias when the keys are group
/// representatives. Requested weights come back at full key width with zeros
/// at skipped keys.
AttentionOutput execute_sparse(const Matrix& queries, const Matrix& keys,
                               const Matrix& values, const SparsePlan& plan,
                               bool want_weights = false,
                               const std::vector<std::size_t>* multiplicities = nullptr);

/// Which prompt tokens survive pruning for a frame's queries.
struct PromptMask {
    std::vector<std::uint8_t> kept;  // 1 = kept, indexed by prompt row
    std::size_t kept_count = 0;

    std::vector<std::uint32_t> kept_indices() const;
};

/// Keeps a prompt token when any query vouches for it: under LSH, sharing at
/// least one bucket with at least one query in any table; under
/// quantization, membership in the union of per-query top-k sets with
/// k = ceil(target_density * prompt_rows). If fewer than min_keep survive,
/// the highest-dot pruned tokens (max over queries, ties to the lower index)
/// are added back up to min_keep.
PromptMask prune_prompt(const Matrix& queries, const Matrix& prompt_keys,
                        const AnnParams& params, double target_density,
                        std::size_t min_keep = 4);

/// Cross attention over the surviving prompt tokens only. Weights, when
/// requested, are expanded to full prompt width with zeros at pruned rows.
AttentionOutput cross_attention_pruned(const Matrix& queries, const Matrix& prompt_keys,
                                       const Matrix& prompt_values,
                                       const PromptMask& mask,
                                       bool want_weights = false);

}  // namespace anncache
