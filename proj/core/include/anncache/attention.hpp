#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "anncache/matrix.hpp"

namespace anncache {

/// Result of an attention call. `weights` is materialized only when the
/// caller asked for it (metrics paths); each weights row sums to 1 and is
/// entrywise >= 0.
struct AttentionOutput {
    Matrix output;                   // N_q x d_v
    std::optional<Matrix> weights;   // N_q x N_k when requested
};

/// A compressed view of a key/value set: one representative key per group,
/// the arithmetic mean of the group's values, and the group size.
///
/// Attention over this view with a +ln(multiplicity) logit bias reproduces
/// attention over the expanded set exactly when every group's members share
/// one key, and approximately when members were merged by similarity.
struct GroupedKV {
    Matrix rep_keys;                        // g x d
    Matrix mean_values;                     // g x d_v
    std::vector<std::size_t> multiplicities;  // length g, all >= 1

    std::size_t groups() const { return multiplicities.size(); }
    std::size_t total_members() const;
    void validate() const;  // throws InvariantError on malformed state
};

struct GroupingStats {
    std::size_t zero_norm_singletons = 0;  // keys that could not be compared by cosine
    std::vector<std::uint32_t> token_group;  // input row -> group id
};

/// Exact scaled dot-product attention: softmax(q K^T / sqrt(d)) V, one
/// stable softmax per query row, f64 accumulation throughout.
///
/// Throws ShapeError on dimension mismatch or an empty context (k.rows == 0).
AttentionOutput dense_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                bool want_weights = false);

/// Attention over a grouped view: logits q·k'_t / sqrt(d) + ln(m_t), softmax
/// over groups, output weighted over mean values.
///
/// `multiplicity_bias` exists as a diagnostic switch for the verification
/// suite; leaving it on is what makes merged duplicates exact.
AttentionOutput grouped_attention(const Matrix& q, const GroupedKV& g,
                                  bool want_weights = false,
                                  bool multiplicity_bias = true);

/// Greedy single-pass grouping of (key, value) rows in row order. A key joins
/// the first existing group whose current representative has cosine
/// similarity >= tol, else starts a new group. The representative is always
/// the last member's key; mean values and multiplicities update
/// incrementally.
///
/// tol == 1.0 switches to exact-duplicate matching (per-coordinate difference
/// <= 1e-7 against the representative); a cosine test at 1.0 would reject
/// bitwise-equal rows on rounding noise. Zero-norm keys with tol < 1 form
/// their own group and are counted in `stats`.
GroupedKV group_duplicates(const Matrix& k, const Matrix& v, double tol,
                           GroupingStats* stats = nullptr);

}  // namespace anncache
