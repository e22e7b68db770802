#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "anncache/ann.hpp"
#include "anncache/matrix.hpp"

namespace anncache {

/// Fixed per-entry bookkeeping charge in the footprint model: multiplicity,
/// last-seen frame, and an id, 8 bytes each.
inline constexpr std::size_t kEntryOverheadBytes = 24;

/// Modeled resident size of a key/value store: one f32 key and one f32 value
/// row per entry plus the per-entry overhead.
std::size_t cache_footprint_bytes(std::size_t entries, std::size_t dim,
                                  std::size_t value_dim);

/// Fraction of dense attention weight a query would still see through the
/// executed key subset: sum of its dense weights over the candidates divided
/// by its full dense row mass.
double attention_recall_row(std::span<const float> dense_weights,
                            const CandidateSet& executed);

/// Mean of attention_recall_row over all queries. `plans` holds one
/// candidate set per dense weight row.
double attention_recall(const Matrix& dense_weights,
                        const std::vector<CandidateSet>& plans);

/// Recall of a grouped approximation against dense attention over the raw
/// tokens. For each query, every entry's grouped weight is compared with the
/// dense mass of the raw tokens mapped to that entry; the overlap
/// sum_t min(grouped_t, dense_mass_t) over the dense row mass is the recall.
/// Exact grouping (identical keys, +ln multiplicity bias) scores 1.
///
/// `token_entry` maps each raw token (dense weight column) to its entry
/// (grouped weight column).
double grouped_mass_recall(const Matrix& dense_weights, const Matrix& grouped_weights,
                           const std::vector<std::uint32_t>& token_entry);

/// Largest absolute elementwise difference. Shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

struct CurvePoint {
    double fraction;  // of keys retained per query
    double recall;    // mean retained dense mass at that fraction
};

/// Recall as a function of retention: for each fraction f, every query keeps
/// its ceil(f * n_keys) heaviest dense weights (ties to the lower index) and
/// the kept mass over the row mass is averaged across queries. fractions
/// must be in (0, 1].
std::vector<CurvePoint> recall_density_curve(const Matrix& dense_weights,
                                             std::span<const double> fractions);

/// One metrics CSV record. The column set and order are part of the output
/// contract; timing columns sit last so consumers can strip them when
/// comparing runs.
struct MetricsRow {
    std::size_t frame = 0;
    std::string method;
    double density = 0.0;
    double recall = 0.0;
    double max_abs_err = 0.0;
    std::size_t cache_entries = 0;
    std::size_t cache_bytes = 0;
    std::int64_t attn_micros = 0;
    std::int64_t index_micros = 0;
};

inline constexpr const char* kMetricsHeader =
    "frame,method,density,recall,max_abs_err,cache_entries,cache_bytes,"
    "attn_micros,index_micros";

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

}  // namespace anncache
