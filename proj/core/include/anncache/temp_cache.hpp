#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "anncache/ann.hpp"
#include "anncache/attention.hpp"
#include "anncache/matrix.hpp"

namespace anncache {

/// How a cache entry summarizes its member keys.
///   Last:   the most recently merged key.
///   Mean:   the running arithmetic mean of all member keys.
///   Medoid: the sampled member with the highest average cosine similarity
///           to the other sampled members; the sample holds the entry's
///           first kMedoidSampleCap members so merges stay O(1) amortized.
enum class RepresentativePolicy { Last, Mean, Medoid };

inline constexpr std::size_t kMedoidSampleCap = 32;

struct TempCacheParams {
    double merge_tol = 0.9;
    RepresentativePolicy policy = RepresentativePolicy::Last;
    AnnParams ann;
};

struct IngestStats {
    std::size_t merged = 0;
    std::size_t appended = 0;
    std::size_t entries_after = 0;
    std::size_t widen_scans = 0;        // exact scans after the index found no match
    std::size_t zero_norm_appends = 0;  // keys that cannot pass a cosine check
    std::int64_t index_micros = 0;      // time spent rebuilding the entry index
};

/// Streaming key/value compressor. Each ingested token either merges into
/// the entry its nearest representative points at (when the exact cosine
/// clears merge_tol) or opens a new entry. Entries carry the mean of their
/// member values and a multiplicity, so attention over the cache is grouped
/// attention with a +ln(multiplicity) logit bias.
///
/// The correspondence index is rebuilt once per frame over the entries that
/// existed at frame start; tokens appended mid-frame are matched by a linear
/// scan over that frame's new entries. Whenever the index yields no match at
/// or above merge_tol, one exact scan over all entries runs before a new
/// entry is admitted: admission is the expensive path (the cache grows for
/// good), so it is never taken on index misses alone. merge_tol == 1.0
/// merges only exact duplicates (per-coordinate difference <= 1e-7), so
/// distinct keys are never combined.
class TempCache {
public:
    TempCache(std::size_t dim, std::size_t value_dim, TempCacheParams params);

    IngestStats ingest_frame(const Matrix& keys, const Matrix& values);

    /// Changes how future merges refresh representatives; existing
    /// representatives stay until their entry next absorbs a token.
    void set_representative_policy(RepresentativePolicy policy);
    RepresentativePolicy representative_policy() const { return params_.policy; }

    std::size_t dim() const { return dim_; }
    std::size_t value_dim() const { return value_dim_; }
    std::size_t entries() const { return entries_.size(); }
    std::size_t frames_ingested() const { return frames_; }
    std::size_t raw_tokens_seen() const { return token_entry_.size(); }
    /// Sum of entry multiplicities; always equals the number of tokens ever
    /// ingested.
    std::size_t total_multiplicity() const;

    std::size_t entry_multiplicity(std::size_t id) const;
    std::size_t entry_last_frame(std::size_t id) const;
    std::span<const float> entry_key(std::size_t id) const;

    /// Raw-token index (ingestion order) -> entry id.
    const std::vector<std::uint32_t>& token_entry() const { return token_entry_; }

    /// Materialized representative keys, mean values, and multiplicities.
    GroupedKV grouped_view() const;

    AttentionOutput attend(const Matrix& queries, bool want_weights = false) const;

    /// One line per entry: entry_id,multiplicity,last_frame,key_norm,value_mean_norm
    void dump_csv(std::ostream& os) const;

private:
    // key_sum and member_sample are maintained for every entry regardless of
    // the active policy, so the policy can change mid-stream.
    struct Entry {
        std::vector<float> rep_key;
        std::vector<double> value_mean;
        std::vector<double> key_sum;
        std::vector<float> member_sample;  // first kMedoidSampleCap members, row-major
        std::size_t sample_count = 0;
        std::size_t multiplicity = 0;
        std::size_t last_frame = 0;
        bool medoid_stale = false;  // set when the policy switched to Medoid
    };

    void absorb(Entry& entry, std::span<const float> key, std::span<const float> value);
    void append_entry(std::span<const float> key, std::span<const float> value);
    void refresh_representative(Entry& entry, std::span<const float> newest_key);
    bool key_matches(const Entry& entry, std::span<const float> key, double key_norm) const;

    std::size_t dim_;
    std::size_t value_dim_;
    TempCacheParams params_;
    std::vector<Entry> entries_;
    std::vector<std::uint32_t> token_entry_;
    std::size_t frames_ = 0;
};

}  // namespace anncache
