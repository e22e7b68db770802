#include "anncache/temp_cache.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <variant>

#include "anncache/errors.hpp"

namespace anncache {

namespace {

bool exact_match(std::span<const float> a, std::span<const float> b) {
    for (std::size_t c = 0; c < a.size(); ++c) {
        if (std::abs(static_cast<double>(a[c]) - static_cast<double>(b[c])) > 1e-7) return false;
    }
    return true;
}

std::int64_t micros_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace

TempCache::TempCache(std::size_t dim, std::size_t value_dim, TempCacheParams params)
    : dim_(dim), value_dim_(value_dim), params_(params) {
    if (dim == 0 || value_dim == 0) throw ConfigError("cache: zero-width keys or values");
    if (params.merge_tol < 0.0 || params.merge_tol > 1.0) {
        throw ConfigError("cache: merge_tol must be in [0, 1]");
    }
}

void TempCache::set_representative_policy(RepresentativePolicy policy) {
    if (policy == RepresentativePolicy::Medoid && params_.policy != policy) {
        for (Entry& e : entries_) e.medoid_stale = true;
    }
    params_.policy = policy;
}

std::size_t TempCache::total_multiplicity() const {
    std::size_t total = 0;
    for (const Entry& e : entries_) total += e.multiplicity;
    return total;
}

std::size_t TempCache::entry_multiplicity(std::size_t id) const {
    return entries_.at(id).multiplicity;
}

std::size_t TempCache::entry_last_frame(std::size_t id) const {
    return entries_.at(id).last_frame;
}

std::span<const float> TempCache::entry_key(std::size_t id) const {
    return {entries_.at(id).rep_key.data(), dim_};
}

bool TempCache::key_matches(const Entry& entry, std::span<const float> key,
                            double key_norm) const {
    if (params_.merge_tol == 1.0) {
        return exact_match(key, {entry.rep_key.data(), dim_});
    }
    if (key_norm == 0.0) return false;
    double rep_norm = norm_f64({entry.rep_key.data(), dim_});
    if (rep_norm == 0.0) return false;
    return dot_f64(key, {entry.rep_key.data(), dim_}) / (key_norm * rep_norm) >=
           params_.merge_tol;
}

void TempCache::refresh_representative(Entry& entry, std::span<const float> newest_key) {
    switch (params_.policy) {
        case RepresentativePolicy::Last:
            std::copy(newest_key.begin(), newest_key.end(), entry.rep_key.begin());
            return;
        case RepresentativePolicy::Mean: {
            const double m = static_cast<double>(entry.multiplicity);
            for (std::size_t c = 0; c < dim_; ++c) {
                entry.rep_key[c] = static_cast<float>(entry.key_sum[c] / m);
            }
            return;
        }
        case RepresentativePolicy::Medoid: {
            const std::size_t s = entry.sample_count;
            std::size_t best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < s; ++i) {
                std::span<const float> si(entry.member_sample.data() + i * dim_, dim_);
                double score = 0.0;
                for (std::size_t j = 0; j < s; ++j) {
                    if (j == i) continue;
                    std::span<const float> sj(entry.member_sample.data() + j * dim_, dim_);
                    score += cosine_f64(si, sj);
                }
                if (score > best_score) {
                    best_score = score;
                    best = i;
                }
            }
            std::span<const float> rep(entry.member_sample.data() + best * dim_, dim_);
            std::copy(rep.begin(), rep.end(), entry.rep_key.begin());
            return;
        }
    }
}

void TempCache::absorb(Entry& entry, std::span<const float> key,
                       std::span<const float> value) {
    const double m = static_cast<double>(entry.multiplicity);
    for (std::size_t c = 0; c < value_dim_; ++c) {
        entry.value_mean[c] = (m * entry.value_mean[c] + value[c]) / (m + 1.0);
    }
    ++entry.multiplicity;
    entry.last_frame = frames_;
    for (std::size_t c = 0; c < dim_; ++c) entry.key_sum[c] += key[c];
    bool sample_grew = false;
    if (entry.sample_count < kMedoidSampleCap) {
        entry.member_sample.insert(entry.member_sample.end(), key.begin(), key.end());
        ++entry.sample_count;
        sample_grew = true;
    }

    // The medoid only moves while the sample is still growing (or right after
    // a policy switch); the other policies track every merge.
    if (params_.policy != RepresentativePolicy::Medoid || sample_grew ||
        entry.medoid_stale) {
        refresh_representative(entry, key);
        entry.medoid_stale = false;
    }
}

void TempCache::append_entry(std::span<const float> key, std::span<const float> value) {
    Entry e;
    e.rep_key.assign(key.begin(), key.end());
    e.value_mean.assign(value.begin(), value.end());
    e.key_sum.assign(key.begin(), key.end());
    e.member_sample.assign(key.begin(), key.end());
    e.sample_count = 1;
    e.multiplicity = 1;
    e.last_frame = frames_;
    entries_.push_back(std::move(e));
}

IngestStats TempCache::ingest_frame(const Matrix& keys, const Matrix& values) {
    if (keys.cols() != dim_) throw ShapeError("cache: key width mismatch");
    if (values.cols() != value_dim_) throw ShapeError("cache: value width mismatch");
    if (keys.rows() != values.rows()) throw ShapeError("cache: key/value count mismatch");
    keys.require_finite("frame keys");
    values.require_finite("frame values");

    IngestStats stats;
    const bool exact_mode = (params_.merge_tol == 1.0);
    const std::size_t frozen = entries_.size();  // entries visible to this frame's index

    // One index rebuild per frame over the entries that already exist. Exact
    // mode matches by coordinates, not similarity, so it scans directly.
    std::variant<std::monostate, LshIndex, QuantIndex> index;
    if (!exact_mode && frozen > 0) {
        const auto t0 = std::chrono::steady_clock::now();
        Matrix reps(frozen, dim_);
        for (std::size_t i = 0; i < frozen; ++i) {
            std::span<const float> k = entry_key(i);
            std::copy(k.begin(), k.end(), reps.row(i).begin());
        }
        if (params_.ann.backend == AnnBackend::Lsh) {
            index.emplace<LshIndex>(std::move(reps), params_.ann.tables,
                                    params_.ann.bits_per_table, params_.ann.seed);
        } else {
            index.emplace<QuantIndex>(std::move(reps), params_.ann.quant_bits);
        }
        stats.index_micros = micros_since(t0);
    }

    std::vector<std::uint32_t> pending;  // entries appended during this frame
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        const auto key = keys.row(i);
        const auto value = values.row(i);
        const double key_norm = norm_f64(key);

        std::size_t match = entries_.size();
        if (exact_mode) {
            for (std::size_t t = 0; t < entries_.size(); ++t) {
                if (exact_match(key, entry_key(t))) {
                    match = t;
                    break;
                }
            }
        } else if (key_norm == 0.0) {
            ++stats.zero_norm_appends;
        } else {
            // Best of the index's nearest frozen entry and this frame's new
            // entries, accepted only if the exact cosine clears the barrier.
            std::size_t best = entries_.size();
            double best_cos = -2.0;
            if (auto* lsh = std::get_if<LshIndex>(&index)) {
                if (auto top = lsh->top1(key)) {
                    best = *top;
                    best_cos = cosine_f64(key, entry_key(best));
                }
            } else if (auto* quant = std::get_if<QuantIndex>(&index)) {
                if (auto top = quant->top1(key)) {
                    best = *top;
                    best_cos = cosine_f64(key, entry_key(best));
                }
            }
            for (std::uint32_t id : pending) {
                double c = cosine_f64(key, entry_key(id));
                if (c > best_cos) {
                    best_cos = c;
                    best = id;
                }
            }
            if (best_cos < params_.merge_tol && frozen > 0) {
                // Widen to one exact scan over the indexed entries before
                // admitting a new entry; an index near-miss must not grow the
                // cache. Pending entries were already scanned exactly.
                ++stats.widen_scans;
                for (std::size_t t = 0; t < frozen; ++t) {
                    double c = cosine_f64(key, entry_key(t));
                    if (c > best_cos) {
                        best_cos = c;
                        best = t;
                    }
                }
            }
            if (best < entries_.size() && best_cos >= params_.merge_tol) match = best;
        }

        if (match < entries_.size()) {
            absorb(entries_[match], key, value);
            ++stats.merged;
            token_entry_.push_back(static_cast<std::uint32_t>(match));
        } else {
            append_entry(key, value);
            ++stats.appended;
            const auto id = static_cast<std::uint32_t>(entries_.size() - 1);
            pending.push_back(id);
            token_entry_.push_back(id);
        }
    }

    ++frames_;
    stats.entries_after = entries_.size();
    return stats;
}

GroupedKV TempCache::grouped_view() const {
    const std::size_t n = entries_.size();
    Matrix reps(n, dim_);
    Matrix means(n, value_dim_);
    std::vector<std::size_t> mult(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Entry& e = entries_[i];
        std::copy(e.rep_key.begin(), e.rep_key.end(), reps.row(i).begin());
        for (std::size_t c = 0; c < value_dim_; ++c) {
            means.at(i, c) = static_cast<float>(e.value_mean[c]);
        }
        mult[i] = e.multiplicity;
    }
    return GroupedKV{std::move(reps), std::move(means), std::move(mult)};
}

AttentionOutput TempCache::attend(const Matrix& queries, bool want_weights) const {
    return grouped_attention(queries, grouped_view(), want_weights);
}

void TempCache::dump_csv(std::ostream& os) const {
    os << "entry_id,multiplicity,last_frame,key_norm,value_mean_norm\n";
    char buf[160];
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const Entry& e = entries_[i];
        double kn = norm_f64({e.rep_key.data(), dim_});
        double vn = 0.0;
        for (double x : e.value_mean) vn += x * x;
        vn = std::sqrt(vn);
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.9g,%.9g\n", i, e.multiplicity,
                      e.last_frame, kn, vn);
        os << buf;
    }
}

}  // namespace anncache
