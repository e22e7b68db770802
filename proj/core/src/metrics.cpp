#include "anncache/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "anncache/errors.hpp"

namespace anncache {

std::size_t cache_footprint_bytes(std::size_t entries, std::size_t dim,
                                  std::size_t value_dim) {
    return entries * ((dim + value_dim) * sizeof(float) + kEntryOverheadBytes);
}

double attention_recall_row(std::span<const float> dense_weights,
                            const CandidateSet& executed) {
    double mass = 0.0;
    for (float w : dense_weights) mass += w;
    if (!(mass > 0.0)) throw NumericError("recall: dense row has no mass");
    double kept = 0.0;
    for (std::uint32_t j : executed) {
        if (j >= dense_weights.size()) throw ShapeError("recall: candidate out of range");
        kept += dense_weights[j];
    }
    return kept / mass;
}

double attention_recall(const Matrix& dense_weights,
                        const std::vector<CandidateSet>& plans) {
    if (plans.size() != dense_weights.rows()) {
        throw ShapeError("recall: plan count does not match query count");
    }
    if (dense_weights.rows() == 0) throw ShapeError("recall: no queries");
    double total = 0.0;
    for (std::size_t i = 0; i < dense_weights.rows(); ++i) {
        total += attention_recall_row(dense_weights.row(i), plans[i]);
    }
    return total / static_cast<double>(dense_weights.rows());
}

double grouped_mass_recall(const Matrix& dense_weights, const Matrix& grouped_weights,
                           const std::vector<std::uint32_t>& token_entry) {
    if (dense_weights.rows() != grouped_weights.rows()) {
        throw ShapeError("recall: query count mismatch");
    }
    if (token_entry.size() != dense_weights.cols()) {
        throw ShapeError("recall: token map does not cover the dense columns");
    }
    if (dense_weights.rows() == 0) throw ShapeError("recall: no queries");
    const std::size_t entries = grouped_weights.cols();
    for (std::uint32_t t : token_entry) {
        if (t >= entries) throw ShapeError("recall: token maps past the entry count");
    }

    std::vector<double> entry_mass(entries);
    double total = 0.0;
    for (std::size_t i = 0; i < dense_weights.rows(); ++i) {
        std::fill(entry_mass.begin(), entry_mass.end(), 0.0);
        double row_mass = 0.0;
        const auto dw = dense_weights.row(i);
        for (std::size_t j = 0; j < dw.size(); ++j) {
            entry_mass[token_entry[j]] += dw[j];
            row_mass += dw[j];
        }
        if (!(row_mass > 0.0)) throw NumericError("recall: dense row has no mass");
        double overlap = 0.0;
        for (std::size_t t = 0; t < entries; ++t) {
            overlap += std::min(static_cast<double>(grouped_weights.at(i, t)),
                                entry_mass[t]);
        }
        total += overlap / row_mass;
    }
    return total / static_cast<double>(dense_weights.rows());
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("diff: shape mismatch");
    }
    double worst = 0.0;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        worst = std::max(worst,
                         std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i])));
    }
    return worst;
}

std::vector<CurvePoint> recall_density_curve(const Matrix& dense_weights,
                                             std::span<const double> fractions) {
    if (dense_weights.rows() == 0 || dense_weights.cols() == 0) {
        throw ShapeError("curve: empty weight matrix");
    }
    for (double f : fractions) {
        if (!(f > 0.0) || f > 1.0) throw ConfigError("curve: fractions must be in (0, 1]");
    }
    const std::size_t nk = dense_weights.cols();

    // Per query, rank keys once by weight (ties to the lower index); each
    // fraction then reads a prefix of that ranking.
    std::vector<CurvePoint> curve;
    curve.reserve(fractions.size());
    std::vector<std::size_t> order(nk);
    std::vector<double> kept_at(fractions.size(), 0.0);
    for (std::size_t i = 0; i < dense_weights.rows(); ++i) {
        const auto dw = dense_weights.row(i);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dw[a] != dw[b]) return dw[a] > dw[b];
            return a < b;
        });
        double row_mass = 0.0;
        for (float w : dw) row_mass += w;
        if (!(row_mass > 0.0)) throw NumericError("curve: dense row has no mass");

        std::vector<double> prefix(nk + 1, 0.0);
        for (std::size_t j = 0; j < nk; ++j) {
            prefix[j + 1] = prefix[j] + dw[order[j]];
        }
        for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
            const auto keep = static_cast<std::size_t>(
                std::ceil(fractions[fi] * static_cast<double>(nk)));
            // full retention is recall 1 by definition; dividing two
            // differently-ordered sums would land an ulp off
            kept_at[fi] += keep >= nk ? 1.0 : prefix[keep] / row_mass;
        }
    }
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
        curve.push_back(
            {fractions[fi], kept_at[fi] / static_cast<double>(dense_weights.rows())});
    }
    return curve;
}

void write_metrics_header(std::ostream& os) { os << kMetricsHeader << "\n"; }

void write_metrics_row(std::ostream& os, const MetricsRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g,%zu,%zu,%lld,%lld\n", row.density,
                  row.recall, row.max_abs_err, row.cache_entries, row.cache_bytes,
                  static_cast<long long>(row.attn_micros),
                  static_cast<long long>(row.index_micros));
    os << row.frame << ',' << row.method << buf;
}

}  // namespace anncache
