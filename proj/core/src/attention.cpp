#include "anncache/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anncache/errors.hpp"

namespace anncache {

std::size_t GroupedKV::total_members() const {
    return std::accumulate(multiplicities.begin(), multiplicities.end(), std::size_t{0});
}

void GroupedKV::validate() const {
    if (rep_keys.rows() != multiplicities.size() || mean_values.rows() != multiplicities.size()) {
        throw InvariantError("grouped view: row counts disagree with multiplicity count");
    }
    for (std::size_t m : multiplicities) {
        if (m == 0) throw InvariantError("grouped view: zero multiplicity");
    }
}

namespace {

// Shared core: logits = q k^T * scale (+ optional per-key bias), stable
// softmax per row in f64, then the weighted value sum in f64.
AttentionOutput attend(const Matrix& q, const Matrix& k, const Matrix& v,
                       const double* key_bias, bool want_weights) {
    if (q.cols() != k.cols()) throw ShapeError("attention: query/key width mismatch");
    if (k.rows() != v.rows()) throw ShapeError("attention: key/value count mismatch");
    if (k.rows() == 0) throw ShapeError("attention: empty context");
    q.require_finite("queries");
    k.require_finite("keys");
    v.require_finite("values");

    const std::size_t nq = q.rows();
    const std::size_t nk = k.rows();
    const std::size_t d = q.cols();
    const std::size_t dv = v.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    AttentionOutput out{Matrix(nq, dv), std::nullopt};
    if (want_weights) out.weights.emplace(nq, nk);

    std::vector<double> logits(nk);
    std::vector<double> probs(nk);
    for (std::size_t i = 0; i < nq; ++i) {
        const auto qi = q.row(i);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
            double s = dot_f64(qi, k.row(j)) * scale;
            if (key_bias != nullptr) s += key_bias[j];
            if (!std::isfinite(s)) throw NumericError("attention: non-finite logit");
            logits[j] = s;
            if (s > max_logit) max_logit = s;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
            probs[j] = std::exp(logits[j] - max_logit);
            denom += probs[j];
        }
        if (!(denom > 0.0) || !std::isfinite(denom)) {
            throw NumericError("attention: degenerate softmax denominator");
        }
        for (std::size_t c = 0; c < dv; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < nk; ++j) acc += probs[j] * v.at(j, c);
            out.output.at(i, c) = static_cast<float>(acc / denom);
        }
        if (want_weights) {
            for (std::size_t j = 0; j < nk; ++j) {
                out.weights->at(i, j) = static_cast<float>(probs[j] / denom);
            }
        }
    }
    return out;
}

}  // namespace

AttentionOutput dense_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                bool want_weights) {
    return attend(q, k, v, nullptr, want_weights);
}

AttentionOutput grouped_attention(const Matrix& q, const GroupedKV& g,
                                  bool want_weights, bool multiplicity_bias) {
    g.validate();
    if (multiplicity_bias) {
        std::vector<double> bias(g.groups());
        for (std::size_t t = 0; t < bias.size(); ++t) {
            bias[t] = std::log(static_cast<double>(g.multiplicities[t]));
        }
        return attend(q, g.rep_keys, g.mean_values, bias.data(), want_weights);
    }
    return attend(q, g.rep_keys, g.mean_values, nullptr, want_weights);
}

namespace {

bool exact_match(std::span<const float> a, std::span<const float> b) {
    for (std::size_t c = 0; c < a.size(); ++c) {
        if (std::abs(static_cast<double>(a[c]) - static_cast<double>(b[c])) > 1e-7) return false;
    }
    return true;
}

}  // namespace

GroupedKV group_duplicates(const Matrix& k, const Matrix& v, double tol,
                           GroupingStats* stats) {
    if (k.rows() != v.rows()) throw ShapeError("group: key/value count mismatch");
    if (tol < 0.0 || tol > 1.0) throw ConfigError("group: tol must be in [0, 1]");
    k.require_finite("keys");
    v.require_finite("values");

    const std::size_t d = k.cols();
    const std::size_t dv = v.cols();
    const bool exact = (tol == 1.0);

    std::vector<float> rep_data;
    std::vector<double> mean_data;  // running means in f64 until the end
    std::vector<double> rep_norms;
    std::vector<std::size_t> mult;

    for (std::size_t i = 0; i < k.rows(); ++i) {
        const auto ki = k.row(i);
        const double ki_norm = norm_f64(ki);
        std::size_t match = mult.size();

        if (exact) {
            for (std::size_t t = 0; t < mult.size(); ++t) {
                std::span<const float> rep(rep_data.data() + t * d, d);
                if (exact_match(ki, rep)) { match = t; break; }
            }
        } else if (ki_norm > 0.0) {
            for (std::size_t t = 0; t < mult.size(); ++t) {
                if (rep_norms[t] == 0.0) continue;
                std::span<const float> rep(rep_data.data() + t * d, d);
                if (dot_f64(ki, rep) / (ki_norm * rep_norms[t]) >= tol) { match = t; break; }
            }
        } else if (stats != nullptr) {
            ++stats->zero_norm_singletons;
        }

        if (stats != nullptr) stats->token_group.push_back(static_cast<std::uint32_t>(match));
        if (match == mult.size()) {
            rep_data.insert(rep_data.end(), ki.begin(), ki.end());
            rep_norms.push_back(ki_norm);
            const auto vi = v.row(i);
            for (std::size_t c = 0; c < dv; ++c) mean_data.push_back(vi[c]);
            mult.push_back(1);
        } else {
            // Last member becomes the representative; the mean folds in the
            // new value as (m * mean + v) / (m + 1).
            std::copy(ki.begin(), ki.end(), rep_data.begin() + static_cast<std::ptrdiff_t>(match * d));
            rep_norms[match] = ki_norm;
            const auto vi = v.row(i);
            const double m = static_cast<double>(mult[match]);
            for (std::size_t c = 0; c < dv; ++c) {
                double& mean = mean_data[match * dv + c];
                mean = (m * mean + vi[c]) / (m + 1.0);
            }
            ++mult[match];
        }
    }

    const std::size_t g = mult.size();
    Matrix rep_keys(g, d);
    Matrix mean_values(g, dv);
    std::copy(rep_data.begin(), rep_data.end(), rep_keys.data());
    for (std::size_t t = 0; t < g; ++t) {
        for (std::size_t c = 0; c < dv; ++c) {
            mean_values.at(t, c) = static_cast<float>(mean_data[t * dv + c]);
        }
    }
    return GroupedKV{std::move(rep_keys), std::move(mean_values), std::move(mult)};
}

}  // namespace anncache
