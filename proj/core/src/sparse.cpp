#include "anncache/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "anncache/errors.hpp"

namespace anncache {

namespace {

std::size_t topk_count(double target_density, std::size_t n) {
    if (!(target_density > 0.0) || target_density > 1.0) {
        throw ConfigError("sparse: target_density must be in (0, 1]");
    }
    auto k = static_cast<std::size_t>(
        std::ceil(target_density * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, n > 0 ? 1 : 0, n);
}

CandidateSet full_set(std::size_t n) {
    CandidateSet all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<std::uint32_t>(i);
    return all;
}

}  // namespace

SparsePlan plan_self_attention(const Matrix& queries, const Matrix& keys,
                               const AnnParams& params, double target_density) {
    if (queries.cols() != keys.cols()) throw ShapeError("sparse: query/key width mismatch");
    if (keys.rows() == 0) throw ShapeError("sparse: empty key set");

    SparsePlan plan;
    plan.candidates.reserve(queries.rows());
    std::size_t executed = 0;

    if (params.backend == AnnBackend::Lsh) {
        LshIndex index(keys, params.tables, params.bits_per_table, params.seed);
        for (std::size_t i = 0; i < queries.rows(); ++i) {
            CandidateSet cand = index.candidates(queries.row(i));
            if (cand.empty()) {
                cand = full_set(keys.rows());
                ++plan.fallback_count;
            }
            executed += cand.size();
            plan.candidates.push_back(std::move(cand));
        }
    } else {
        QuantIndex index(keys, params.quant_bits);
        const std::size_t k = topk_count(target_density, keys.rows());
        for (std::size_t i = 0; i < queries.rows(); ++i) {
            CandidateSet cand = index.topk(queries.row(i), k);
            std::sort(cand.begin(), cand.end());
            executed += cand.size();
            plan.candidates.push_back(std::move(cand));
        }
    }

    const double total =
        static_cast<double>(queries.rows()) * static_cast<double>(keys.rows());
    plan.density = total > 0.0 ? static_cast<double>(executed) / total : 0.0;
    return plan;
}

AttentionOutput execute_sparse(const Matrix& queries, const Matrix& keys,
                               const Matrix& values, const SparsePlan& plan,
                               bool want_weights,
                               const std::vector<std::size_t>* multiplicities) {
    if (queries.cols() != keys.cols()) throw ShapeError("sparse: query/key width mismatch");
    if (keys.rows() != values.rows()) throw ShapeError("sparse: key/value count mismatch");
    if (plan.candidates.size() != queries.rows()) {
        throw ShapeError("sparse: plan does not cover every query");
    }
    if (multiplicities != nullptr && multiplicities->size() != keys.rows()) {
        throw ShapeError("sparse: multiplicity count mismatch");
    }
    queries.require_finite("queries");
    keys.require_finite("keys");
    values.require_finite("values");

    const std::size_t nq = queries.rows();
    const std::size_t nk = keys.rows();
    const std::size_t dv = values.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));

    AttentionOutput out{Matrix(nq, dv), std::nullopt};
    if (want_weights) out.weights.emplace(nq, nk);

    std::vector<double> logits;
    std::vector<double> probs;
    for (std::size_t i = 0; i < nq; ++i) {
        const CandidateSet& cand = plan.candidates[i];
        if (cand.empty()) throw InvariantError("sparse: empty candidate set");
        logits.resize(cand.size());
        probs.resize(cand.size());

        const auto qi = queries.row(i);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cand.size(); ++j) {
            const std::uint32_t key_id = cand[j];
            if (key_id >= nk) throw InvariantError("sparse: candidate out of range");
            double s = dot_f64(qi, keys.row(key_id)) * scale;
            if (multiplicities != nullptr) {
                s += std::log(static_cast<double>((*multiplicities)[key_id]));
            }
            if (!std::isfinite(s)) throw NumericError("sparse: non-finite logit");
            logits[j] = s;
            if (s > max_logit) max_logit = s;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < cand.size(); ++j) {
            probs[j] = std::exp(logits[j] - max_logit);
            denom += probs[j];
        }
        if (!(denom > 0.0) || !std::isfinite(denom)) {
            throw NumericError("sparse: degenerate softmax denominator");
        }
        for (std::size_t c = 0; c < dv; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cand.size(); ++j) {
                acc += probs[j] * values.at(cand[j], c);
            }
            out.output.at(i, c) = static_cast<float>(acc / denom);
        }
        if (want_weights) {
            for (std::size_t j = 0; j < cand.size(); ++j) {
                out.weights->at(i, cand[j]) = static_cast<float>(probs[j] / denom);
            }
        }
    }
    return out;
}

std::vector<std::uint32_t> PromptMask::kept_indices() const {
    std::vector<std::uint32_t> out;
    out.reserve(kept_count);
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i] != 0) out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
}

PromptMask prune_prompt(const Matrix& queries, const Matrix& prompt_keys,
                        const AnnParams& params, double target_density,
                        std::size_t min_keep) {
    if (queries.cols() != prompt_keys.cols()) {
        throw ShapeError("prune: query/prompt width mismatch");
    }
    const std::size_t np = prompt_keys.rows();
    if (np == 0) throw ShapeError("prune: empty prompt");
    PromptMask mask;
    mask.kept.assign(np, 0);
    queries.require_finite("queries");
    prompt_keys.require_finite("prompt keys");

    if (params.backend == AnnBackend::Lsh) {
        LshProjections proj(prompt_keys.cols(), params.tables, params.bits_per_table,
                            params.seed);
        // Signature sets of the queries, one per table; a prompt token stays
        // when it lands in any of these buckets.
        std::vector<std::unordered_set<std::uint32_t>> query_sigs(proj.tables());
        for (std::size_t t = 0; t < proj.tables(); ++t) {
            for (std::size_t i = 0; i < queries.rows(); ++i) {
                query_sigs[t].insert(proj.signature(t, queries.row(i)));
            }
        }
        for (std::size_t p = 0; p < np; ++p) {
            for (std::size_t t = 0; t < proj.tables(); ++t) {
                if (query_sigs[t].count(proj.signature(t, prompt_keys.row(p))) != 0) {
                    mask.kept[p] = 1;
                    break;
                }
            }
        }
    } else {
        QuantIndex index(prompt_keys, params.quant_bits);
        const std::size_t k = topk_count(target_density, np);
        for (std::size_t i = 0; i < queries.rows(); ++i) {
            for (std::uint32_t p : index.topk(queries.row(i), k)) {
                mask.kept[p] = 1;
            }
        }
    }

    mask.kept_count = static_cast<std::size_t>(
        std::count(mask.kept.begin(), mask.kept.end(), std::uint8_t{1}));

    // Floor: re-admit the strongest pruned tokens, judged by the best exact
    // dot product any query gives them.
    const std::size_t floor_count = std::min(min_keep, np);
    if (mask.kept_count < floor_count) {
        std::vector<std::uint32_t> pruned;
        std::vector<double> best_dot(np, -std::numeric_limits<double>::infinity());
        for (std::size_t p = 0; p < np; ++p) {
            if (mask.kept[p] != 0) continue;
            for (std::size_t i = 0; i < queries.rows(); ++i) {
                best_dot[p] = std::max(best_dot[p],
                                       dot_f64(queries.row(i), prompt_keys.row(p)));
            }
            pruned.push_back(static_cast<std::uint32_t>(p));
        }
        std::sort(pruned.begin(), pruned.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (best_dot[a] != best_dot[b]) return best_dot[a] > best_dot[b];
            return a < b;
        });
        for (std::uint32_t p : pruned) {
            if (mask.kept_count >= floor_count) break;
            mask.kept[p] = 1;
            ++mask.kept_count;
        }
    }
    return mask;
}

AttentionOutput cross_attention_pruned(const Matrix& queries, const Matrix& prompt_keys,
                                       const Matrix& prompt_values,
                                       const PromptMask& mask, bool want_weights) {
    if (prompt_keys.rows() != prompt_values.rows()) {
        throw ShapeError("prune: prompt key/value count mismatch");
    }
    if (mask.kept.size() != prompt_keys.rows()) {
        throw ShapeError("prune: mask does not cover the prompt");
    }
    if (mask.kept_count == 0) throw ShapeError("prune: no prompt tokens kept");

    SparsePlan plan;
    plan.candidates.assign(queries.rows(), mask.kept_indices());
    plan.density = static_cast<double>(mask.kept_count) /
                   static_cast<double>(prompt_keys.rows());
    return execute_sparse(queries, prompt_keys, prompt_values, plan, want_weights);
}

}  // namespace anncache
