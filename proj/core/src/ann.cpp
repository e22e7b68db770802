#include "anncache/ann.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "anncache/errors.hpp"

namespace anncache {

LshProjections::LshProjections(std::size_t dim, std::size_t tables,
                               std::size_t bits_per_table, std::uint64_t seed)
    : dim_(dim), bits_(bits_per_table) {
    if (dim == 0) throw ConfigError("lsh: zero-dimensional keys");
    if (tables == 0) throw ConfigError("lsh: need at least one table");
    if (bits_per_table == 0 || bits_per_table > 30) {
        throw ConfigError("lsh: bits per table must be in [1, 30]");
    }
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    planes_.reserve(tables);
    std::vector<double> h(dim);
    for (std::size_t t = 0; t < tables; ++t) {
        Matrix table(bits_per_table, dim);
        for (std::size_t b = 0; b < bits_per_table; ++b) {
            double norm = 0.0;
            do {
                norm = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    h[c] = gauss(rng);
                    norm += h[c] * h[c];
                }
                norm = std::sqrt(norm);
            } while (norm == 0.0);
            for (std::size_t c = 0; c < dim; ++c) {
                table.at(b, c) = static_cast<float>(h[c] / norm);
            }
        }
        planes_.push_back(std::move(table));
    }
}

std::uint32_t LshProjections::signature(std::size_t table, std::span<const float> x) const {
    if (x.size() != dim_) throw ShapeError("lsh: vector width mismatch");
    const Matrix& planes = planes_.at(table);
    std::uint32_t sig = 0;
    for (std::size_t b = 0; b < bits_; ++b) {
        if (dot_f64(x, planes.row(b)) >= 0.0) sig |= (std::uint32_t{1} << b);
    }
    return sig;
}

LshIndex::LshIndex(Matrix keys, LshProjections projections)
    : keys_(std::move(keys)), proj_(std::move(projections)) {
    if (keys_.cols() != proj_.dim()) throw ShapeError("lsh: key width mismatch");
    build_buckets();
}

LshIndex::LshIndex(Matrix keys, std::size_t tables, std::size_t bits_per_table,
                   std::uint64_t seed)
    : keys_(std::move(keys)), proj_(keys_.cols(), tables, bits_per_table, seed) {
    build_buckets();
}

void LshIndex::build_buckets() {
    keys_.require_finite("indexed keys");
    buckets_.resize(proj_.tables());
    for (std::size_t i = 0; i < keys_.rows(); ++i) {
        for (std::size_t t = 0; t < proj_.tables(); ++t) {
            buckets_[t][proj_.signature(t, keys_.row(i))].push_back(
                static_cast<std::uint32_t>(i));
        }
    }
}

CandidateSet LshIndex::candidates(std::span<const float> query) const {
    CandidateSet out;
    for (std::size_t t = 0; t < buckets_.size(); ++t) {
        auto it = buckets_[t].find(proj_.signature(t, query));
        if (it != buckets_[t].end()) {
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::optional<std::uint32_t> LshIndex::top1(std::span<const float> query) const {
    const CandidateSet cand = candidates(query);
    if (cand.empty()) return std::nullopt;
    std::uint32_t best = cand.front();
    double best_dot = dot_f64(query, keys_.row(best));
    for (std::size_t j = 1; j < cand.size(); ++j) {
        double s = dot_f64(query, keys_.row(cand[j]));
        if (s > best_dot) {
            best_dot = s;
            best = cand[j];
        }
    }
    return best;
}

QuantIndex::QuantIndex(Matrix keys, unsigned bits)
    : recon_(0, keys.cols()), bits_(bits), dim_(keys.cols()) {
    if (bits != 2 && bits != 4 && bits != 8 && bits != 16 && bits != 32) {
        throw ConfigError("quant: bits must be one of 2, 4, 8, 16, 32");
    }
    keys.require_finite("indexed keys");
    if (bits == 32) {
        recon_ = std::move(keys);
        return;
    }

    const std::size_t n = keys.rows();
    recon_ = Matrix(n, dim_);
    codes_.resize(n * dim_);
    const double levels = std::pow(2.0, static_cast<double>(bits)) - 1.0;
    for (std::size_t c = 0; c < dim_; ++c) {
        double lo = 0.0;
        double hi = 0.0;
        if (n > 0) {
            lo = keys.at(0, c);
            hi = keys.at(0, c);
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, static_cast<double>(keys.at(i, c)));
                hi = std::max(hi, static_cast<double>(keys.at(i, c)));
            }
        }
        double scale = (hi - lo) / levels;
        if (scale == 0.0) {
            // Constant column: every key gets code 0 and reconstructs to lo.
            scale = 1.0;
            ++constant_dims_;
            for (std::size_t i = 0; i < n; ++i) {
                codes_[i * dim_ + c] = 0;
                recon_.at(i, c) = static_cast<float>(lo);
            }
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double q = std::round((keys.at(i, c) - lo) / scale);
            q = std::clamp(q, 0.0, levels);
            const auto code = static_cast<std::uint32_t>(q);
            codes_[i * dim_ + c] = code;
            recon_.at(i, c) = static_cast<float>(lo + scale * static_cast<double>(code));
        }
    }
}

std::uint32_t QuantIndex::code(std::size_t i, std::size_t c) const {
    if (bits_ == 32) throw InvariantError("quant: passthrough index stores no codes");
    if (i >= size() || c >= dim_) throw ShapeError("quant: code index out of range");
    return codes_[i * dim_ + c];
}

std::vector<std::uint32_t> QuantIndex::topk(std::span<const float> query,
                                            std::size_t k) const {
    if (query.size() != dim_) throw ShapeError("quant: query width mismatch");
    const std::size_t n = size();
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = dot_f64(query, recon_.row(i));
    const std::size_t keep = std::min(k, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                      order.end(), [&](std::uint32_t a, std::uint32_t b) {
                          if (score[a] != score[b]) return score[a] > score[b];
                          return a < b;
                      });
    order.resize(keep);
    return order;
}

std::optional<std::uint32_t> QuantIndex::top1(std::span<const float> query) const {
    auto top = topk(query, 1);
    if (top.empty()) return std::nullopt;
    return top.front();
}

}  // namespace anncache
