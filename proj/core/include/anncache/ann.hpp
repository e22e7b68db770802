#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "anncache/matrix.hpp"

namespace anncache {

enum class AnnBackend { Lsh, Quant };

/// Knobs shared by every approximate-neighbor consumer. `tables` and
/// `bits_per_table` drive the LSH backend, `quant_bits` the quantization
/// backend; the seed fixes the random hyperplanes.
struct AnnParams {
    AnnBackend backend = AnnBackend::Quant;
    std::size_t tables = 8;
    std::size_t bits_per_table = 10;
    unsigned quant_bits = 8;
    std::uint64_t seed = 0;
};

/// Sorted, duplicate-free key indices.
using CandidateSet = std::vector<std::uint32_t>;

/// A seeded family of signed-random-projection hash functions: `tables`
/// independent tables of `bits_per_table` unit hyperplanes each. Two vectors
/// land in the same bucket of a table when they fall on the same side of all
/// of that table's hyperplanes, which happens with probability
/// (1 - theta/pi)^bits for angle theta. One family can hash any number of
/// vector sets, so fronts that must agree on buckets share a family.
class LshProjections {
public:
    LshProjections(std::size_t dim, std::size_t tables, std::size_t bits_per_table,
                   std::uint64_t seed);

    std::size_t dim() const { return dim_; }
    std::size_t tables() const { return planes_.size(); }
    std::size_t bits() const { return bits_; }

    /// Sign pattern of x against one table's hyperplanes; bit j is set when
    /// the projection onto hyperplane j is >= 0.
    std::uint32_t signature(std::size_t table, std::span<const float> x) const;

    const Matrix& hyperplanes(std::size_t table) const { return planes_.at(table); }

private:
    std::size_t dim_;
    std::size_t bits_;
    std::vector<Matrix> planes_;  // per table: bits x dim, unit rows
};

/// Bucketed key set under one projection family. Candidate retrieval is the
/// union of the query's buckets across tables; top-1 scores the candidates
/// by exact dot product.
class LshIndex {
public:
    LshIndex(Matrix keys, LshProjections projections);
    LshIndex(Matrix keys, std::size_t tables, std::size_t bits_per_table, std::uint64_t seed);

    std::size_t size() const { return keys_.rows(); }
    const Matrix& keys() const { return keys_; }
    const LshProjections& projections() const { return proj_; }

    CandidateSet candidates(std::span<const float> query) const;

    /// Highest-dot key among the bucket candidates, ties to the lower index.
    /// nullopt when no bucket matches; widening past the buckets is the
    /// caller's policy, not the index's.
    std::optional<std::uint32_t> top1(std::span<const float> query) const;

private:
    void build_buckets();

    Matrix keys_;
    LshProjections proj_;
    std::vector<std::unordered_map<std::uint32_t, std::vector<std::uint32_t>>> buckets_;
};

/// Per-dimension affine quantizer over a key set. Each dimension gets
/// scale = (max - min) / (2^bits - 1) and zero_point = min; scoring runs
/// against the reconstructed keys. bits == 32 skips quantization entirely and
/// scores the original keys. A constant dimension quantizes to code 0 with
/// scale 1 and is counted in constant_dims().
class QuantIndex {
public:
    QuantIndex(Matrix keys, unsigned bits);

    std::size_t size() const { return recon_.rows(); }
    unsigned bits() const { return bits_; }
    std::size_t constant_dims() const { return constant_dims_; }

    const Matrix& reconstructed_keys() const { return recon_; }
    /// Stored code for key i, dimension c. Valid only for bits < 32.
    std::uint32_t code(std::size_t i, std::size_t c) const;

    /// Indices of the k highest-dot keys under the reconstruction, best
    /// first; ties resolve to the lower index. k >= size() returns everything.
    std::vector<std::uint32_t> topk(std::span<const float> query, std::size_t k) const;
    std::optional<std::uint32_t> top1(std::span<const float> query) const;

private:
    Matrix recon_;
    unsigned bits_;
    std::size_t dim_;
    std::size_t constant_dims_ = 0;
    std::vector<std::uint32_t> codes_;  // row-major, empty when bits == 32
};

}  // namespace anncache
