#include <algorithm>
#include <cmath>
#include <sstream>

#include "anncache/errors.hpp"
#include "anncache/rollout.hpp"

namespace anncache {

namespace {

constexpr double kBaseCosLimit = 0.5;
constexpr int kBaseAttempts = 200;
constexpr int kStepAttempts = 64;
constexpr int kFillerAttempts = 100;
constexpr int kQueryAttempts = 50;
constexpr double kFillerQueryBound = 0.1;

AnnBackend parse_backend(const std::string& name) {
    if (name == "lsh") return AnnBackend::Lsh;
    if (name == "quant") return AnnBackend::Quant;
    throw ConfigError("config: backend must be lsh or quant, got '" + name + "'");
}

RepresentativePolicy parse_representative(const std::string& name) {
    if (name == "last") return RepresentativePolicy::Last;
    if (name == "mean") return RepresentativePolicy::Mean;
    if (name == "medoid") return RepresentativePolicy::Medoid;
    throw ConfigError("config: representative must be last, mean, or medoid, got '" +
                      name + "'");
}

std::vector<std::string> parse_methods(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        while (!item.empty() && item.front() == ' ') item.erase(item.begin());
        while (!item.empty() && item.back() == ' ') item.pop_back();
        if (item.empty()) continue;
        if (item != "dense" && item != "tempcache" && item != "annsa" &&
            item != "annca" && item != "all") {
            throw ConfigError("config: unknown method '" + item + "'");
        }
        if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
    }
    // Dense is the oracle every metric is measured against; it always runs.
    if (std::find(out.begin(), out.end(), "dense") == out.end()) {
        out.insert(out.begin(), "dense");
    }
    return out;
}

}  // namespace

RolloutConfig RolloutConfig::from_map(const ConfigMap& map) {
    ConfigView v(map);
    RolloutConfig c;
    c.frames = v.get_u64("frames", c.frames);
    c.tokens_per_frame = v.get_u64("tokens_per_frame", c.tokens_per_frame);
    c.d = v.get_u64("d", c.d);
    c.d_v = v.get_u64("d_v", c.d_v);
    c.tracks = v.get_u64("tracks", c.tracks);
    c.track_drift = v.get_f64("track_drift", c.track_drift);
    c.birth_rate = v.get_f64("birth_rate", c.birth_rate);
    c.prompt_len = v.get_u64("prompt_len", c.prompt_len);
    c.relevant_prompt_per_frame =
        v.get_u64("relevant_prompt_per_frame", c.relevant_prompt_per_frame);
    c.seed = v.get_u64("seed", c.seed);
    c.merge_tol = v.get_f64("merge_tol", c.merge_tol);
    c.backend = parse_backend(v.get_str("backend", "quant"));
    c.bits = static_cast<unsigned>(v.get_u64("bits", c.bits));
    c.dense_warmup_steps = v.get_u64("dense_warmup_steps", c.dense_warmup_steps);
    c.queries_per_frame = v.get_u64("queries_per_frame", c.queries_per_frame);
    c.query_noise = v.get_f64("query_noise", c.query_noise);
    c.query_gain = v.get_f64("query_gain", c.query_gain);
    c.value_walk = v.get_f64("value_walk", c.value_walk);
    c.track_cos_floor = v.get_f64("track_cos_floor", c.track_cos_floor);
    c.steps_per_frame = v.get_u64("steps_per_frame", c.steps_per_frame);
    c.target_density = v.get_f64("target_density", c.target_density);
    c.tables = v.get_u64("tables", c.tables);
    c.bits_per_table = v.get_u64("bits_per_table", c.bits_per_table);
    c.min_keep = v.get_u64("min_keep", c.min_keep);
    c.representative = parse_representative(v.get_str("representative", "last"));
    c.methods = parse_methods(v.get_str("methods", "dense,tempcache,annsa,annca,all"));
    v.require_all_consumed();
    c.validate();
    return c;
}

void RolloutConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
    if (frames == 0) fail("frames must be >= 1");
    if (tokens_per_frame == 0) fail("tokens_per_frame must be >= 1");
    if (d == 0) fail("d must be >= 1");
    if (d_v == 0) fail("d_v must be >= 1");
    if (tracks == 0) fail("tracks must be >= 1");
    if (tracks > tokens_per_frame) fail("tracks must be <= tokens_per_frame");
    if (queries_per_frame > tokens_per_frame) {
        fail("queries_per_frame must be <= tokens_per_frame");
    }
    if (merge_tol < 0.0 || merge_tol > 1.0) fail("merge_tol must be in [0, 1]");
    if (track_drift < 0.0) fail("track_drift must be >= 0");
    if (birth_rate < 0.0) fail("birth_rate must be >= 0");
    if (value_walk < 0.0) fail("value_walk must be >= 0");
    if (query_noise < 0.0) fail("query_noise must be >= 0");
    if (!(query_gain > 0.0)) fail("query_gain must be > 0");
    if (!(track_cos_floor > 0.0) || track_cos_floor >= 1.0) {
        fail("track_cos_floor must be in (0, 1)");
    }
    if (!(target_density > 0.0) || target_density > 1.0) {
        fail("target_density must be in (0, 1]");
    }
    if (steps_per_frame == 0) fail("steps_per_frame must be >= 1");
    if (bits != 2 && bits != 4 && bits != 8 && bits != 16 && bits != 32) {
        fail("bits must be one of 2, 4, 8, 16, 32");
    }
    if (tables == 0) fail("tables must be >= 1");
    if (bits_per_table == 0 || bits_per_table > 30) fail("bits_per_table must be in [1, 30]");
    if (relevant_prompt_per_frame > prompt_len) {
        fail("relevant_prompt_per_frame must be <= prompt_len");
    }
    if (prompt_len > relevant_prompt_per_frame && tracks >= d) {
        fail("orthogonal prompt filler needs tracks < d");
    }
    if (methods.empty()) fail("methods must not be empty");
}

AnnParams RolloutConfig::ann_params() const {
    AnnParams p;
    p.backend = backend;
    p.tables = tables;
    p.bits_per_table = bits_per_table;
    p.quant_bits = bits;
    p.seed = seed;
    return p;
}

bool RolloutConfig::method_enabled(std::string_view name) const {
    return std::find(methods.begin(), methods.end(), name) != methods.end();
}

StreamGenerator::StreamGenerator(const RolloutConfig& config)
    : cfg_(config), rng_(config.seed) {
    cfg_.validate();
    // Two keys inside a cone of half-angle acos(c) around the same base are
    // within 2*acos(c) of each other, so pairwise cosine >= 2c^2 - 1. Solving
    // for the configured pairwise floor gives the per-key cone.
    cone_cos_ = std::sqrt((1.0 + cfg_.track_cos_floor) / 2.0);

    for (std::size_t t = 0; t < cfg_.tracks; ++t) spawn_track();

    prompt_keys_ = Matrix(cfg_.prompt_len, cfg_.d);
    prompt_values_ = Matrix(cfg_.prompt_len, cfg_.d_v);
    prompt_relevant_.assign(cfg_.prompt_len, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double value_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_v));
    for (std::size_t r = 0; r < cfg_.prompt_len; ++r) {
        for (std::size_t c = 0; c < cfg_.d_v; ++c) {
            prompt_values_.at(r, c) = static_cast<float>(gauss(rng_) * value_scale);
        }
        if (r < cfg_.relevant_prompt_per_frame) {
            prompt_relevant_[r] = 1;
            const auto& base = track_base_[r % cfg_.tracks];
            std::copy(base.begin(), base.end(), prompt_keys_.row(r).begin());
            continue;
        }
        // Filler rows: random directions with every track-base component
        // removed, so they stay near-orthogonal to all queries of the
        // initial tracks.
        bool placed = false;
        for (int attempt = 0; attempt < kFillerAttempts && !placed; ++attempt) {
            std::vector<double> f(cfg_.d);
            for (double& x : f) x = gauss(rng_);
            for (const auto& base : track_base_) {
                double proj = 0.0;
                for (std::size_t c = 0; c < cfg_.d; ++c) proj += f[c] * base[c];
                for (std::size_t c = 0; c < cfg_.d; ++c) f[c] -= proj * base[c];
            }
            double norm = 0.0;
            for (double x : f) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-6) continue;
            for (std::size_t c = 0; c < cfg_.d; ++c) {
                prompt_keys_.at(r, c) = static_cast<float>(f[c] / norm);
            }
            placed = true;
        }
        if (!placed) {
            throw ConfigError("generator: cannot orthogonalize prompt filler; "
                              "lower tracks or raise d");
        }
    }
}

std::vector<float> StreamGenerator::unit_noise() {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> g(cfg_.d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : g) {
            x = gauss(rng_);
            norm += x * x;
        }
        norm = std::sqrt(norm);
    } while (norm == 0.0);
    std::vector<float> out(cfg_.d);
    for (std::size_t c = 0; c < cfg_.d; ++c) out[c] = static_cast<float>(g[c] / norm);
    return out;
}

std::vector<float> StreamGenerator::sample_base() {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int attempt = 0; attempt < kBaseAttempts; ++attempt) {
        std::vector<double> g(cfg_.d);
        double norm = 0.0;
        for (double& x : g) {
            x = gauss(rng_);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        std::vector<float> cand(cfg_.d);
        for (std::size_t c = 0; c < cfg_.d; ++c) cand[c] = static_cast<float>(g[c] / norm);
        bool separated = true;
        for (const auto& base : track_base_) {
            if (std::abs(dot_f64(cand, base)) > kBaseCosLimit) {
                separated = false;
                break;
            }
        }
        if (separated) return cand;
    }
    throw ConfigError("generator: cannot separate track bases; d too small for tracks");
}

void StreamGenerator::spawn_track() {
    std::vector<float> base = sample_base();
    track_dir_.push_back(base);
    track_base_.push_back(std::move(base));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<float> value(cfg_.d_v);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_v));
    for (std::size_t c = 0; c < cfg_.d_v; ++c) {
        value[c] = static_cast<float>(gauss(rng_) * scale);
    }
    track_value_.push_back(std::move(value));
}

void StreamGenerator::advance_track(std::size_t t) {
    if (cfg_.track_drift == 0.0) return;  // frozen tracks repeat keys exactly
    auto& dir = track_dir_[t];
    const auto& base = track_base_[t];
    for (int attempt = 0; attempt < kStepAttempts; ++attempt) {
        std::vector<float> noise = unit_noise();
        std::vector<float> prop(cfg_.d);
        double norm = 0.0;
        for (std::size_t c = 0; c < cfg_.d; ++c) {
            double x = dir[c] + cfg_.track_drift * noise[c];
            prop[c] = static_cast<float>(x);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (float& x : prop) x = static_cast<float>(x / norm);
        if (dot_f64(prop, base) >= cone_cos_) {
            dir = std::move(prop);
            return;
        }
    }
    // Drift kept leaving the cone; pull halfway back toward the base, which
    // always lands inside it.
    std::vector<float> pulled(cfg_.d);
    double norm = 0.0;
    for (std::size_t c = 0; c < cfg_.d; ++c) {
        double x = dir[c] + base[c];
        pulled[c] = static_cast<float>(x);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (float& x : pulled) x = static_cast<float>(x / norm);
    dir = std::move(pulled);
}

FrameBatch StreamGenerator::next_frame() {
    const std::size_t initial_tracks = cfg_.tracks;
    birth_credit_ += cfg_.birth_rate;
    while (birth_credit_ >= 1.0) {
        spawn_track();
        birth_credit_ -= 1.0;
    }
    for (std::size_t t = 0; t < track_dir_.size(); ++t) advance_track(t);

    const std::size_t n_live = track_dir_.size();
    const std::size_t tokens = cfg_.tokens_per_frame;
    FrameBatch batch{Matrix(tokens, cfg_.d), Matrix(tokens, cfg_.d_v), Matrix(), {}};
    batch.token_track.resize(tokens);

    // Round-robin emission over live tracks, rotating the window each frame
    // so late-born tracks still get turns when live > tokens_per_frame.
    const std::size_t start = (frame_ * tokens) % n_live;
    for (std::size_t j = 0; j < tokens; ++j) {
        const std::size_t t = (start + j) % n_live;
        batch.token_track[j] = static_cast<std::uint32_t>(t);
        std::copy(track_dir_[t].begin(), track_dir_[t].end(), batch.keys.row(j).begin());
        std::copy(track_value_[t].begin(), track_value_[t].end(),
                  batch.values.row(j).begin());
    }

    const std::size_t n_queries =
        cfg_.queries_per_frame == 0 ? tokens : cfg_.queries_per_frame;
    batch.queries = Matrix(n_queries, cfg_.d);
    const double query_scale = cfg_.query_gain * std::sqrt(static_cast<double>(cfg_.d));
    const bool filler_exists = cfg_.prompt_len > cfg_.relevant_prompt_per_frame;
    for (std::size_t i = 0; i < n_queries; ++i) {
        const auto key = batch.keys.row(i);
        // Prompt filler is orthogonalized against initial-track bases only,
        // so the filler bound is enforced just for those tracks' queries.
        const bool bound_applies = filler_exists && batch.token_track[i] < initial_tracks;
        std::vector<float> unit(cfg_.d);
        for (int attempt = 0; attempt < kQueryAttempts; ++attempt) {
            std::vector<float> noise = unit_noise();
            std::vector<double> q(cfg_.d);
            double norm = 0.0;
            for (std::size_t c = 0; c < cfg_.d; ++c) {
                q[c] = key[c] + cfg_.query_noise * noise[c];
                norm += q[c] * q[c];
            }
            norm = std::sqrt(norm);
            if (norm == 0.0) continue;
            for (std::size_t c = 0; c < cfg_.d; ++c) {
                unit[c] = static_cast<float>(q[c] / norm);
            }
            if (!bound_applies) break;
            bool clear = true;
            for (std::size_t r = cfg_.relevant_prompt_per_frame;
                 r < cfg_.prompt_len && clear; ++r) {
                clear = std::abs(dot_f64(unit, prompt_keys_.row(r))) <= kFillerQueryBound;
            }
            if (clear) break;
        }
        for (std::size_t c = 0; c < cfg_.d; ++c) {
            batch.queries.at(i, c) = static_cast<float>(query_scale * unit[c]);
        }
    }

    for (std::size_t t = 0; t < track_value_.size(); ++t) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto& value = track_value_[t];
        for (std::size_t c = 0; c < cfg_.d_v; ++c) {
            value[c] = static_cast<float>(value[c] + cfg_.value_walk * gauss(rng_));
        }
    }

    ++frame_;
    check_planted_geometry(batch);
    return batch;
}

void StreamGenerator::check_planted_geometry(const FrameBatch& batch) {
    // Every emitted key must sit inside its track's cone, which implies the
    // configured pairwise intra-track floor.
    for (std::size_t j = 0; j < batch.keys.rows(); ++j) {
        const auto& base = track_base_[batch.token_track[j]];
        if (dot_f64(batch.keys.row(j), base) < cone_cos_ - 1e-9) {
            throw InvariantError("generator: key escaped its track cone");
        }
    }
    // Sampled base pairs stay separated.
    const std::size_t n = track_base_.size();
    std::size_t checked = 0;
    for (std::size_t a = 0; a < n && checked < 100; ++a) {
        for (std::size_t b = a + 1; b < n && checked < 100; ++b, ++checked) {
            if (std::abs(dot_f64(track_base_[a], track_base_[b])) > kBaseCosLimit + 1e-9) {
                throw InvariantError("generator: track bases drifted together");
            }
        }
    }
}

}  // namespace anncache
