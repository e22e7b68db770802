#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "anncache/ann.hpp"
#include "anncache/config.hpp"
#include "anncache/matrix.hpp"
#include "anncache/metrics.hpp"
#include "anncache/temp_cache.hpp"

namespace anncache {

/// Full parameter set for a synthetic rollout. Field names double as the
/// config-file keys. Methods not listed in `methods` are skipped; the dense
/// oracle always runs.
struct RolloutConfig {
    std::size_t frames = 200;
    std::size_t tokens_per_frame = 48;
    std::size_t d = 64;
    std::size_t d_v = 64;
    std::size_t tracks = 48;
    double track_drift = 0.15;
    double birth_rate = 0.0;
    std::size_t prompt_len = 32;
    std::size_t relevant_prompt_per_frame = 4;
    std::uint64_t seed = 42;
    double merge_tol = 0.9;
    AnnBackend backend = AnnBackend::Quant;
    unsigned bits = 8;
    std::size_t dense_warmup_steps = 0;

    // Generator shape knobs.
    std::size_t queries_per_frame = 0;  // 0 means one query per frame token
    double query_noise = 0.1;
    double query_gain = 10.0;
    double value_walk = 0.05;
    double track_cos_floor = 0.95;
    std::size_t steps_per_frame = 1;

    // Sparse-planner knobs.
    double target_density = 0.3;
    std::size_t tables = 8;
    std::size_t bits_per_table = 10;
    std::size_t min_keep = 4;
    RepresentativePolicy representative = RepresentativePolicy::Last;

    std::vector<std::string> methods = {"dense", "tempcache", "annsa", "annca", "all"};

    static RolloutConfig from_map(const ConfigMap& map);
    void validate() const;  // throws ConfigError naming the offending field

    AnnParams ann_params() const;
    bool method_enabled(std::string_view name) const;
};

/// One generated frame: keys/values for every live track token, the frame's
/// queries, and the token -> track ground truth.
struct FrameBatch {
    Matrix keys;
    Matrix values;
    Matrix queries;
    std::vector<std::uint32_t> token_track;
};

/// Planted-track stream source. Every track owns a base unit key
/// (pairwise |cos| <= 0.5 between bases, enforced by bounded rejection); per
/// frame each emitting track's key performs a tangent random walk clamped to
/// a cone around its base chosen so intra-track pairwise cosine never falls
/// below track_cos_floor. Queries are scaled noisy copies of current keys;
/// values follow a per-track random walk.
///
/// The prompt is generated once: the first relevant_prompt_per_frame tokens
/// point along track bases, the rest are orthogonalized against every track
/// base (requires tracks < d when such filler tokens exist).
class StreamGenerator {
public:
    explicit StreamGenerator(const RolloutConfig& config);

    const Matrix& prompt_keys() const { return prompt_keys_; }
    const Matrix& prompt_values() const { return prompt_values_; }
    /// 1 for prompt rows aligned with a track, 0 for orthogonal filler.
    const std::vector<std::uint8_t>& prompt_relevant() const { return prompt_relevant_; }

    std::size_t live_tracks() const { return track_dir_.size(); }
    std::size_t frames_emitted() const { return frame_; }

    FrameBatch next_frame();

private:
    std::vector<float> sample_base();
    void spawn_track();
    std::vector<float> unit_noise();
    void advance_track(std::size_t t);
    void check_planted_geometry(const FrameBatch& batch);

    RolloutConfig cfg_;
    std::mt19937_64 rng_;
    double cone_cos_ = 0.0;  // per-key floor against the base
    std::vector<std::vector<float>> track_base_;
    std::vector<std::vector<float>> track_dir_;
    std::vector<std::vector<float>> track_value_;
    Matrix prompt_keys_;
    Matrix prompt_values_;
    std::vector<std::uint8_t> prompt_relevant_;
    double birth_credit_ = 0.0;
    std::size_t frame_ = 0;
};

/// Everything a rollout produces: one metrics row per frame per method plus
/// the summary aggregates for the highest-fidelity approximate method run.
struct RolloutReport {
    std::vector<MetricsRow> rows;
    std::string summary_method;
    double speedup_vs_dense = 0.0;
    std::size_t peak_cache_bytes = 0;
    double mean_recall = 0.0;
    std::size_t total_frames = 0;
};

/// Runs every configured method over one generated stream. Steps whose
/// global index (frame * steps_per_frame + step) falls below
/// dense_warmup_steps execute dense attention for every method while caches
/// keep ingesting. `time_include_index` folds index build time into the
/// summary speed ratio.
RolloutReport run_rollout(const RolloutConfig& config, bool time_include_index = false);

void write_metrics_csv(std::ostream& os, const RolloutReport& report);
void write_summary(std::ostream& os, const RolloutReport& report);

enum class AblationKnob { MergeTol, Bits, Representative };

struct AblationRow {
    std::string setting;
    double recall = 0.0;
    std::size_t entries = 0;
    std::int64_t attn_micros = 0;
};

/// Re-runs a fixed-seed rollout once per grid value, overriding one knob.
/// MergeTol and Representative report the tempcache method; Bits reports
/// annsa under the quant backend.
std::vector<AblationRow> run_ablation(const RolloutConfig& base, AblationKnob which,
                                      const std::vector<std::string>& grid);

std::vector<std::string> default_ablation_grid(AblationKnob which);
AblationKnob parse_ablation_knob(std::string_view name);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace anncache
