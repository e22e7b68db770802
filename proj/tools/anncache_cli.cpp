// Command-line front end: synthetic rollouts, knob ablations, file-based
// attention over QKV1 tensors, and the self-check property suite.
//
// Exit codes are a contract: 0 success, 1 failed verify property, 2 bad
// input (config/file/shape), 3 numeric or internal-invariant failure.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "anncache/ann.hpp"
#include "anncache/attention.hpp"
#include "anncache/config.hpp"
#include "anncache/errors.hpp"
#include "anncache/metrics.hpp"
#include "anncache/qkv_io.hpp"
#include "anncache/rollout.hpp"
#include "anncache/sparse.hpp"
#include "anncache/temp_cache.hpp"

namespace {

namespace fs = std::filesystem;
using anncache::ConfigMap;
using anncache::Matrix;

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailed = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitNumeric = 3;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_common_flags(CLI::App& sub, CommonArgs& args, bool with_out) {
    sub.add_option("--config", args.config_path, "key=value settings file");
    if (with_out) {
        sub.add_option("--out", args.out_dir, "output directory")->required();
    }
    sub.add_option("--set", args.overrides, "override one setting (repeatable)");
    sub.add_option("--seed", args.seed, "override the seed");
}

ConfigMap gather_settings(const CommonArgs& args) {
    ConfigMap map;
    if (!args.config_path.empty()) map = anncache::load_config_file(args.config_path);
    for (const auto& assignment : args.overrides) {
        anncache::apply_override(map, assignment);
    }
    if (args.seed) map["seed"] = std::to_string(*args.seed);
    return map;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw anncache::IoError("cannot write '" + path.string() + "'");
    return out;
}

fs::path prepare_out_dir(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw anncache::IoError("cannot create output directory '" + dir + "'");
    return p;
}

int cmd_rollout(const CommonArgs& args, bool time_include_index) {
    auto config = anncache::RolloutConfig::from_map(gather_settings(args));
    auto report = anncache::run_rollout(config, time_include_index);

    const fs::path dir = prepare_out_dir(args.out_dir);
    {
        auto metrics = open_output(dir / "metrics.csv");
        anncache::write_metrics_csv(metrics, report);
    }
    {
        auto summary = open_output(dir / "summary.txt");
        anncache::write_summary(summary, report);
    }
    std::cout << "rollout: " << report.total_frames << " frames, "
              << report.rows.size() << " metric rows -> " << dir.string() << "\n";
    return kExitOk;
}

int cmd_ablate(const CommonArgs& args, const std::string& knob_name,
               const std::string& grid_csv) {
    auto config = anncache::RolloutConfig::from_map(gather_settings(args));
    const auto knob = anncache::parse_ablation_knob(knob_name);

    std::vector<std::string> grid;
    if (grid_csv.empty()) {
        grid = anncache::default_ablation_grid(knob);
    } else {
        std::stringstream ss(grid_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) grid.push_back(item);
        }
        if (grid.empty()) throw anncache::ConfigError("ablate: empty grid");
    }

    auto rows = anncache::run_ablation(config, knob, grid);
    const fs::path dir = prepare_out_dir(args.out_dir);
    auto csv = open_output(dir / "ablation.csv");
    anncache::write_ablation_csv(csv, rows);
    std::cout << "ablate: " << knob_name << " over " << rows.size() << " settings -> "
              << (dir / "ablation.csv").string() << "\n";
    return kExitOk;
}

int cmd_attend(const CommonArgs& args, const std::string& q_path,
               const std::string& k_path, const std::string& v_path,
               const std::string& method) {
    Matrix q = anncache::read_qkv1_file(q_path);
    Matrix k = anncache::read_qkv1_file(k_path);
    Matrix v = anncache::read_qkv1_file(v_path);

    ConfigMap map = gather_settings(args);
    anncache::ConfigView view(map);
    const double merge_tol = view.get_f64("merge_tol", 0.9);
    const double target_density = view.get_f64("target_density", 0.3);
    anncache::AnnParams ann;
    ann.backend = view.get_str("backend", "quant") == "lsh" ? anncache::AnnBackend::Lsh
                                                            : anncache::AnnBackend::Quant;
    ann.quant_bits = static_cast<unsigned>(view.get_u64("bits", ann.quant_bits));
    ann.tables = view.get_u64("tables", ann.tables);
    ann.bits_per_table = view.get_u64("bits_per_table", ann.bits_per_table);
    ann.seed = view.get_u64("seed", 0);
    view.require_all_consumed();

    auto dense = anncache::dense_attention(q, k, v, true);

    anncache::MetricsRow row;
    row.method = method;
    row.cache_entries = k.rows();
    row.cache_bytes = anncache::cache_footprint_bytes(k.rows(), k.cols(), v.cols());
    Matrix output;

    const auto started = std::chrono::steady_clock::now();
    if (method == "dense") {
        output = dense.output;
        row.density = 1.0;
        row.recall = 1.0;
        row.max_abs_err = 0.0;
    } else if (method == "grouped") {
        anncache::GroupingStats stats;
        auto grouped = anncache::group_duplicates(k, v, merge_tol, &stats);
        auto out = anncache::grouped_attention(q, grouped, true);
        output = out.output;
        row.density = static_cast<double>(grouped.groups()) / static_cast<double>(k.rows());
        row.recall = anncache::grouped_mass_recall(*dense.weights, *out.weights,
                                                   stats.token_group);
        row.max_abs_err = anncache::max_abs_diff(output, dense.output);
        row.cache_entries = grouped.groups();
        row.cache_bytes =
            anncache::cache_footprint_bytes(grouped.groups(), k.cols(), v.cols());
    } else if (method == "annsa") {
        auto plan = anncache::plan_self_attention(q, k, ann, target_density);
        auto out = anncache::execute_sparse(q, k, v, plan);
        output = out.output;
        row.density = plan.density;
        row.recall = anncache::attention_recall(*dense.weights, plan.candidates);
        row.max_abs_err = anncache::max_abs_diff(output, dense.output);
    } else {
        throw anncache::ConfigError("attend: unknown method '" + method +
                                    "', expected dense, grouped, or annsa");
    }
    row.attn_micros = std::chrono::duration_cast<std::chrono::microseconds>(
                          std::chrono::steady_clock::now() - started)
                          .count();

    const fs::path dir = prepare_out_dir(args.out_dir);
    anncache::write_qkv1_file(dir / "output.qkv1", output);
    auto stats_csv = open_output(dir / "stats.csv");
    anncache::write_metrics_header(stats_csv);
    anncache::write_metrics_row(stats_csv, row);
    std::cout << "attend: " << method << " over " << q.rows() << "x" << k.rows()
              << " -> " << dir.string() << "\n";
    return kExitOk;
}

// ---- verify: self-contained property checks over planted instances ----

struct PropertyResult {
    std::string name;
    bool passed;
    std::string detail;
};

PropertyResult check_grouped_exactness(std::uint64_t seed, bool multiplicity_bias) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t groups = 1 + rng() % 24;
        const std::size_t d = 4 + rng() % 28;
        const std::size_t dv = 4 + rng() % 12;
        std::normal_distribution<float> dist(0.0f, 1.0f);

        Matrix pool_k(groups, d), pool_v(groups, dv);
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t c = 0; c < d; ++c) pool_k.at(g, c) = dist(rng);
            for (std::size_t c = 0; c < dv; ++c) pool_v.at(g, c) = dist(rng);
        }
        Matrix keys(0, d), values(0, dv);
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t copies = 1 + rng() % 5;
            for (std::size_t m = 0; m < copies; ++m) {
                Matrix krow(1, d), vrow(1, dv);
                for (std::size_t c = 0; c < d; ++c) krow.at(0, c) = pool_k.at(g, c);
                for (std::size_t c = 0; c < dv; ++c) vrow.at(0, c) = pool_v.at(g, c);
                keys.append_rows(krow);
                values.append_rows(vrow);
            }
        }
        Matrix queries(3, d);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t c = 0; c < d; ++c) queries.at(i, c) = dist(rng);
        }
        auto grouped = anncache::group_duplicates(keys, values, 1.0);
        auto approx = anncache::grouped_attention(queries, grouped, false, multiplicity_bias);
        auto dense = anncache::dense_attention(queries, keys, values);
        worst = std::max(worst, anncache::max_abs_diff(approx.output, dense.output));
    }
    char detail[64];
    std::snprintf(detail, sizeof(detail), "max_abs_err %.3g", worst);
    return {"grouped-attention-exact-on-duplicates", worst <= 1e-6, detail};
}

PropertyResult check_curve_monotone(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    Matrix q(8, 24), k(64, 24), v(64, 8);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t c = 0; c < 24; ++c) q.at(i, c) = 3.0f * dist(rng);
    }
    for (std::size_t i = 0; i < 64; ++i) {
        for (std::size_t c = 0; c < 24; ++c) k.at(i, c) = dist(rng);
        for (std::size_t c = 0; c < 8; ++c) v.at(i, c) = dist(rng);
    }
    auto dense = anncache::dense_attention(q, k, v, true);
    const double fractions[] = {0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    auto curve = anncache::recall_density_curve(*dense.weights, fractions);
    bool monotone = true;
    double prev = 0.0;
    for (const auto& point : curve) {
        monotone = monotone && point.recall >= prev - 1e-12;
        prev = point.recall;
    }
    const bool end_exact = curve.back().recall == 1.0;
    return {"retention-curve-monotone-ending-at-one", monotone && end_exact,
            monotone ? (end_exact ? "ok" : "endpoint below one") : "non-monotone"};
}

PropertyResult check_bounded_cache(std::uint64_t seed) {
    anncache::RolloutConfig cfg;
    cfg.frames = 40;
    cfg.tokens_per_frame = 16;
    cfg.tracks = 16;
    cfg.d = 48;
    cfg.d_v = 16;
    cfg.track_drift = 0.1;
    cfg.prompt_len = 0;
    cfg.relevant_prompt_per_frame = 0;
    cfg.seed = seed;
    anncache::StreamGenerator gen(cfg);
    anncache::TempCache cache(cfg.d, cfg.d_v, {});
    bool bounded = true;
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        auto batch = gen.next_frame();
        cache.ingest_frame(batch.keys, batch.values);
        bounded = bounded && cache.entries() <= cfg.tracks;
    }
    char detail[64];
    std::snprintf(detail, sizeof(detail), "%zu entries for %zu tracks", cache.entries(),
                  cfg.tracks);
    return {"planted-track-cache-bounded", bounded && cache.entries() == cfg.tracks,
            detail};
}

PropertyResult check_no_redundancy_degeneracy(std::uint64_t seed) {
    const std::size_t n = 24, d = 64;
    Matrix keys(n, d), values = Matrix(n, 8);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (std::size_t i = 0; i < n; ++i) {
        keys.at(i, i) = 1.0f;  // mutually orthogonal one-hots
        for (std::size_t c = 0; c < 8; ++c) values.at(i, c) = dist(rng);
    }
    anncache::TempCache cache(d, 8, {});
    Matrix half_k(n / 2, d), half_v(n / 2, 8);
    for (std::size_t i = 0; i < n / 2; ++i) {
        for (std::size_t c = 0; c < d; ++c) half_k.at(i, c) = keys.at(i, c);
        for (std::size_t c = 0; c < 8; ++c) half_v.at(i, c) = values.at(i, c);
    }
    cache.ingest_frame(half_k, half_v);
    for (std::size_t i = n / 2; i < n; ++i) {
        Matrix krow(1, d), vrow(1, 8);
        for (std::size_t c = 0; c < d; ++c) krow.at(0, c) = keys.at(i, c);
        for (std::size_t c = 0; c < 8; ++c) vrow.at(0, c) = values.at(i, c);
        cache.ingest_frame(krow, vrow);
    }
    Matrix q(4, d);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < d; ++c) q.at(i, c) = dist(rng);
    }
    const bool no_merges = cache.entries() == n;
    const double err =
        anncache::max_abs_diff(cache.attend(q).output,
                               anncache::dense_attention(q, keys, values).output);
    char detail[64];
    std::snprintf(detail, sizeof(detail), "%zu entries, err %.3g", cache.entries(), err);
    return {"orthogonal-stream-never-merges", no_merges && err <= 1e-6, detail};
}

PropertyResult check_conservation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    anncache::TempCache cache(12, 6, {});
    std::size_t tokens = 0;
    for (int f = 0; f < 10; ++f) {
        const std::size_t rows = 1 + rng() % 9;
        Matrix k(rows, 12), v(rows, 6);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t c = 0; c < 12; ++c) k.at(i, c) = dist(rng);
            for (std::size_t c = 0; c < 6; ++c) v.at(i, c) = dist(rng);
        }
        cache.ingest_frame(k, v);
        tokens += rows;
    }
    const bool ok =
        cache.total_multiplicity() == tokens && cache.entries() <= tokens;
    return {"multiplicity-conservation", ok, ok ? "ok" : "multiplicity leak"};
}

int cmd_verify(std::uint64_t seed, bool disable_multiplicity_bias) {
    std::vector<PropertyResult> results;
    results.push_back(check_grouped_exactness(seed, !disable_multiplicity_bias));
    results.push_back(check_curve_monotone(seed + 1));
    results.push_back(check_bounded_cache(seed + 2));
    results.push_back(check_no_redundancy_degeneracy(seed + 3));
    results.push_back(check_conservation(seed + 4));

    std::size_t failed = 0;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail
                  << ")\n";
        failed += r.passed ? 0 : 1;
    }
    std::cout << "verify: " << (results.size() - failed) << "/" << results.size()
              << " properties passed\n";
    return failed == 0 ? kExitOk : kExitPropertyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming-attention cache and sparse-attention toolkit"};
    app.require_subcommand(1);

    CommonArgs rollout_args;
    bool time_include_index = false;
    auto* rollout = app.add_subcommand("rollout", "run a synthetic rollout");
    add_common_flags(*rollout, rollout_args, true);
    rollout->add_flag("--time-include-index", time_include_index,
                      "fold index-build time into the speed ratio");

    CommonArgs ablate_args;
    std::string knob, grid;
    auto* ablate = app.add_subcommand("ablate", "sweep one knob over a grid");
    add_common_flags(*ablate, ablate_args, true);
    ablate->add_option("--knob", knob, "merge_tol, bits, or representative")->required();
    ablate->add_option("--grid", grid, "comma-separated settings (default: built-in grid)");

    CommonArgs attend_args;
    std::string q_path, k_path, v_path, method = "dense";
    auto* attend = app.add_subcommand("attend", "attention over QKV1 tensor files");
    add_common_flags(*attend, attend_args, true);
    attend->add_option("--q", q_path, "query tensor (QKV1)")->required();
    attend->add_option("--k", k_path, "key tensor (QKV1)")->required();
    attend->add_option("--v", v_path, "value tensor (QKV1)")->required();
    attend->add_option("--method", method, "dense, grouped, or annsa");

    std::uint64_t verify_seed = 0;
    bool disable_bias = false;
    auto* verify = app.add_subcommand("verify", "run the property self-checks");
    verify->add_option("--seed", verify_seed, "base seed for planted instances");
    verify->add_flag("--disable-multiplicity-bias", disable_bias)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitBadInput;
    }

    try {
        if (rollout->parsed()) return cmd_rollout(rollout_args, time_include_index);
        if (ablate->parsed()) return cmd_ablate(ablate_args, knob, grid);
        if (attend->parsed()) return cmd_attend(attend_args, q_path, k_path, v_path, method);
        if (verify->parsed()) return cmd_verify(verify_seed, disable_bias);
    } catch (const anncache::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const anncache::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const anncache::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const anncache::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const anncache::InvariantError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}
