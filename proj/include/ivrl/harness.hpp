#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ivrl/learner.hpp"

namespace ivrl {

// Full description of a deterministic run. Parsed from key-path = value
// text and/or CLI flags; unknown keys are rejected.
struct RunConfig {
    // environment
    std::string env = "kidney";  // kidney | tabular:<json path> | tabular-random
    int tab_n_s = 3, tab_n_u = 2, tab_k = 3;
    double gamma = 0.9;

    // data
    int n = 200;
    int t_len = 100;
    std::uint64_t seed = 1;

    // features
    int degree = 4;
    bool standardize = true;  // kidney conditioning; ignored for tabular envs

    // nuisance
    std::string nuisance = "oracle";  // oracle | fitted | fitted-conf-set
    double c_cfg = 1.0;
    int n_cand = 20;
    double conf_delta = 0.05;
    double floor_theta = 1e-3;
    double floor_delta = 1e-3;
    double theta_max = 10.0;

    // learner
    std::string method = "pess_IV";
    double alpha_vf = -1.0;   // < 0 requests bootstrap calibration
    double alpha_mis = -1.0;
    int n_noise = 10;
    double noise_sd = 0.1;
    double w_box = 1.0;
    int zo_iterations = 200;
    int zo_perturbations = 8;
    double zo_smoothing = 0.1;
    double zo_step0 = 1.0;

    // evaluation
    int eval_rollouts = 2000;
    int eval_horizon = 0;  // 0 = choose from the discount tail bound

    // benchmark / figure
    int n_seeds = 5;
    int threads = 1;
    bool deterministic_runtime = true;  // zero the runtime column in results.csv
    bool svg = false;

    std::string out_dir;

    std::map<std::string, std::string> as_map() const;
};

RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig parse_config_file(const std::string& path, RunConfig base = {});
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

struct ResultRow {
    std::string method;
    std::uint64_t seed = 0;
    double j_mean = 0.0;
    double j_se = 0.0;
    double runtime_s = 0.0;
};

struct Interval {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

// mean +/- t-quantile * sd / sqrt(n) over seeds; throws below two values
Interval confidence_interval(const std::vector<double>& values, double level = 0.95);

inline const std::vector<std::string> kFigureMethods = {"pess_IV", "no_pess_IV", "pess_no_IV",
                                                        "no_pess_no_IV"};
inline const std::vector<std::string> kAllMethods = {
    "pess_IV", "no_pess_IV", "pess_no_IV", "no_pess_no_IV", "vf_dual", "mis_dual", "dr_dual"};

// one learned-and-evaluated cell of a benchmark sweep
struct CellResult {
    ResultRow row;
    LearnResult learned;
};

CellResult run_method_cell(const RunConfig& cfg, const std::string& method, std::uint64_t seed);

// the method's estimator applied to a fixed policy on the cell's dataset
double estimate_policy_value(const RunConfig& cfg, const std::string& method, std::uint64_t seed,
                             const Policy& pi);

// true value of the behavior process under the configured environment
ResultRow behavior_cell(const RunConfig& cfg, std::uint64_t seed);

struct BenchmarkOutput {
    std::vector<ResultRow> rows;
    std::map<std::string, Interval> intervals;
    std::string run_dir;
};

BenchmarkOutput run_benchmark(const RunConfig& cfg, const std::vector<std::string>& methods,
                              const std::string& run_name);

// directory plumbing and artifact writers
std::string output_root();
std::string make_run_dir(const std::string& root, const std::string& name);
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows,
                       bool deterministic_runtime);
void write_timings_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_plot_data_csv(const std::string& path, const std::map<std::string, Interval>& intervals);
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);
void write_svg_chart(const std::string& path, const std::map<std::string, Interval>& intervals);
void write_config_snapshot(const std::string& path, const std::string& original_text,
                           const RunConfig& cfg);

// tabular environment (de)serialization
TabularConfoundedMDP load_tabular_json(const std::string& path);
void save_tabular_json(const TabularConfoundedMDP& env, const std::string& path);

}  // namespace ivrl
