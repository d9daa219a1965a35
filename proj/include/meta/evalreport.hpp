#pragma once

#include <map>
#include <string>
#include <vector>

#include "meta/drift.hpp"
#include "meta/rng.hpp"

namespace meta {

enum class DistTag { InDist, OutDist };

struct RunRecord {
    std::string method;        // blackbox_es, distill_same, ... handcrafted_baseline
    std::string env_id;
    DistTag tag = DistTag::InDist;
    int seed = 0;
    double final_return = 0.0;
    long env_steps_consumed = 0;
    double wall_time_s = 0.0;
};

// Divide every return by the baseline method's mean return in the same
// environment; environments whose baseline mean is 0 are dropped and listed
// in `excluded_envs`.
struct NormalizedRecords {
    std::vector<RunRecord> records; // final_return replaced by normalized score
    std::vector<std::string> excluded_envs;
};

NormalizedRecords normalize_returns(const std::vector<RunRecord>& records,
                                    const std::string& baseline_method);

// Interquartile mean: mean of the middle 50%, fractional trimming at exactly
// 25% per side for n not divisible by 4.
double iqm(std::vector<double> values);

// Percentile bootstrap of the pooled IQM, resampling seeds within each
// stratum (environment).
std::pair<double, double> stratified_bootstrap_ci(
    const std::map<std::string, std::vector<double>>& by_env, int n_boot,
    double confidence, RngStream& rng);

struct MethodAggregate {
    std::string method;
    DistTag tag = DistTag::InDist;
    double iqm = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    long total_samples = 0;
    double train_wall_s = 0.0;
    int n_records = 0;
};

std::vector<MethodAggregate> aggregate_report(const std::vector<RunRecord>& records,
                                              const std::string& baseline_method,
                                              int n_boot, RngStream& rng);

struct CostRow {
    std::string method;
    long samples = 0;
    double train_wall_s = 0.0;
    double test_wall_s = 0.0;
};

std::vector<CostRow> cost_accounting(const std::vector<RunRecord>& train_logs,
                                     const std::vector<RunRecord>& test_logs);

struct SurfacePoint {
    double r = 0.0, advantage = 0.0, drift = 0.0, ddrift_dr = 0.0;
};

std::vector<SurfacePoint> drift_surface(const DriftFunction& d,
                                        const std::vector<double>& r_grid,
                                        const std::vector<double>& a_grid);

// CSV round trip for run records (columns documented in the README).
void save_records_csv(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> load_records_csv(const std::string& path);
void save_surface_csv(const std::vector<SurfacePoint>& surface, const std::string& path);

} // namespace meta
