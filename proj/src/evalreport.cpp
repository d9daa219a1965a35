#include "meta/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace meta {

NormalizedRecords normalize_returns(const std::vector<RunRecord>& records,
                                    const std::string& baseline_method) {
    std::map<std::string, std::pair<double, int>> baseline_sum; // env -> (sum, count)
    std::set<std::string> envs;
    for (const auto& r : records) {
        envs.insert(r.env_id);
        if (r.method == baseline_method) {
            baseline_sum[r.env_id].first += r.final_return;
            baseline_sum[r.env_id].second += 1;
        }
    }
    std::vector<std::string> missing;
    for (const auto& e : envs)
        if (!baseline_sum.count(e)) missing.push_back(e);
    if (!missing.empty()) {
        std::string msg = "normalize_returns: no baseline records for envs:";
        for (const auto& e : missing) msg += " " + e;
        throw std::invalid_argument(msg);
    }
    NormalizedRecords out;
    std::set<std::string> excluded;
    for (const auto& r : records) {
        const auto& [sum, count] = baseline_sum.at(r.env_id);
        const double mean = sum / count;
        if (mean == 0.0) {
            excluded.insert(r.env_id);
            continue;
        }
        RunRecord n = r;
        n.final_return = r.final_return / mean;
        out.records.push_back(n);
    }
    out.excluded_envs.assign(excluded.begin(), excluded.end());
    return out;
}

double iqm(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("iqm: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const double trim = 0.25 * n;
    const std::size_t g = static_cast<std::size_t>(std::floor(trim));
    const double frac = trim - g;
    double total = 0.0, weight = 0.0;
    for (std::size_t i = g; i < n - g; ++i) {
        double w = 1.0;
        if (i == g) w -= frac;
        if (i == n - 1 - g) w -= frac;
        total += w * values[i];
        weight += w;
    }
    return total / weight;
}

std::pair<double, double> stratified_bootstrap_ci(
    const std::map<std::string, std::vector<double>>& by_env, int n_boot,
    double confidence, RngStream& rng) {
    for (const auto& [env, vals] : by_env)
        if (vals.size() < 2)
            throw std::invalid_argument("stratified_bootstrap_ci: stratum '" + env +
                                        "' has fewer than 2 seeds");
    std::vector<double> boots(n_boot);
    std::vector<double> pooled;
    for (int b = 0; b < n_boot; ++b) {
        pooled.clear();
        for (const auto& [env, vals] : by_env) {
            for (std::size_t i = 0; i < vals.size(); ++i)
                pooled.push_back(vals[rng.uniform_int(vals.size())]);
        }
        boots[b] = iqm(pooled);
    }
    std::sort(boots.begin(), boots.end());
    const double alpha = (1.0 - confidence) / 2.0;
    auto pct = [&](double q) {
        const double pos = q * (n_boot - 1);
        const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min<std::size_t>(lo + 1, n_boot - 1);
        const double f = pos - lo;
        return boots[lo] * (1.0 - f) + boots[hi] * f;
    };
    return {pct(alpha), pct(1.0 - alpha)};
}

std::vector<MethodAggregate> aggregate_report(const std::vector<RunRecord>& records,
                                              const std::string& baseline_method,
                                              int n_boot, RngStream& rng) {
    NormalizedRecords norm = normalize_returns(records, baseline_method);
    // (method, tag) -> env -> scores
    std::map<std::pair<std::string, int>, std::map<std::string, std::vector<double>>> cells;
    std::map<std::pair<std::string, int>, std::pair<long, double>> costs;
    for (const auto& r : norm.records) {
        auto key = std::make_pair(r.method, static_cast<int>(r.tag));
        cells[key][r.env_id].push_back(r.final_return);
        costs[key].first += r.env_steps_consumed;
        costs[key].second += r.wall_time_s;
    }
    std::vector<MethodAggregate> out;
    for (const auto& [key, by_env] : cells) {
        MethodAggregate agg;
        agg.method = key.first;
        agg.tag = static_cast<DistTag>(key.second);
        std::vector<double> pooled;
        for (const auto& [env, vals] : by_env) {
            pooled.insert(pooled.end(), vals.begin(), vals.end());
            agg.n_records += static_cast<int>(vals.size());
        }
        agg.iqm = iqm(pooled);
        RngStream boot_rng = rng.substream(std::hash<std::string>{}(key.first) + key.second);
        auto [lo, hi] = stratified_bootstrap_ci(by_env, n_boot, 0.95, boot_rng);
        agg.ci_lo = lo;
        agg.ci_hi = hi;
        agg.total_samples = costs[key].first;
        agg.train_wall_s = costs[key].second;
        out.push_back(std::move(agg));
    }
    return out;
}

std::vector<CostRow> cost_accounting(const std::vector<RunRecord>& train_logs,
                                     const std::vector<RunRecord>& test_logs) {
    std::map<std::string, CostRow> rows;
    for (const auto& r : train_logs) {
        auto& row = rows[r.method];
        row.method = r.method;
        row.samples += r.env_steps_consumed;
        row.train_wall_s += r.wall_time_s;
    }
    for (const auto& r : test_logs) {
        auto& row = rows[r.method];
        row.method = r.method;
        row.test_wall_s += r.wall_time_s;
    }
    std::vector<CostRow> out;
    for (auto& [m, row] : rows) out.push_back(row);
    return out;
}

std::vector<SurfacePoint> drift_surface(const DriftFunction& d,
                                        const std::vector<double>& r_grid,
                                        const std::vector<double>& a_grid) {
    std::vector<SurfacePoint> out;
    out.reserve(r_grid.size() * a_grid.size());
    for (double a : a_grid) {
        for (double r : r_grid) {
            if (!(r > 0.0) || !std::isfinite(r) || !std::isfinite(a))
                throw std::invalid_argument("drift_surface: grids must be finite with r > 0");
            SurfacePoint p;
            p.r = r;
            p.advantage = a;
            p.drift = drift_eval(d, r, a);
            const double h = 1e-5;
            const double lo = std::max(r - h, 1e-12);
            p.ddrift_dr = (drift_eval(d, r + h, a) - drift_eval(d, lo, a)) / (r + h - lo);
            out.push_back(p);
        }
    }
    return out;
}

void save_records_csv(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_records_csv: cannot open " + path);
    os << "method,env_id,dist_tag,seed,final_return,env_steps,wall_time_s\n";
    os.precision(17);
    for (const auto& r : records)
        os << r.method << "," << r.env_id << ","
           << (r.tag == DistTag::InDist ? "in_dist" : "out_dist") << "," << r.seed << ","
           << r.final_return << "," << r.env_steps_consumed << "," << r.wall_time_s << "\n";
}

std::vector<RunRecord> load_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_records_csv: cannot open " + path);
    std::vector<RunRecord> out;
    std::string line;
    std::getline(is, line); // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        RunRecord r;
        std::string tag, field;
        std::getline(ls, r.method, ',');
        std::getline(ls, r.env_id, ',');
        std::getline(ls, tag, ',');
        r.tag = tag == "in_dist" ? DistTag::InDist : DistTag::OutDist;
        std::getline(ls, field, ',');
        r.seed = std::stoi(field);
        std::getline(ls, field, ',');
        r.final_return = std::stod(field);
        std::getline(ls, field, ',');
        r.env_steps_consumed = std::stol(field);
        std::getline(ls, field, ',');
        r.wall_time_s = std::stod(field);
        out.push_back(std::move(r));
    }
    return out;
}

void save_surface_csv(const std::vector<SurfacePoint>& surface, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_surface_csv: cannot open " + path);
    os << "r,advantage,drift,ddrift_dr\n";
    os.precision(17);
    for (const auto& p : surface)
        os << p.r << "," << p.advantage << "," << p.drift << "," << p.ddrift_dr << "\n";
}

} // namespace meta
