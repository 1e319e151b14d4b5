#pragma once

// Monte-Carlo campaigns: one dataset per seed, every configured method on
// each, and the CSV tables written from the joined results.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <thread>

#include "cloopid/config.hpp"
#include "cloopid/coprime.hpp"
#include "cloopid/direct.hpp"
#include "cloopid/spem.hpp"

namespace cloopid {

// ---------------------------------------------------------------------------
// Plain CSV tables

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const CsvTable&) const = default;
};

inline void write_csv_table(std::ostream& out, const CsvTable& table)
{
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(table.header);
    for (const auto& r : table.rows) line(r);
}

inline void write_csv_table(const std::filesystem::path& path, const CsvTable& table)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_csv_table(out, table);
}

/// Cells hold no commas or quotes; every row must match the header width.
inline CsvTable read_csv_table(std::istream& in)
{
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = s.find(',', start);
            cells.push_back(s.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return cells;
    };
    if (!std::getline(in, line) || line.empty()) throw FormatError("csv: missing header");
    t.header = split(line);
    while (std::getline(in, line)) {
        auto cells = split(line);
        if (cells.size() != t.header.size()) throw FormatError("csv: row width differs from header");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline CsvTable read_csv_table(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_csv_table(in);
}

/// Empty cell for a missing value, %.17g otherwise.
inline std::string format_cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

inline double parse_cell(const std::string& s)
{
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    // strtod rather than stod: stod rejects subnormals, which format_cell can write.
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || std::isspace(static_cast<unsigned char>(s.front()))) throw FormatError("csv: bad number '" + s + "'");
    return v;
}

// ---------------------------------------------------------------------------
// Statistics and the Bode error metric

/// Linear-interpolation quantile (Hyndman-Fan type 7) of a non-empty sample.
inline double quantile(std::vector<double> v, double p)
{
    if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

/// Median over grid points in [band.first, band.second] of |log10|G| - log10|P||.
inline double bode_log_error(const std::vector<Complex>& model, const std::vector<Complex>& truth,
                             const std::vector<double>& grid, std::pair<double, double> band)
{
    std::vector<double> e;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid[i] >= band.first && grid[i] <= band.second)
            e.push_back(std::abs(std::log10(std::abs(model[i])) - std::log10(std::abs(truth[i]))));
    if (e.empty()) throw std::invalid_argument("no grid point inside the error band");
    return median(std::move(e));
}

// ---------------------------------------------------------------------------
// One method on one dataset

/// Parameter columns of a method's theta table.
inline std::vector<std::string> parameter_names(const MethodSpec& m)
{
    std::vector<std::string> out;
    auto numbered = [&](const std::string& prefix, int from, int to) {
        for (int i = from; i <= to; ++i) out.push_back(prefix + std::to_string(i));
    };
    switch (m.method) {
    case Method::spem:
        if (m.param == ParamKind::graybox2) out = {"K_i", "K_x"};
        numbered("theta", 1, 4);
        break;
    case Method::dual_youla:
        numbered("q_a", 1, m.order);
        numbered("q_b", 0, m.order);
        break;
    case Method::arx:
    case Method::armax: {
        const int top = *std::max_element(m.orders.begin(), m.orders.end());
        numbered("a", 1, top);
        numbered("b", 1, top);
        if (m.method == Method::armax) numbered("c", 1, top);
        break;
    }
    }
    return out;
}

struct MethodOutcome {
    std::string status = "ok";
    std::vector<double> values;  // parameter_names order, NaN where absent
    double cost = std::numeric_limits<double>::quiet_NaN();
    std::size_t evaluations = 0;
    std::vector<double> trace;
    int selected_order = 0;
    std::vector<AicEntry> aic;
    std::vector<Complex> response;  // on the omega grid
    double bode_error = std::numeric_limits<double>::quiet_NaN();
    std::vector<Complex> poles;  // of the identified plant model

    bool ok() const { return status == "ok"; }
};

/// Failure tag written into output rows.
inline std::string failure_tag(const std::exception& ex)
{
    if (dynamic_cast<const UnstableLoopError*>(&ex)) return "unstable_loop";
    if (dynamic_cast<const NoStableCandidateError*>(&ex)) return "no_stable_candidate";
    if (dynamic_cast<const RankDeficientError*>(&ex)) return "rank_deficient";
    return "error";
}

/// Discrete roots reported as log(z)/T_s so every method's poles compare with the continuous plant.
inline std::vector<Complex> continuous_equivalent(std::vector<Complex> r, const TimeDomain& domain)
{
    if (!domain.is_discrete()) return r;
    for (Complex& z : r) z = std::log(z) / domain.sample_period();
    return r;
}

/// Runs one method; errors propagate. `seed` drives the optimizer.
inline MethodOutcome identify_method(const CampaignConfig& cfg, const MethodSpec& m, const Dataset& data,
                                     std::uint64_t seed)
{
    const std::vector<double> grid = cfg.omega_grid.values();
    MethodOutcome out;
    OptimizerConfig opt = cfg.optimizer;
    opt.seed = seed;
    opt.workers = 1;
    const auto names = parameter_names(m);
    out.values.assign(names.size(), std::numeric_limits<double>::quiet_NaN());

    switch (m.method) {
    case Method::spem: {
        const PlantParameterization param = cfg.parameterization(m.param);
        const EstimationResult res = identify_spem(param, cfg.controller(m.controller), data, opt);
        const Eigen::Vector4d theta = param.expand(res.theta_hat);
        std::size_t col = 0;
        if (m.param == ParamKind::graybox2)
            for (Eigen::Index i = 0; i < res.theta_hat.size(); ++i) out.values[col++] = res.theta_hat(i);
        for (int i = 0; i < 4; ++i) out.values[col++] = theta(i);
        out.cost = res.cost;
        out.evaluations = res.evaluations;
        out.trace = res.trace;
        const TransferFunction p = param.plant(res.theta_hat);
        out.response = freq_response(p, grid).value;
        out.poles = poles(tf_to_ss(p));
        break;
    }
    case Method::dual_youla: {
        const CoprimeFactors factors = doubly_coprime_factorize(cfg.controller(m.controller));
        const QFit fit = identify_q(youla_signals(data, factors), m.order, opt);
        for (int i = 0; i < m.order; ++i) out.values[static_cast<std::size_t>(i)] = fit.model.den[static_cast<std::size_t>(i + 1)];
        for (int i = 0; i <= m.order; ++i)
            out.values[static_cast<std::size_t>(m.order + i)] = fit.model.num[static_cast<std::size_t>(i)];
        out.cost = fit.result.cost;
        out.evaluations = fit.result.evaluations;
        out.trace = fit.result.trace;
        const StateSpace p = recover_plant_realization(fit.model.realization(), factors);
        out.response = freq_response(p, grid).value;
        out.poles = continuous_equivalent(uncancelled_roots(p).poles, p.domain);
        break;
    }
    case Method::arx:
    case Method::armax: {
        const auto kind = m.method == Method::arx ? ModelKind::arx : ModelKind::armax;
        const OrderSelection sel = select_order_aic(data, kind, m.orders);
        const int top = *std::max_element(m.orders.begin(), m.orders.end());
        const auto& model = sel.best.model;
        for (int i = 0; i < model.order(); ++i) {
            const auto k = static_cast<std::size_t>(i);
            out.values[k] = model.a[k];
            out.values[static_cast<std::size_t>(top) + k] = model.b[k];
            if (kind == ModelKind::armax) out.values[2 * static_cast<std::size_t>(top) + k] = model.c[k];
        }
        out.cost = sel.best.loss;
        out.selected_order = sel.best_order;
        out.aic = sel.table;
        out.trace = sel.best.loss_trace;
        const TransferFunction tf = polynomial_to_tf(model);
        out.response = freq_response(tf, grid).value;
        out.poles = continuous_equivalent(roots(tf.den()), tf.domain());
        break;
    }
    }
    out.bode_error = bode_log_error(out.response, freq_response(cfg.plant(), grid).value, grid, cfg.error_band);
    return out;
}

// ---------------------------------------------------------------------------
// Campaigns

struct RunRecord {
    std::uint64_t seed = 0;
    std::vector<MethodOutcome> methods;  // config order

    bool ok() const
    {
        return std::all_of(methods.begin(), methods.end(), [](const MethodOutcome& m) { return m.ok(); });
    }
};

struct CampaignResult {
    std::vector<RunRecord> runs;

    std::size_t successes() const
    {
        return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const RunRecord& r) { return r.ok(); }));
    }

    /// A campaign passes when at least 90% of its runs succeed for every method.
    bool passed() const { return 10 * successes() >= 9 * runs.size(); }
};

inline RunRecord run_one(const CampaignConfig& cfg, std::uint64_t seed)
{
    RunRecord rec;
    rec.seed = seed;
    std::optional<Dataset> data;
    std::string data_failure;
    try {
        data = simulate_closed_loop(cfg.experiment(seed));
    } catch (const std::exception& ex) {
        data_failure = failure_tag(ex);
    }
    for (const MethodSpec& m : cfg.methods) {
        MethodOutcome out;
        if (!data) {
            out.status = data_failure;
        } else {
            try {
                out = identify_method(cfg, m, *data, seed);
            } catch (const std::exception& ex) {
                out = MethodOutcome{};
                out.status = failure_tag(ex);
            }
        }
        if (!out.ok()) out.values.assign(parameter_names(m).size(), std::numeric_limits<double>::quiet_NaN());
        rec.methods.push_back(std::move(out));
    }
    return rec;
}

/// Runs base_seed + i for i < runs on a worker pool. Results are stored by
/// run index, so they do not depend on the worker count.
inline CampaignResult run_campaign(const CampaignConfig& cfg)
{
    CampaignResult result;
    const auto runs = static_cast<std::size_t>(cfg.runs);
    result.runs.resize(runs);
    unsigned workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, runs));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < runs; i = next++) result.runs[i] = run_one(cfg, cfg.base_seed + i);
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Output tables

inline CsvTable theta_table(const CampaignResult& res, std::size_t method, const MethodSpec& m)
{
    CsvTable t;
    t.header = {"run", "seed", "status"};
    for (const auto& n : parameter_names(m)) t.header.push_back(n);
    t.header.push_back("cost");
    for (std::size_t r = 0; r < res.runs.size(); ++r) {
        const auto& o = res.runs[r].methods[method];
        std::vector<std::string> row{std::to_string(r), std::to_string(res.runs[r].seed), o.status};
        for (double v : o.values) row.push_back(format_cell(v));
        row.push_back(format_cell(o.cost));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline double phase_degrees(const Complex& z) { return std::arg(z) * 180.0 / std::numbers::pi; }

inline CsvTable bode_table(const CampaignResult& res, std::size_t method, const std::vector<double>& grid)
{
    CsvTable t;
    t.header = {"run", "seed", "status", "bode_error"};
    for (double w : grid) t.header.push_back("mag@" + format_double(w));
    for (double w : grid) t.header.push_back("phase_deg@" + format_double(w));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t r = 0; r < res.runs.size(); ++r) {
        const auto& o = res.runs[r].methods[method];
        std::vector<std::string> row{std::to_string(r), std::to_string(res.runs[r].seed), o.status, format_cell(o.bode_error)};
        for (std::size_t i = 0; i < grid.size(); ++i) row.push_back(format_cell(o.ok() ? std::abs(o.response[i]) : nan));
        for (std::size_t i = 0; i < grid.size(); ++i) row.push_back(format_cell(o.ok() ? phase_degrees(o.response[i]) : nan));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline CsvTable orders_table(const CampaignResult& res, std::size_t method, const MethodSpec& m)
{
    CsvTable t;
    t.header = {"run", "seed", "status", "selected_order"};
    for (int n : m.orders) t.header.push_back("aic_n" + std::to_string(n));
    for (std::size_t r = 0; r < res.runs.size(); ++r) {
        const auto& o = res.runs[r].methods[method];
        std::vector<std::string> row{std::to_string(r), std::to_string(res.runs[r].seed), o.status,
                                     o.ok() ? std::to_string(o.selected_order) : std::string()};
        for (std::size_t i = 0; i < m.orders.size(); ++i) row.push_back(o.ok() ? format_cell(o.aic[i].aic) : std::string());
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Box-plot numbers per method and quantity over the successful runs. spem
/// rows cover its parameters; every method adds cost and bode_error, and the
/// polynomial methods add the selected order.
inline CsvTable summary_table(const CampaignResult& res, const CampaignConfig& cfg)
{
    CsvTable t;
    t.header = {"method", "quantity", "count", "min", "q1", "median", "q3", "max"};
    auto add = [&](const std::string& method, const std::string& quantity, std::vector<double> v) {
        std::vector<std::string> row{method, quantity, std::to_string(v.size())};
        for (double p : {0.0, 0.25, 0.5, 0.75, 1.0})
            row.push_back(v.empty() ? std::string() : format_double(quantile(v, p)));
        t.rows.push_back(std::move(row));
    };
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const MethodSpec& m = cfg.methods[k];
        auto collect = [&](auto get) {
            std::vector<double> v;
            for (const auto& run : res.runs)
                if (run.methods[k].ok()) v.push_back(get(run.methods[k]));
            return v;
        };
        if (m.method == Method::spem) {
            const auto names = parameter_names(m);
            for (std::size_t i = 0; i < names.size(); ++i) add(m.name, names[i], collect([&](const MethodOutcome& o) { return o.values[i]; }));
        }
        if (m.method == Method::arx || m.method == Method::armax)
            add(m.name, "selected_order", collect([](const MethodOutcome& o) { return static_cast<double>(o.selected_order); }));
        add(m.name, "cost", collect([](const MethodOutcome& o) { return o.cost; }));
        add(m.name, "bode_error", collect([](const MethodOutcome& o) { return o.bode_error; }));
    }
    return t;
}

/// The effective config and the seeds, enough to rerun the campaign into any
/// directory.
inline nlohmann::json campaign_meta(const CampaignResult& res, const CampaignConfig& cfg)
{
    nlohmann::json meta;
    meta["campaign_meta"] = 1;
    // The output location is not part of the result.
    meta["config"] = cfg.source;
    meta["config"].erase("output_dir");
    std::vector<std::uint64_t> seeds;
    for (const auto& r : res.runs) seeds.push_back(r.seed);
    meta["seeds"] = seeds;
    meta["successes"] = res.successes();
    meta["runs"] = res.runs.size();
    return meta;
}

/// Writes every campaign file into `dir` (created if missing).
inline void write_campaign(const CampaignResult& res, const CampaignConfig& cfg, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const auto grid = cfg.omega_grid.values();
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const MethodSpec& m = cfg.methods[k];
        write_csv_table(dir / ("theta_" + m.name + ".csv"), theta_table(res, k, m));
        write_csv_table(dir / ("bode_" + m.name + ".csv"), bode_table(res, k, grid));
        if (m.method == Method::arx || m.method == Method::armax)
            write_csv_table(dir / ("orders_" + m.name + ".csv"), orders_table(res, k, m));
    }
    write_csv_table(dir / "summary.csv", summary_table(res, cfg));
    std::ofstream meta(dir / "campaign.meta", std::ios::binary);
    meta << campaign_meta(res, cfg).dump(2) << '\n';
}

} // namespace cloopid
