#pragma once

// Campaign configuration: a versioned JSON document holding the experiment,
// the named controllers, the methods to run and the output layout.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloopid/errors.hpp"
#include "cloopid/maglev.hpp"
#include "cloopid/optimize.hpp"
#include "cloopid/simulate.hpp"
#include "cloopid/spem.hpp"

namespace cloopid {

inline constexpr int kSchemaVersion = 1;

/// One method entry. `name` labels the output files; `controller` names the
/// virtual controller (spem) or the factored loop controller (dual_youla).
struct MethodSpec {
    Method method = Method::spem;
    std::string name;
    ParamKind param = ParamKind::blackbox4;
    std::string controller;
    int order = 7;  // dual_youla
    std::vector<int> orders;  // arx, armax
};

struct OmegaGrid {
    double lo = 1.0;
    double hi = 1e3;
    int points = 200;

    std::vector<double> values() const { return logspace(lo, hi, points); }
};

struct CampaignConfig {
    std::vector<double> theta;  // blackbox4 plant coefficients
    GrayBoxConstants graybox;
    std::map<std::string, TransferFunction> controllers;
    std::string loop_controller = "K";
    double sample_period = maglev::kSamplePeriod;
    double duration = 1.0;
    PulseReference pulse{};
    NoiseSpec noise{};
    std::vector<MethodSpec> methods;
    int runs = 100;
    std::uint64_t base_seed = 1;
    unsigned workers = 0;  // 0: hardware concurrency
    OmegaGrid omega_grid{};
    std::pair<double, double> error_band{1.0, 300.0};  // rad/s range of the Bode error metric
    OptimizerConfig optimizer{};
    std::string output_dir = "out";
    nlohmann::json source;  // the document as read, for campaign.meta

    TransferFunction plant() const { return TransferFunction({theta[0]}, {1.0, theta[1], theta[2], theta[3]}); }

    const TransferFunction& controller(const std::string& id) const
    {
        const auto it = controllers.find(id);
        if (it == controllers.end()) throw FormatError("unknown controller id '" + id + "'");
        return it->second;
    }

    ExperimentSpec experiment(std::uint64_t seed) const
    {
        ExperimentSpec spec;
        spec.plant = plant();
        spec.controller = controller(loop_controller);
        spec.reference = pulse;
        spec.duration = duration;
        spec.sample_period = sample_period;
        spec.noise = noise;
        spec.noise.seed = seed;
        return spec;
    }

    PlantParameterization parameterization(ParamKind kind) const { return {kind, graybox}; }
};

namespace detail {

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback)
{
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline TransferFunction controller_from_json(const nlohmann::json& j)
{
    if (j.contains("zpk")) {
        const auto& z = j.at("zpk");
        auto roots_of = [](const nlohmann::json& list) {
            std::vector<Complex> out;
            for (const auto& r : list) {
                if (r.is_number()) out.emplace_back(r.get<double>(), 0.0);
                else out.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
            }
            return out;
        };
        return from_zpk(roots_of(z.at("zeros")), roots_of(z.at("poles")), z.at("gain").get<double>());
    }
    if (j.contains("pid")) {
        const auto& p = j.at("pid");
        return maglev::pid_controller({p.at("kp").get<double>(), p.at("ti").get<double>(), p.at("td").get<double>(),
                                       p.at("tau").get<double>()});
    }
    if (j.contains("tf")) return TransferFunction(j.at("tf").at("num").get<Poly>(), j.at("tf").at("den").get<Poly>());
    throw FormatError("controller needs one of zpk, pid, tf");
}

inline Method method_from_string(const std::string& s)
{
    if (s == "spem") return Method::spem;
    if (s == "dual_youla") return Method::dual_youla;
    if (s == "arx") return Method::arx;
    if (s == "armax") return Method::armax;
    throw FormatError("unknown method '" + s + "'");
}

inline ParamKind param_from_string(const std::string& s)
{
    if (s == "blackbox4") return ParamKind::blackbox4;
    if (s == "graybox2") return ParamKind::graybox2;
    throw FormatError("unknown parameterization '" + s + "'");
}

inline std::vector<int> orders_from_json(const nlohmann::json& j)
{
    // [lo, hi] as an object, or an explicit list.
    if (j.is_object()) {
        std::vector<int> out;
        for (int n = j.at("lo").get<int>(); n <= j.at("hi").get<int>(); ++n) out.push_back(n);
        return out;
    }
    return j.get<std::vector<int>>();
}

inline MethodSpec method_from_json(const nlohmann::json& j, const std::string& loop_controller)
{
    MethodSpec m;
    m.method = method_from_string(j.at("method").get<std::string>());
    m.controller = get_or<std::string>(j, "controller", loop_controller);
    switch (m.method) {
    case Method::spem:
        m.param = param_from_string(get_or<std::string>(j, "param", "blackbox4"));
        m.name = "spem_" + to_string(m.param) + "_" + m.controller;
        break;
    case Method::dual_youla:
        m.order = get_or<int>(j, "order", 7);
        m.name = "dual_youla_" + std::to_string(m.order);
        break;
    case Method::arx:
    case Method::armax:
        m.orders = j.contains("orders") ? orders_from_json(j.at("orders")) : std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        m.name = to_string(m.method);
        break;
    }
    m.name = get_or<std::string>(j, "name", m.name);
    if (m.name.empty() || m.name.find_first_of("/\\ ,") != std::string::npos)
        throw FormatError("method name '" + m.name + "' is not usable in a file name");
    if ((m.method == Method::arx || m.method == Method::armax) && m.orders.empty()) throw FormatError("empty order range");
    for (int n : m.orders)
        if (n < 1) throw FormatError("orders must be >= 1");
    if (m.method == Method::dual_youla && m.order < 1) throw FormatError("dual_youla order must be >= 1");
    return m;
}

} // namespace detail

/// Parses and validates a campaign document. Every error is a FormatError.
inline CampaignConfig parse_config(const nlohmann::json& j)
{
    try {
        if (!j.is_object()) throw FormatError("config must be a JSON object");
        if (j.value("schema_version", 0) != kSchemaVersion)
            throw FormatError("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
        CampaignConfig c;
        c.source = j;

        const auto& plant = j.at("plant");
        c.theta = plant.at("theta").get<std::vector<double>>();
        if (c.theta.size() != 4) throw FormatError("plant.theta needs 4 entries");
        if (plant.contains("graybox")) {
            const auto& g = plant.at("graybox");
            c.graybox = {g.at("resistance").get<double>(), g.at("inductance").get<double>(), g.at("mass").get<double>()};
        }
        for (const auto& [id, spec] : j.at("controllers").items()) c.controllers.emplace(id, detail::controller_from_json(spec));

        const auto& e = j.at("experiment");
        c.loop_controller = detail::get_or<std::string>(e, "controller", "K");
        c.sample_period = detail::get_or(e, "sample_period", c.sample_period);
        c.duration = detail::get_or(e, "duration", c.duration);
        if (e.contains("pulse")) {
            const auto& p = e.at("pulse");
            c.pulse = {detail::get_or(p, "start", 0.05), p.at("width").get<double>(), p.at("height").get<double>()};
        }
        if (e.contains("noise")) {
            const auto& n = e.at("noise");
            c.noise.sigma_w = n.at("sigma_w").get<double>();
            c.noise.sigma_xi = n.at("sigma_xi").get<double>();
        }
        c.noise.seed = detail::get_or<std::uint64_t>(j, "base_seed", 1);
        c.base_seed = c.noise.seed;
        (void)c.controller(c.loop_controller);

        for (const auto& m : j.at("methods")) c.methods.push_back(detail::method_from_json(m, c.loop_controller));
        for (const auto& m : c.methods) (void)c.controller(m.controller);
        for (std::size_t i = 0; i < c.methods.size(); ++i)
            for (std::size_t k = 0; k < i; ++k)
                if (c.methods[i].name == c.methods[k].name) throw FormatError("duplicate method name '" + c.methods[i].name + "'");

        c.runs = detail::get_or(j, "runs", c.runs);
        c.workers = detail::get_or(j, "workers", c.workers);
        if (c.runs < 1) throw FormatError("runs must be >= 1");
        if (j.contains("omega_grid")) {
            const auto& g = j.at("omega_grid");
            c.omega_grid = {g.at("lo").get<double>(), g.at("hi").get<double>(), g.at("points").get<int>()};
        }
        if (!(c.omega_grid.lo > 0.0 && c.omega_grid.hi > c.omega_grid.lo && c.omega_grid.points >= 2))
            throw FormatError("omega_grid needs 0 < lo < hi and points >= 2");
        if (j.contains("error_band")) {
            const auto band = j.at("error_band").get<std::vector<double>>();
            if (band.size() != 2 || !(band[0] > 0.0 && band[1] > band[0])) throw FormatError("error_band needs [lo, hi]");
            c.error_band = {band[0], band[1]};
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            auto& opt = c.optimizer;
            opt.swarm_size = detail::get_or<std::size_t>(o, "swarm_size", 0);
            opt.max_iterations = detail::get_or<std::size_t>(o, "max_iterations", 0);
            opt.inertia = detail::get_or(o, "inertia", opt.inertia);
            opt.cognitive = detail::get_or(o, "cognitive", opt.cognitive);
            opt.social = detail::get_or(o, "social", opt.social);
            opt.stall_iterations = detail::get_or<std::size_t>(o, "stall_iterations", opt.stall_iterations);
            opt.stall_tolerance = detail::get_or(o, "stall_tolerance", opt.stall_tolerance);
            if (o.contains("polish")) {
                if (o.at("polish").is_null()) {
                    opt.polish.reset();
                } else {
                    NelderMeadOptions nm;
                    nm.max_evals = detail::get_or<std::size_t>(o.at("polish"), "max_evals", nm.max_evals);
                    nm.tol = detail::get_or(o.at("polish"), "tol", nm.tol);
                    opt.polish = nm;
                }
            }
        }
        c.output_dir = detail::get_or<std::string>(j, "output_dir", c.output_dir);
        if (!(c.sample_period > 0.0) || !(c.duration >= c.sample_period)) throw FormatError("experiment needs 0 < sample_period <= duration");
        if (!(c.pulse.start >= 0.0 && c.pulse.width > 0.0 && c.pulse.start + c.pulse.width <= c.duration + 1e-12))
            throw FormatError("pulse must lie inside the record");
        if (!(c.noise.sigma_w >= 0.0 && c.noise.sigma_xi >= 0.0)) throw FormatError("noise scales must be >= 0");
        return c;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& ex) {
        throw FormatError(std::string("config: ") + ex.what());
    }
}

inline CampaignConfig read_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("config " + path.string() + ": " + ex.what());
    }
    // A campaign.meta file carries its effective config.
    if (j.is_object() && j.contains("campaign_meta")) return parse_config(j.at("config"));
    return parse_config(j);
}

} // namespace cloopid
