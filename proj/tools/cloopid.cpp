// cloopid: dataset generation, single identification runs, Monte-Carlo
// campaigns and frequency-response grids.
//
// Exit codes: 0 success, 1 unexpected error, 2 bad config or arguments,
// 3 unstable loop, 4 no stable candidate, 5 rank deficiency,
// 6 fewer than 90% of campaign runs succeeded.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "cloopid/campaign.hpp"

using namespace cloopid;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
    kOk = 0,
    kUnexpected = 1,
    kConfig = 2,
    kUnstable = 3,
    kNoStableCandidate = 4,
    kRankDeficient = 5,
    kCampaignFailed = 6,
};

struct Common {
    std::string config = "configs/maglev.json";
    std::string out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, Common& c, const char* method_help)
{
    cmd->add_option("--config", c.config, "campaign config (JSON) or campaign.meta")->capture_default_str();
    cmd->add_option("--out", c.out, "output directory (default: the config's output_dir)");
    cmd->add_option("--seed", c.seed, "noise seed of the dataset, or base seed of a campaign");
    cmd->add_option("--method", c.methods, method_help);
}

/// Reads the config and applies --seed, --out and --method at document level,
/// so campaign.meta records the effective settings.
CampaignConfig load(const Common& c, bool filter_methods)
{
    std::ifstream in(c.config);
    if (!in) throw FormatError("cannot open config " + c.config);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError("config " + c.config + ": " + ex.what());
    }
    if (j.is_object() && j.contains("campaign_meta")) j = j.at("config");
    if (c.seed) j["base_seed"] = *c.seed;
    if (!c.out.empty()) j["output_dir"] = c.out;
    if (filter_methods && !c.methods.empty()) {
        // Match on the method name or on its tag.
        const CampaignConfig full = parse_config(j);
        nlohmann::json kept = nlohmann::json::array();
        for (std::size_t i = 0; i < full.methods.size(); ++i) {
            const auto& m = full.methods[i];
            for (const auto& want : c.methods)
                if (want == m.name || want == to_string(m.method)) {
                    kept.push_back(j.at("methods").at(i));
                    break;
                }
        }
        if (kept.empty()) throw FormatError("--method matches no configured method");
        j["methods"] = kept;
    }
    return parse_config(j);
}

std::string join(const std::vector<Complex>& zs)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < zs.size(); ++i) {
        os << (i ? ", " : "") << format_double(zs[i].real());
        if (zs[i].imag() != 0.0) os << (zs[i].imag() > 0 ? "+" : "-") << format_double(std::abs(zs[i].imag())) << "j";
    }
    return os.str();
}

int cmd_simulate(const Common& c)
{
    const CampaignConfig cfg = load(c, false);
    const ExperimentSpec spec = cfg.experiment(cfg.base_seed);
    const StateSpace loop = closed_loop_realization(spec.plant, spec.controller, spec.noise.sigma_w, spec.noise.sigma_xi);
    std::cout << "closed-loop poles: " << join(poles(loop)) << "\n";
    std::cout << "stability margin (max real part): " << format_double(stability_margin(loop)) << "\n";
    const Dataset d = simulate_closed_loop(spec);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    write_dataset_csv((dir / "dataset.csv").string(), d);
    std::cout << "wrote " << (dir / "dataset.csv").string() << " (" << d.size() << " samples, seed " << cfg.base_seed << ")\n";
    return kOk;
}

/// Whether the identified model sits in a stable loop with the config's loop
/// controller; discrete models meet the ZOH-discretized controller.
bool stable_under_loop_controller(const CampaignConfig& cfg, const MethodSpec& m, const MethodOutcome& out)
{
    const StateSpace k = tf_to_ss(cfg.controller(cfg.loop_controller));
    if (m.method == Method::spem) {
        const PlantParameterization param = cfg.parameterization(m.param);
        const VectorXd theta = m.param == ParamKind::graybox2 ? VectorXd(Eigen::Vector2d(out.values[0], out.values[1]))
                                                              : VectorXd(Eigen::Vector4d(out.values[0], out.values[1], out.values[2], out.values[3]));
        return stability_margin(feedback(tf_to_ss(param.plant(theta)), k)) < -kStabilityTolerance;
    }
    // Plants from dual_youla are stabilized by K by construction; check the
    // polynomial models against the sampled controller.
    if (m.method == Method::dual_youla) return true;
    const int top = *std::max_element(m.orders.begin(), m.orders.end());
    PolynomialModel model;
    model.kind = m.method == Method::arx ? ModelKind::arx : ModelKind::armax;
    model.sample_period = cfg.sample_period;
    for (int i = 0; i < out.selected_order; ++i) {
        model.a.push_back(out.values[static_cast<std::size_t>(i)]);
        model.b.push_back(out.values[static_cast<std::size_t>(top + i)]);
        if (model.kind == ModelKind::armax) model.c.push_back(out.values[static_cast<std::size_t>(2 * top + i)]);
    }
    const StateSpace kd = discretize(k, cfg.sample_period, Hold::zoh);
    return stability_margin(feedback(tf_to_ss(polynomial_to_tf(model)), kd)) < 0.0;
}

int cmd_identify(const Common& c, const std::string& data_path)
{
    if (c.methods.size() != 1) throw FormatError("identify needs exactly one --method");
    const CampaignConfig cfg = load(c, true);
    const MethodSpec& m = cfg.methods.front();
    const Dataset data = data_path.empty() ? simulate_closed_loop(cfg.experiment(cfg.base_seed)) : read_dataset_csv(data_path);
    const MethodOutcome out = identify_method(cfg, m, data, cfg.base_seed);

    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    nlohmann::json rec;
    rec["method"] = to_string(m.method);
    rec["name"] = m.name;
    rec["dataset"] = data_path.empty() ? "simulated" : data_path;
    rec["seed"] = cfg.base_seed;
    const auto names = parameter_names(m);
    nlohmann::json params = nlohmann::json::object();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (!std::isnan(out.values[i])) params[names[i]] = out.values[i];
    rec["parameters"] = params;
    rec["cost"] = out.cost;
    rec["evaluations"] = out.evaluations;
    if (out.selected_order) rec["selected_order"] = out.selected_order;
    rec["bode_error"] = out.bode_error;
    std::ofstream(dir / ("identify_" + m.name + ".json"), std::ios::binary) << rec.dump(2) << '\n';
    CsvTable trace{{"iteration", "cost"}, {}};
    for (std::size_t i = 0; i < out.trace.size(); ++i) trace.rows.push_back({std::to_string(i), format_double(out.trace[i])});
    write_csv_table(dir / ("trace_" + m.name + ".csv"), trace);

    std::cout << "method " << m.name << "\n";
    for (std::size_t i = 0; i < names.size(); ++i)
        if (!std::isnan(out.values[i])) std::cout << "  " << names[i] << " = " << format_double(out.values[i]) << "\n";
    if (out.selected_order) std::cout << "  selected order (AIC) = " << out.selected_order << "\n";
    std::cout << "cost " << format_double(out.cost) << "\n";
    std::cout << "model poles: " << join(out.poles) << "\n";
    std::cout << "closed loop with " << cfg.loop_controller << ": "
              << (stable_under_loop_controller(cfg, m, out) ? "stable" : "unstable") << "\n";
    std::cout << "median Bode magnitude error (log10) on [" << format_double(cfg.error_band.first) << ", "
              << format_double(cfg.error_band.second) << "] rad/s: " << format_double(out.bode_error) << "\n";
    return kOk;
}

int cmd_montecarlo(const Common& c)
{
    const CampaignConfig cfg = load(c, true);
    const CampaignResult res = run_campaign(cfg);
    write_campaign(res, cfg, cfg.output_dir);
    std::cout << "runs " << res.runs.size() << ", fully successful " << res.successes() << "\n";
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        std::vector<double> errors;
        std::size_t failures = 0;
        for (const auto& run : res.runs) {
            if (run.methods[k].ok()) errors.push_back(run.methods[k].bode_error);
            else ++failures;
        }
        std::cout << "  " << cfg.methods[k].name << ": failures " << failures;
        if (!errors.empty()) std::cout << ", median Bode error " << format_double(median(errors));
        std::cout << "\n";
    }
    std::cout << "wrote " << cfg.output_dir << "\n";
    return res.passed() ? kOk : kCampaignFailed;
}

int cmd_freqresp(const Common& c, const std::string& system, const std::vector<double>& theta, std::optional<double> lo,
                 std::optional<double> hi, std::optional<int> points)
{
    const CampaignConfig cfg = load(c, false);
    OmegaGrid grid = cfg.omega_grid;
    if (lo) grid.lo = *lo;
    if (hi) grid.hi = *hi;
    if (points) grid.points = *points;
    if (!(grid.lo > 0.0 && grid.hi > grid.lo && grid.points >= 2)) throw FormatError("grid needs 0 < lo < hi and points >= 2");
    TransferFunction tf = TransferFunction::gain(1.0);
    std::string name = system;
    if (!theta.empty()) {
        if (theta.size() != 4) throw FormatError("--theta needs 4 values");
        tf = TransferFunction({theta[0]}, {1.0, theta[1], theta[2], theta[3]});
        name = "theta";
    } else if (system == "plant") {
        tf = cfg.plant();
    } else if (system != "unit") {
        tf = cfg.controller(system);
    }
    const auto w = grid.values();
    const auto fr = freq_response(tf, w);
    CsvTable t{{"omega", "mag", "phase_deg"}, {}};
    for (std::size_t i = 0; i < w.size(); ++i)
        t.rows.push_back({format_double(w[i]), format_double(std::abs(fr.value[i])), format_double(phase_degrees(fr.value[i]))});
    if (c.out.empty()) {
        write_csv_table(std::cout, t);
    } else {
        fs::create_directories(c.out);
        write_csv_table(fs::path(c.out) / ("bode_" + name + ".csv"), t);
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Closed-loop identification experiments"};
    app.require_subcommand(1);

    Common sim, ident, mc, fr;
    auto* simulate = app.add_subcommand("simulate", "simulate one closed-loop dataset and write dataset.csv");
    add_common(simulate, sim, "unused by simulate");

    auto* identify = app.add_subcommand("identify", "run one method on one dataset");
    add_common(identify, ident, "method name from the config, or a tag: spem, dual_youla, arx, armax");
    std::string data_path;
    identify->add_option("--data", data_path, "dataset CSV (default: simulate from the config)");

    auto* montecarlo = app.add_subcommand("montecarlo", "run a Monte-Carlo campaign");
    add_common(montecarlo, mc, "restrict the campaign to these method names or tags");

    auto* freqresp = app.add_subcommand("freqresp", "write a Bode table omega,mag,phase_deg");
    add_common(freqresp, fr, "unused by freqresp");
    std::string system = "plant";
    std::vector<double> theta;
    std::optional<double> lo, hi;
    std::optional<int> points;
    freqresp->add_option("--system", system, "plant, unit, or a controller id from the config")->capture_default_str();
    freqresp->add_option("--theta", theta, "blackbox4 coefficients theta1..theta4")->delimiter(',');
    freqresp->add_option("--lo", lo, "lowest frequency (rad/s)");
    freqresp->add_option("--hi", hi, "highest frequency (rad/s)");
    freqresp->add_option("--points", points, "number of log-spaced points");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*identify) return cmd_identify(ident, data_path);
        if (*montecarlo) return cmd_montecarlo(mc);
        if (*freqresp) return cmd_freqresp(fr, system, theta, lo, hi, points);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const UnstableLoopError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnstable;
    } catch (const NoStableCandidateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNoStableCandidate;
    } catch (const RankDeficientError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRankDeficient;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnexpected;
    }
    return kUnexpected;
}
