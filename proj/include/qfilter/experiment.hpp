// Run orchestration: configuration schema, per-mode drivers, and output
// files (records.csv, summary.json, manifest.cfg).
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "qfilter/config.hpp"
#include "qfilter/dilation.hpp"
#include "qfilter/filter.hpp"
#include "qfilter/kalman.hpp"
#include "qfilter/output.hpp"

namespace qfilter {

using Json = nlohmann::ordered_json;

struct RunConfig {
    std::string mode;

    int dim = 8;
    double hbar = 2.0;
    double omega = 1.0;
    std::string coupling = "q_half";

    Operator kappa;   // channel correlation matrix
    int observed = 1; // leading channels that are read out

    double upsilon = 1.0; // signal relaxation rate
    double sigma = 0.5;   // signal diffusion
    std::string f_shape = "identity"; // identity | none
    double grid_min = -4.0, grid_max = 4.0;
    int grid_points = 129;
    double prior_mean = 0.0, prior_std = 0.7;

    std::string initial = "ground"; // ground | fock:<n>

    double dt = 1e-3, t_final = 1.0;
    int trajectories = 1;
    uint64_t seed = 12345;
    std::string noise_source = "input"; // input | groundtruth | innovation
    int workers = 1;

    std::string out_dir = "out";
    int stride = 10;
    std::string format = "csv";

    bool flipped_drift = false;
    std::vector<double> k0_diag; // reference prior covariance diagonal
    std::vector<double> mean0;   // reference prior mean

    int dt_levels = 3;          // compare mode refinement levels
    double mgf_beta = 0.0;      // constant test-functional weight
    std::string mgf_observable = "q";
    int dilation_steps = 4;
};

namespace detail {
inline void check(bool ok, const std::string& msg) {
    if (!ok) throw config_error(msg);
}
} // namespace detail

inline RunConfig load_run_config(Config& cfg) {
    RunConfig rc;
    rc.mode = cfg.get_string("mode");
    detail::check(rc.mode == "linear" || rc.mode == "normalized" ||
                      rc.mode == "kalman" || rc.mode == "compare" ||
                      rc.mode == "dilation" || rc.mode == "mgf-check" ||
                      rc.mode == "noise-selftest",
                  "mode must be linear|normalized|kalman|compare|dilation|"
                  "mgf-check|noise-selftest");

    rc.dim = int(cfg.get_int_or("system.dim", rc.dim));
    rc.hbar = cfg.get_double_or("system.hbar", rc.hbar);
    rc.omega = cfg.get_double_or("system.omega", rc.omega);
    rc.coupling = cfg.get_string_or("system.coupling", rc.coupling);
    detail::check(rc.dim >= 2, "system.dim must be >= 2");
    detail::check(rc.hbar > 0.0, "system.hbar must be > 0");
    detail::check(rc.omega > 0.0, "system.omega must be > 0");
    detail::check(rc.coupling == "q_half", "system.coupling must be q_half");

    if (cfg.has("noise.kappa")) rc.kappa = cfg.get_complex_matrix("noise.kappa");
    else rc.kappa = Operator::Identity(1, 1);
    rc.observed = int(cfg.get_int_or("noise.observed_channels", rc.observed));

    rc.upsilon = cfg.get_double_or("signal.upsilon", rc.upsilon);
    rc.sigma = cfg.get_double_or("signal.sigma", rc.sigma);
    rc.f_shape = cfg.get_string_or("signal.f", rc.f_shape);
    detail::check(rc.f_shape == "identity" || rc.f_shape == "none",
                  "signal.f must be identity|none");
    rc.grid_min = cfg.get_double_or("signal.grid.min", rc.grid_min);
    rc.grid_max = cfg.get_double_or("signal.grid.max", rc.grid_max);
    rc.grid_points = int(cfg.get_int_or("signal.grid.points", rc.grid_points));
    rc.prior_mean = cfg.get_double_or("signal.prior_mean", rc.prior_mean);
    rc.prior_std = cfg.get_double_or("signal.prior_std", rc.prior_std);
    detail::check(rc.grid_points >= 3, "signal.grid.points must be >= 3");
    detail::check(rc.grid_max > rc.grid_min, "signal.grid range is empty");
    detail::check(rc.prior_std > 0.0, "signal.prior_std must be > 0");
    detail::check(rc.sigma >= 0.0, "signal.sigma must be >= 0");

    rc.initial = cfg.get_string_or("state.initial", rc.initial);

    rc.dt = cfg.get_double_or("sim.dt", rc.dt);
    rc.t_final = cfg.get_double_or("sim.t_final", rc.t_final);
    rc.trajectories = int(cfg.get_int_or("sim.trajectories", rc.trajectories));
    rc.seed = uint64_t(cfg.get_int_or("sim.seed", int64_t(rc.seed)));
    rc.noise_source = cfg.get_string_or("sim.noise_source", rc.noise_source);
    rc.workers = int(cfg.get_int_or("sim.workers", rc.workers));
    detail::check(rc.dt > 0.0, "sim.dt must be > 0");
    detail::check(rc.t_final > 0.0, "sim.t_final must be > 0");
    detail::check(rc.trajectories >= 1, "sim.trajectories must be >= 1");
    detail::check(rc.workers >= 1, "sim.workers must be >= 1");
    detail::check(rc.noise_source == "input" || rc.noise_source == "groundtruth" ||
                      rc.noise_source == "innovation",
                  "sim.noise_source must be input|groundtruth|innovation");

    rc.out_dir = cfg.get_string_or("output.dir", rc.out_dir);
    rc.stride = int(cfg.get_int_or("output.stride", rc.stride));
    rc.format = cfg.get_string_or("output.format", rc.format);
    detail::check(rc.stride >= 1, "output.stride must be >= 1");
    detail::check(rc.format == "csv", "output.format must be csv");

    rc.flipped_drift = cfg.get_bool_or("kalman.flipped_drift", false);
    if (cfg.has("kalman.k0_diag")) rc.k0_diag = cfg.get_real_list("kalman.k0_diag");
    else rc.k0_diag = {rc.hbar / (2.0 * rc.omega), rc.hbar * rc.omega / 2.0,
                       rc.prior_std * rc.prior_std};
    if (cfg.has("kalman.mean0")) rc.mean0 = cfg.get_real_list("kalman.mean0");
    else rc.mean0 = {0.0, 0.0, rc.prior_mean};
    detail::check(rc.k0_diag.size() == 3, "kalman.k0_diag needs 3 entries");
    detail::check(rc.mean0.size() == 3, "kalman.mean0 needs 3 entries");

    rc.dt_levels = int(cfg.get_int_or("compare.dt_levels", rc.dt_levels));
    detail::check(rc.dt_levels >= 2 && rc.dt_levels <= 8,
                  "compare.dt_levels must be in [2,8]");
    rc.mgf_beta = cfg.get_double_or("mgf.beta", rc.mgf_beta);
    rc.mgf_observable = cfg.get_string_or("mgf.observable", rc.mgf_observable);
    detail::check(rc.mgf_observable == "q" || rc.mgf_observable == "p" ||
                      rc.mgf_observable == "number" ||
                      rc.mgf_observable == "identity",
                  "mgf.observable must be q|p|number|identity");
    rc.dilation_steps = int(cfg.get_int_or("dilation.steps", rc.dilation_steps));
    detail::check(rc.dilation_steps >= 1 && rc.dilation_steps <= 12,
                  "dilation.steps must be in [1,12]");

    cfg.require_consumed();
    return rc;
}

// Canonical key/value form of a resolved configuration; the manifest writes
// exactly this map, so manifest -> parse -> manifest is byte-stable.
inline std::map<std::string, std::string> canonical_map(const RunConfig& rc) {
    using detail::format_double;
    std::map<std::string, std::string> m;
    m["mode"] = rc.mode;
    m["system.dim"] = std::to_string(rc.dim);
    m["system.hbar"] = format_double(rc.hbar);
    m["system.omega"] = format_double(rc.omega);
    m["system.coupling"] = rc.coupling;
    m["noise.kappa"] = manifest::canonical_matrix(rc.kappa);
    m["noise.observed_channels"] = std::to_string(rc.observed);
    m["signal.upsilon"] = format_double(rc.upsilon);
    m["signal.sigma"] = format_double(rc.sigma);
    m["signal.f"] = rc.f_shape;
    m["signal.grid.min"] = format_double(rc.grid_min);
    m["signal.grid.max"] = format_double(rc.grid_max);
    m["signal.grid.points"] = std::to_string(rc.grid_points);
    m["signal.prior_mean"] = format_double(rc.prior_mean);
    m["signal.prior_std"] = format_double(rc.prior_std);
    m["state.initial"] = rc.initial;
    m["sim.dt"] = format_double(rc.dt);
    m["sim.t_final"] = format_double(rc.t_final);
    m["sim.trajectories"] = std::to_string(rc.trajectories);
    m["sim.seed"] = std::to_string(rc.seed);
    m["sim.noise_source"] = rc.noise_source;
    m["sim.workers"] = std::to_string(rc.workers);
    m["output.dir"] = rc.out_dir;
    m["output.stride"] = std::to_string(rc.stride);
    m["output.format"] = rc.format;
    m["kalman.flipped_drift"] = rc.flipped_drift ? "true" : "false";
    m["kalman.k0_diag"] = manifest::canonical_list(rc.k0_diag);
    m["kalman.mean0"] = manifest::canonical_list(rc.mean0);
    m["compare.dt_levels"] = std::to_string(rc.dt_levels);
    m["mgf.beta"] = format_double(rc.mgf_beta);
    m["mgf.observable"] = rc.mgf_observable;
    m["dilation.steps"] = std::to_string(rc.dilation_steps);
    return m;
}

inline SignalModel build_signal(const RunConfig& rc) {
    if (rc.f_shape == "identity")
        return SignalModel::linear(rc.upsilon, rc.sigma, rc.grid_min,
                                   rc.grid_max, rc.grid_points);
    return SignalModel::inert(rc.grid_min, rc.grid_max, rc.grid_points,
                              rc.upsilon, rc.sigma);
}

inline SystemModel build_system(const RunConfig& rc) {
    NoiseSpec noise = NoiseSpec::make(rc.kappa, rc.observed);
    return oscillator_system(rc.dim, rc.hbar, rc.omega, std::move(noise),
                             build_signal(rc));
}

inline Operator initial_system_state(const RunConfig& rc) {
    if (rc.initial == "ground") return fock_state(rc.dim, 0);
    if (rc.initial.rfind("fock:", 0) == 0) {
        int n = 0;
        try {
            n = std::stoi(rc.initial.substr(5));
        } catch (...) {
            throw config_error("state.initial: bad fock level");
        }
        if (n < 0 || n >= rc.dim)
            throw config_error("state.initial: fock level out of range");
        return fock_state(rc.dim, n);
    }
    throw config_error("state.initial must be ground or fock:<n>");
}

// Scalar-channel reference model; requires a single observed real channel.
inline KalmanParams kalman_params(const RunConfig& rc) {
    detail::check(rc.kappa.rows() == 1 && rc.observed == 1,
                  "reference model needs a single observed channel");
    detail::check(rc.kappa(0, 0).imag() == 0.0 && rc.kappa(0, 0).real() > 0.0,
                  "reference model needs real positive channel intensity");
    KalmanParams p = KalmanParams::standard(rc.hbar, rc.omega, rc.upsilon,
                                            rc.sigma, rc.kappa(0, 0).real());
    p.flipped_signal_drift = rc.flipped_drift;
    return p;
}

inline Vector3 kalman_mean0(const RunConfig& rc) {
    return Vector3(rc.mean0[0], rc.mean0[1], rc.mean0[2]);
}

inline Matrix3 kalman_cov0(const RunConfig& rc) {
    Matrix3 k = Matrix3::Zero();
    k(0, 0) = rc.k0_diag[0];
    k(1, 1) = rc.k0_diag[1];
    k(2, 2) = rc.k0_diag[2];
    return k;
}

// Population of the top two truncation levels of the system marginal; large
// values mean the cutoff is being felt.
inline double leakage(const SignalModel& sig, const FieldState& st) {
    const int d = int(st.phi[0].rows());
    Operator m = st.phi[0] * sig.weights[0];
    for (int i = 1; i < sig.points(); ++i) m += sig.weights[i] * st.phi[i];
    double tr = m.trace().real();
    if (tr == 0.0) return 0.0;
    return (m(d - 1, d - 1).real() + m(d - 2, d - 2).real()) / tr;
}

inline void write_manifest(const RunConfig& rc, const std::string& path) {
    auto m = canonical_map(rc);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write '" + path + "'");
    out << "# resolved run configuration\n";
    NoiseSpec noise = NoiseSpec::make(rc.kappa, rc.observed);
    out << "# derived: gamma = " << manifest::canonical_matrix(
               noise.gamma.cast<Complex>()) << "\n";
    out << "# derived: theta = " << manifest::canonical_matrix(
               noise.theta.cast<Complex>()) << "\n";
    double h = (rc.grid_max - rc.grid_min) / (rc.grid_points - 1);
    out << "# derived: grid_h = " << format_g17(h) << "\n";
    out << "# derived: diffusion_number = "
        << format_g17(0.5 * rc.sigma * rc.sigma * rc.dt / (h * h)) << "\n";
    for (const auto& kv : m) out << kv.first << " = " << kv.second << "\n";
    if (!out) throw config_error("failed writing '" + path + "'");
}

inline void write_summary(const std::string& path, const Json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

inline Json json_matrix(const RealMatrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Shared-path convergence utilities. The driving increments are drawn once at
// the finest level and aggregated pairwise for coarser levels, so every level
// sees the same Brownian path.
// ---------------------------------------------------------------------------

struct GapPoint {
    double dt = 0.0;
    double gap = 0.0;
};

namespace detail {

inline std::vector<RealVector> finest_increments(const NoiseSpec& noise,
                                                 int steps, double dt,
                                                 uint64_t seed, uint64_t traj) {
    TrajectoryStream stream(seed, traj);
    std::vector<RealVector> dv(steps);
    for (int k = 0; k < steps; ++k)
        dv[k] = sample_increments(noise, stream, dt).dv;
    return dv;
}

inline std::vector<RealVector> aggregate_increments(
    const std::vector<RealVector>& fine, int factor) {
    std::vector<RealVector> coarse(fine.size() / factor);
    for (size_t k = 0; k < coarse.size(); ++k) {
        RealVector acc = fine[k * factor];
        for (int r = 1; r < factor; ++r) acc += fine[k * factor + r];
        coarse[k] = acc;
    }
    return coarse;
}

inline RealVector posterior_summary(const SystemModel& sys,
                                    const FieldState& st,
                                    const std::vector<Operator>& obs) {
    RealVector v(obs.size() + 1);
    v[0] = signal_mean(sys.signal, st);
    for (size_t i = 0; i < obs.size(); ++i)
        v[i + 1] = operator_mean(sys.signal, st, obs[i]);
    return v;
}

} // namespace detail

// Gap between the renormalized linear filter and the normalized filter run
// on the same record, as a function of dt (same grid, so the discretization
// error of the signal grid cancels in the difference). The gap is the sup
// over shared evaluation times of the joint trace distance. Note: both
// integrators are plain Euler-Maruyama chains, so the same-path gap is
// dominated by a mean-zero quadratic-variation mismatch and shrinks at
// strong order ~1/2 (factor ~sqrt(2) per dt halving), not order 1.
inline std::vector<GapPoint> linear_normalized_gap(
    const Generator& gen, const FieldState& init, double t_final,
    double coarse_dt, int levels, uint64_t seed) {
    const SystemModel& sys = gen.system();
    const int coarse_steps = int(std::llround(t_final / coarse_dt));
    if (coarse_steps <= 0)
        throw domain_error("linear_normalized_gap: empty horizon");
    const int finest_factor = 1 << (levels - 1);
    const double fine_dt = coarse_dt / finest_factor;
    auto fine = detail::finest_increments(sys.noise, coarse_steps * finest_factor,
                                          fine_dt, seed, 0);
    std::vector<GapPoint> out;
    for (int l = 0; l < levels; ++l) {
        const int factor = finest_factor >> l;
        const double dt = fine_dt * factor;
        auto dv = detail::aggregate_increments(fine, factor);
        const int per = int(dv.size()) / coarse_steps;
        FieldState lin = init, nrm = init;
        double sup = 0.0;
        for (size_t k = 0; k < dv.size(); ++k) {
            step_linear(gen, lin, dv[k], dt);
            step_normalized(gen, nrm, sys.noise.de_cov * dv[k], dt);
            if ((k + 1) % per == 0) {
                FieldState ln = normalized_copy(sys.signal, lin);
                sup = std::max(sup,
                               field_trace_distance(sys.signal, ln.phi, nrm.phi));
            }
        }
        out.push_back({dt, sup});
    }
    return out;
}

// Self-convergence of one filter against its own finest-dt run on a shared
// path, measured as the sup over shared evaluation times of the summary
// gap (signal mean plus observable means). Returns gaps for every level
// except the finest. Same caveat as above: Euler-Maruyama self-refinement
// on a shared path converges at strong order ~1/2.
inline std::vector<GapPoint> refinement_gap(const Generator& gen,
                                            const FieldState& init,
                                            const std::vector<Operator>& obs,
                                            double t_final, double coarse_dt,
                                            int levels, uint64_t seed,
                                            bool normalized) {
    const SystemModel& sys = gen.system();
    const int coarse_steps = int(std::llround(t_final / coarse_dt));
    if (coarse_steps <= 0) throw domain_error("refinement_gap: empty horizon");
    const int finest_factor = 1 << (levels - 1);
    const double fine_dt = coarse_dt / finest_factor;
    auto fine = detail::finest_increments(sys.noise, coarse_steps * finest_factor,
                                          fine_dt, seed, 0);
    // summaries[l][c] = posterior summary of level l at coarse time c
    std::vector<std::vector<RealVector>> summaries(levels);
    std::vector<double> dts(levels);
    for (int l = 0; l < levels; ++l) {
        const int factor = finest_factor >> l;
        const double dt = fine_dt * factor;
        auto dv = detail::aggregate_increments(fine, factor);
        const int per = int(dv.size()) / coarse_steps;
        FieldState st = init;
        for (size_t k = 0; k < dv.size(); ++k) {
            if (normalized)
                step_normalized(gen, st, sys.noise.de_cov * dv[k], dt);
            else
                step_linear(gen, st, dv[k], dt);
            if ((k + 1) % per == 0) {
                FieldState n = normalized ? st : normalized_copy(sys.signal, st);
                summaries[l].push_back(detail::posterior_summary(sys, n, obs));
            }
        }
        dts[l] = dt;
    }
    std::vector<GapPoint> out;
    for (int l = 0; l + 1 < levels; ++l) {
        double sup = 0.0;
        for (int c = 0; c < coarse_steps; ++c)
            sup = std::max(sup,
                           (summaries[l][c] - summaries[levels - 1][c]).norm());
        out.push_back({dts[l], sup});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mode drivers.
// ---------------------------------------------------------------------------

namespace detail {

struct TrajectorySlot {
    std::vector<std::vector<double>> rows;
    bool blew_up = false;
    double blow_time = 0.0;
    std::string error;
    Json extra; // per-trajectory summary entries
};

inline Json slot_summary(const std::vector<TrajectorySlot>& slots) {
    Json arr = Json::array();
    for (size_t i = 0; i < slots.size(); ++i) {
        Json e;
        e["trajectory"] = i;
        e["blew_up"] = slots[i].blew_up;
        if (slots[i].blew_up) {
            e["blow_time"] = slots[i].blow_time;
            e["error"] = slots[i].error;
        }
        for (auto& kv : slots[i].extra.items()) e[kv.key()] = kv.value();
        arr.push_back(e);
    }
    return arr;
}

} // namespace detail

// linear | normalized records run. Returns the process exit code.
inline int run_records_mode(const RunConfig& rc, std::ostream& log) {
    const bool normalized = rc.mode == "normalized";
    if (!normalized && rc.noise_source == "innovation")
        throw config_error("sim.noise_source=innovation requires mode=normalized");
    SystemModel sys = build_system(rc);
    if (rc.noise_source == "groundtruth") {
        detail::check(sys.noise.m == 1 && sys.noise.n == 1 &&
                          rc.f_shape == "identity",
                      "sim.noise_source=groundtruth needs the scalar-channel "
                      "model with signal.f=identity");
    }
    const Generator gen(sys);
    const Oscillator osc = build_oscillator(rc.dim, rc.hbar, rc.omega);
    const FieldState init = gaussian_product_state(
        sys.signal, initial_system_state(rc), rc.prior_mean, rc.prior_std);
    const int steps = int(std::llround(rc.t_final / rc.dt));
    detail::check(steps >= 1, "sim.t_final/sim.dt must be >= 1 step");

    std::optional<RealMatrix> de_chol;
    if (rc.noise_source == "innovation") {
        Eigen::LLT<RealMatrix> llt(sys.noise.de_cov);
        if (llt.info() != Eigen::Success)
            throw model_error("output covariance is not positive definite");
        de_chol = RealMatrix(llt.matrixL());
    }
    std::optional<KalmanParams> truth_params;
    if (rc.noise_source == "groundtruth") truth_params = kalman_params(rc);

    std::vector<detail::TrajectorySlot> slots(rc.trajectories);
    parallel_for_indexed(rc.trajectories, rc.workers, [&](int traj) {
        detail::TrajectorySlot& slot = slots[traj];
        TrajectoryStream stream(rc.seed, uint64_t(traj));
        std::optional<TruthPath> truth;
        if (truth_params)
            truth = simulate_truth(*truth_params, kalman_mean0(rc),
                                   kalman_cov0(rc), steps, rc.dt, stream);
        FieldState st = init;
        auto emit = [&](int k) {
            std::vector<double> row;
            row.push_back(k * rc.dt);
            if (!normalized) row.push_back(st.log_weight(sys.signal));
            row.push_back(signal_mean(sys.signal, st));
            row.push_back(operator_mean(sys.signal, st, osc.q));
            row.push_back(operator_mean(sys.signal, st, osc.p));
            if (normalized) row.push_back(field_min_eigenvalue(st.phi));
            row.push_back(leakage(sys.signal, st));
            slot.rows.push_back(std::move(row));
        };
        try {
            emit(0);
            for (int k = 0; k < steps; ++k) {
                RealVector dv;
                if (truth) {
                    dv = RealVector::Constant(1, truth->dy[k] /
                                                     truth_params->gamma);
                } else if (rc.noise_source == "innovation") {
                    RealVector q = output_rates(sys, st);
                    RealVector xi(sys.noise.n);
                    for (int j = 0; j < sys.noise.n; ++j) xi[j] = stream.gaussian();
                    RealVector de = sys.noise.de_cov * q * rc.dt +
                                    std::sqrt(rc.dt) * (*de_chol) * xi;
                    step_normalized(gen, st, de, rc.dt);
                    if ((k + 1) % rc.stride == 0 || k + 1 == steps) emit(k + 1);
                    continue;
                } else {
                    dv = sample_increments(sys.noise, stream, rc.dt).dv;
                }
                if (normalized)
                    step_normalized(gen, st, sys.noise.de_cov * dv, rc.dt);
                else
                    step_linear(gen, st, dv, rc.dt);
                if ((k + 1) % rc.stride == 0 || k + 1 == steps) emit(k + 1);
            }
            slot.extra["final_signal_mean"] = signal_mean(sys.signal, st);
            if (!normalized)
                slot.extra["final_log_weight"] = st.log_weight(sys.signal);
        } catch (const blowup_error& e) {
            slot.blew_up = true;
            slot.blow_time = slot.rows.empty() ? 0.0 : slot.rows.back()[0];
            slot.error = e.what();
        }
    });

    CsvTable table;
    if (normalized)
        table.columns = {"t", "theta_mean", "q_mean", "p_mean",
                         "min_eigenvalue", "leakage"};
    else
        table.columns = {"t", "log_weight", "theta_mean", "q_mean", "p_mean",
                         "leakage"};
    table.rows.reserve(slots.size());
    int blowups = 0;
    for (auto& s : slots) {
        table.rows.push_back(s.rows);
        if (s.blew_up) ++blowups;
    }
    write_csv(rc.out_dir + "/records.csv", table);

    Json j;
    j["mode"] = rc.mode;
    j["version"] = kVersion;
    j["seed"] = rc.seed;
    j["trajectories"] = rc.trajectories;
    j["steps"] = steps;
    j["blowups"] = blowups;
    j["per_trajectory"] = detail::slot_summary(slots);
    write_summary(rc.out_dir + "/summary.json", j);
    if (blowups) {
        log << "warning: " << blowups << " trajector"
            << (blowups == 1 ? "y" : "ies") << " diverged; partial records kept\n";
        return 3;
    }
    return 0;
}

inline int run_kalman_mode(const RunConfig& rc, std::ostream&) {
    KalmanParams params = kalman_params(rc);
    const int steps = int(std::llround(rc.t_final / rc.dt));
    detail::check(steps >= 1, "sim.t_final/sim.dt must be >= 1 step");
    std::vector<detail::TrajectorySlot> slots(rc.trajectories);
    parallel_for_indexed(rc.trajectories, rc.workers, [&](int traj) {
        detail::TrajectorySlot& slot = slots[traj];
        TrajectoryStream stream(rc.seed, uint64_t(traj));
        TruthPath truth = simulate_truth(params, kalman_mean0(rc),
                                         kalman_cov0(rc), steps, rc.dt, stream);
        KalmanState st;
        st.mean = kalman_mean0(rc);
        st.cov = kalman_cov0(rc);
        Vector3 sq_err = Vector3::Zero();
        double inno_sum = 0.0, inno_sq = 0.0, inno_lag = 0.0, prev = 0.0;
        auto emit = [&](int k) {
            std::vector<double> row = {k * rc.dt,          st.mean(0),
                                       st.mean(1),         st.mean(2),
                                       st.cov(0, 0),       st.cov(0, 1),
                                       st.cov(0, 2),       st.cov(1, 1),
                                       st.cov(1, 2),       st.cov(2, 2)};
            slot.rows.push_back(std::move(row));
        };
        emit(0);
        for (int k = 0; k < steps; ++k) {
            double inno = kalman_step(params, st, truth.dy[k], rc.dt);
            sq_err += (st.mean - truth.x[k + 1]).cwiseAbs2();
            inno_sum += inno;
            inno_sq += inno * inno;
            if (k > 0) inno_lag += inno * prev;
            prev = inno;
            if ((k + 1) % rc.stride == 0 || k + 1 == steps) emit(k + 1);
        }
        slot.extra["mse_q"] = sq_err(0) / steps;
        slot.extra["mse_p"] = sq_err(1) / steps;
        slot.extra["mse_theta"] = sq_err(2) / steps;
        slot.extra["innovation_mean"] = inno_sum / steps;
        slot.extra["innovation_var"] = inno_sq / steps;
        slot.extra["innovation_lag1"] = steps > 1 ? inno_lag / (steps - 1) : 0.0;
    });

    CsvTable table;
    table.columns = {"t",   "q_mean", "p_mean", "theta_mean", "k11",
                     "k12", "k13",    "k22",    "k23",        "k33"};
    for (auto& s : slots) table.rows.push_back(s.rows);
    write_csv(rc.out_dir + "/records.csv", table);

    Json j;
    j["mode"] = rc.mode;
    j["version"] = kVersion;
    j["seed"] = rc.seed;
    j["trajectories"] = rc.trajectories;
    j["steps"] = steps;
    j["stationary_covariance"] =
        json_matrix(stationary_riccati(params, kalman_cov0(rc)));
    j["per_trajectory"] = detail::slot_summary(slots);
    write_summary(rc.out_dir + "/summary.json", j);
    return 0;
}

inline int run_compare_mode(const RunConfig& rc, std::ostream& log) {
    detail::check(rc.f_shape == "identity",
                  "compare mode needs signal.f=identity");
    KalmanParams params = kalman_params(rc);
    SystemModel sys = build_system(rc);
    const Generator gen(sys);
    const Oscillator osc = build_oscillator(rc.dim, rc.hbar, rc.omega);
    const FieldState init = gaussian_product_state(
        sys.signal, initial_system_state(rc), rc.prior_mean, rc.prior_std);
    const int steps = int(std::llround(rc.t_final / rc.dt));
    detail::check(steps >= 1, "sim.t_final/sim.dt must be >= 1 step");

    std::vector<detail::TrajectorySlot> slots(rc.trajectories);
    parallel_for_indexed(rc.trajectories, rc.workers, [&](int traj) {
        detail::TrajectorySlot& slot = slots[traj];
        TrajectoryStream stream(rc.seed, uint64_t(traj));
        TruthPath truth = simulate_truth(params, kalman_mean0(rc),
                                         kalman_cov0(rc), steps, rc.dt, stream);
        FieldState st = init;
        KalmanState kal;
        kal.mean = kalman_mean0(rc);
        kal.cov = kalman_cov0(rc);
        Vector3 filt{0, 0, 0}, sq_gap = Vector3::Zero(),
            sq_f = Vector3::Zero(), sq_k = Vector3::Zero();
        auto filter_means = [&] {
            return Vector3(operator_mean(sys.signal, st, osc.q),
                           operator_mean(sys.signal, st, osc.p),
                           signal_mean(sys.signal, st));
        };
        auto emit = [&](int k, const Vector3& f, const Vector3& x) {
            slot.rows.push_back({k * rc.dt, f(2), f(0), f(1), kal.mean(2),
                                 kal.mean(0), kal.mean(1), x(2), x(0), x(1)});
        };
        try {
            emit(0, filter_means(), truth.x[0]);
            for (int k = 0; k < steps; ++k) {
                step_normalized(gen, st,
                                RealVector::Constant(1, truth.dy[k]), rc.dt);
                kalman_step(params, kal, truth.dy[k], rc.dt);
                Vector3 f = filter_means();
                sq_gap += (f - kal.mean).cwiseAbs2();
                sq_f += (f - truth.x[k + 1]).cwiseAbs2();
                sq_k += (kal.mean - truth.x[k + 1]).cwiseAbs2();
                if ((k + 1) % rc.stride == 0 || k + 1 == steps)
                    emit(k + 1, f, truth.x[k + 1]);
            }
            Json e;
            e["rms_gap_q"] = std::sqrt(sq_gap(0) / steps);
            e["rms_gap_p"] = std::sqrt(sq_gap(1) / steps);
            e["rms_gap_theta"] = std::sqrt(sq_gap(2) / steps);
            e["mse_filter_q"] = sq_f(0) / steps;
            e["mse_filter_p"] = sq_f(1) / steps;
            e["mse_filter_theta"] = sq_f(2) / steps;
            e["mse_kalman_q"] = sq_k(0) / steps;
            e["mse_kalman_p"] = sq_k(1) / steps;
            e["mse_kalman_theta"] = sq_k(2) / steps;
            slot.extra = e;
        } catch (const blowup_error& ex) {
            slot.blew_up = true;
            slot.blow_time = slot.rows.empty() ? 0.0 : slot.rows.back()[0];
            slot.error = ex.what();
        }
    });

    CsvTable table;
    table.columns = {"t",        "theta_filter", "q_filter", "p_filter",
                     "theta_kalman", "q_kalman", "p_kalman", "theta_true",
                     "q_true",   "p_true"};
    int blowups = 0;
    for (auto& s : slots) {
        table.rows.push_back(s.rows);
        if (s.blew_up) ++blowups;
    }
    write_csv(rc.out_dir + "/records.csv", table);

    Json j;
    j["mode"] = rc.mode;
    j["version"] = kVersion;
    j["seed"] = rc.seed;
    j["trajectories"] = rc.trajectories;
    j["steps"] = steps;
    j["blowups"] = blowups;
    j["per_trajectory"] = detail::slot_summary(slots);
    if (!blowups) {
        std::vector<Operator> obs = {osc.q, osc.p};
        Json conv;
        Json refine = Json::array();
        for (auto& g : refinement_gap(gen, init, obs, rc.t_final, rc.dt,
                                      rc.dt_levels, rc.seed ^ 0x9e3779b9ULL,
                                      true)) {
            Json e;
            e["dt"] = g.dt;
            e["gap"] = g.gap;
            refine.push_back(e);
        }
        conv["refinement"] = refine;
        Json lvn = Json::array();
        for (auto& g : linear_normalized_gap(gen, init, rc.t_final, rc.dt,
                                             rc.dt_levels,
                                             rc.seed ^ 0x7f4a7c15ULL)) {
            Json e;
            e["dt"] = g.dt;
            e["gap"] = g.gap;
            lvn.push_back(e);
        }
        conv["linear_vs_normalized"] = lvn;
        j["convergence"] = conv;
    }
    write_summary(rc.out_dir + "/summary.json", j);
    if (blowups) {
        log << "warning: " << blowups << " compare trajectories diverged\n";
        return 3;
    }
    return 0;
}

inline int run_mgf_mode(const RunConfig& rc, std::ostream&) {
    SystemModel sys = build_system(rc);
    const Generator gen(sys);
    const Oscillator osc = build_oscillator(rc.dim, rc.hbar, rc.omega);
    const FieldState init = gaussian_product_state(
        sys.signal, initial_system_state(rc), rc.prior_mean, rc.prior_std);
    Operator xobs;
    if (rc.mgf_observable == "q") xobs = osc.q;
    else if (rc.mgf_observable == "p") xobs = osc.p;
    else if (rc.mgf_observable == "number") xobs = osc.number;
    else xobs = Operator::Identity(rc.dim, rc.dim);

    RealVector beta_vec = RealVector::Constant(sys.noise.n, rc.mgf_beta);
    MgfResult res = mgf_check(
        gen, init, xobs, [&](double) { return beta_vec; }, rc.t_final, rc.dt,
        rc.trajectories, rc.seed);

    Json j;
    j["mode"] = rc.mode;
    j["version"] = kVersion;
    j["seed"] = rc.seed;
    j["observable"] = rc.mgf_observable;
    j["beta"] = rc.mgf_beta;
    j["trajectories"] = res.trajectories;
    j["mc_value"] = res.mc_value;
    j["mc_std_error"] = res.mc_std_error;
    j["ode_value"] = res.ode_value;
    j["abs_gap"] = std::abs(res.mc_value - res.ode_value);
    j["gap_in_std_errors"] =
        res.mc_std_error > 0.0
            ? std::abs(res.mc_value - res.ode_value) / res.mc_std_error
            : 0.0;
    write_summary(rc.out_dir + "/summary.json", j);
    return 0;
}

inline int run_dilation_mode(const RunConfig& rc, std::ostream&) {
    detail::check(rc.kappa.rows() == 1 && rc.observed == 1 &&
                      rc.kappa(0, 0).imag() == 0.0 && rc.kappa(0, 0).real() > 0.0,
                  "dilation mode needs a single real observed channel");
    const double gamma = rc.kappa(0, 0).real();
    const Oscillator osc = build_oscillator(rc.dim, rc.hbar, rc.omega);
    // Rescale to a unit vacuum channel: L -> L / sqrt(gamma) leaves the
    // filter invariant when the record is rescaled accordingly.
    const Operator l_unit = (0.5 / std::sqrt(gamma)) * osc.q;
    const long chain_dim = long(rc.dim) << rc.dilation_steps;
    detail::check(chain_dim <= 4096,
                  "dilation chain space exceeds 4096; lower system.dim or "
                  "dilation.steps");

    NoiseSpec vac = NoiseSpec::make(Operator::Identity(1, 1), 1);
    SignalModel inert = SignalModel::inert(-1.0, 1.0, 3);
    SystemModel sys = SystemModel::make(rc.hbar, osc.h, osc.q, {l_unit},
                                        std::move(vac), std::move(inert));
    const Generator gen(sys);
    const Operator rho0 = initial_system_state(rc);

    double max_state_gap = 0.0;
    for (int traj = 0; traj < rc.trajectories; ++traj) {
        TrajectoryStream stream(rc.seed, uint64_t(traj));
        DilationTrajectory dil = run_exact_conditioning(
            osc.h, l_unit, rho0, rc.hbar, rc.dt, rc.dilation_steps, stream);
        FieldState st = product_state(sys.signal, rho0,
                                      [](double) { return 1.0; });
        for (int k = 0; k < rc.dilation_steps; ++k) {
            RealVector de =
                RealVector::Constant(1, dil.outcomes[k] * std::sqrt(rc.dt));
            step_normalized(gen, st, de, rc.dt);
            Operator diff = st.marginal(sys.signal) - dil.states[k + 1];
            hermitize(diff);
            Eigen::SelfAdjointEigenSolver<Operator> es(diff,
                                                       Eigen::EigenvaluesOnly);
            max_state_gap =
                std::max(max_state_gap, es.eigenvalues().cwiseAbs().sum());
        }
    }

    // Outcome-averaged slice map against the measurement-free generator.
    const auto kraus = kraus_pair(step_unitary(osc.h, l_unit, rc.hbar, rc.dt));
    Operator reduced = reduced_step(kraus, rho0);
    Operator expected = rho0 + rc.dt * (sys.ham_commutator(rho0) +
                                        gen.dissipator(rho0));
    double reduced_defect = (reduced - expected).cwiseAbs().maxCoeff();

    NondemolitionReport nd = check_nondemolition(osc.h, l_unit, osc.q, rc.hbar,
                                                 rc.dt, rc.dilation_steps);

    Json j;
    j["mode"] = rc.mode;
    j["version"] = kVersion;
    j["seed"] = rc.seed;
    j["trajectories"] = rc.trajectories;
    j["steps"] = rc.dilation_steps;
    j["dt"] = rc.dt;
    j["max_state_gap"] = max_state_gap;
    j["reduced_map_defect"] = reduced_defect;
    j["nondemolition_max_causal"] = nd.max_causal;
    j["nondemolition_min_acausal"] = nd.min_acausal;
    write_summary(rc.out_dir + "/summary.json", j);
    return 0;
}

inline int run_noise_selftest(const RunConfig& rc, std::ostream&) {
    NoiseSpec noise = NoiseSpec::make(rc.kappa, rc.observed);
    Json j;
    j["mode"] = rc.mode;
    j["version"] = kVersion;
    j["channels"] = noise.m;
    j["observed_channels"] = noise.n;
    j["gamma"] = json_matrix(noise.gamma);
    j["theta"] = json_matrix(noise.theta);
    j["output_covariance"] = json_matrix(noise.de_cov);
    j["input_covariance"] = json_matrix(noise.dv_cov);
    RealMatrix kt_re = noise.kappa_tilde.real();
    j["gamma_relation_residual"] =
        (noise.gamma * noise.kappa.inverse().real() * noise.gamma - kt_re)
            .cwiseAbs()
            .maxCoeff();
    ItoTable table(noise, rc.hbar, rc.sigma > 0.0 ? rc.sigma : 1.0);
    Json products;
    for (int i = 1; i <= noise.n; ++i)
        for (int k = 1; k <= noise.n; ++k) {
            Complex v = table.product(label_dv(i), label_dv(k));
            products["dv" + std::to_string(i) + "_dv" + std::to_string(k)] =
                Json::array({v.real(), v.imag()});
            v = table.product(label_de(i), label_de(k));
            products["de" + std::to_string(i) + "_de" + std::to_string(k)] =
                Json::array({v.real(), v.imag()});
        }
    j["ito_products_per_dt"] = products;
    write_summary(rc.out_dir + "/summary.json", j);
    return 0;
}

inline int run_experiment(const RunConfig& rc, std::ostream& log) {
    std::filesystem::create_directories(rc.out_dir);
    write_manifest(rc, rc.out_dir + "/manifest.cfg");
    if (rc.mode == "linear" || rc.mode == "normalized")
        return run_records_mode(rc, log);
    if (rc.mode == "kalman") return run_kalman_mode(rc, log);
    if (rc.mode == "compare") return run_compare_mode(rc, log);
    if (rc.mode == "mgf-check") return run_mgf_mode(rc, log);
    if (rc.mode == "dilation") return run_dilation_mode(rc, log);
    if (rc.mode == "noise-selftest") return run_noise_selftest(rc, log);
    throw config_error("unhandled mode '" + rc.mode + "'");
}

} // namespace qfilter
