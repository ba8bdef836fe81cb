#pragma once

// Model of the dual-spatial-mode atom-photon entanglement source: write
// excitation of two collective-spin modes, polarizing-beam-splitter
// combination of the two anti-Stokes fields, storage, retrieval onto the
// Stokes fields and polarization analysis, plus the wavevector
// mode-matching geometry.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "apsim/fock.hpp"

namespace apsim {

constexpr double kPi = 3.14159265358979323846;

/// Excitation and interferometer parameters of the write stage.
struct SourceParams {
    double chi_L = 0.025;            ///< excitation probability, arm L
    double chi_R = 0.025;            ///< excitation probability, arm R
    double phi1 = 0.0;               ///< anti-Stokes path phase difference (rad)
    double phi2 = 0.0;               ///< Stokes path phase difference (rad)
    double phase_jitter_sigma = 0.0; ///< std-dev of residual interferometer phase (rad)
    double mode_overlap = 0.95;      ///< amplitude overlap of the anti-Stokes modes on the PBS

    void validate() const {
        if (chi_L < 0.0 || chi_L >= 1.0) throw std::invalid_argument("chi_L outside [0,1)");
        if (chi_R < 0.0 || chi_R >= 1.0) throw std::invalid_argument("chi_R outside [0,1)");
        if (mode_overlap < 0.0 || mode_overlap > 1.0)
            throw std::invalid_argument("mode_overlap outside [0,1]");
        if (phase_jitter_sigma < 0.0) throw std::invalid_argument("phase_jitter_sigma negative");
    }
};

enum class DecayShape { gaussian, exponential };

/// Quantum-memory decay model. Defaults are the values fitted to the
/// published retrieval-efficiency and Bell-parameter endpoints.
struct MemoryParams {
    double eta_r0 = 0.12212445831383711; ///< retrieval efficiency at tau -> 0
    DecayShape shape = DecayShape::gaussian;
    double T_us = 15.658446672585608;    ///< retrieval decay constant (us)
    double dephase_T_us = 107.310638489062; ///< spin coherence decay constant (us)

    void validate() const {
        if (eta_r0 < 0.0 || eta_r0 > 1.0) throw std::invalid_argument("eta_r0 outside [0,1]");
        if (T_us <= 0.0) throw std::invalid_argument("memory_T_us must be > 0");
        if (dephase_T_us <= 0.0) throw std::invalid_argument("dephase_T_us must be > 0");
    }

    /// Retrieval efficiency after storage time tau (us).
    double retrieval(double tau_us) const {
        if (tau_us < 0.0) throw std::invalid_argument("storage time negative");
        if (shape == DecayShape::gaussian) {
            double x = tau_us / T_us;
            return eta_r0 * std::exp(-x * x);
        }
        return eta_r0 * std::exp(-tau_us / T_us);
    }

    /// Spin dephasing strength accumulated over tau: coherences scale by 1 - kappa.
    double kappa(double tau_us) const {
        if (tau_us < 0.0) throw std::invalid_argument("storage time negative");
        if (shape == DecayShape::gaussian) {
            double x = tau_us / dephase_T_us;
            return 1.0 - std::exp(-x * x);
        }
        return 1.0 - std::exp(-tau_us / dephase_T_us);
    }
};

/// Detection efficiencies and per-gate dark-click probabilities. Dark counts
/// are split per channel so a calibrated Stokes-side background does not
/// contaminate the anti-Stokes singles rate.
struct DetectorParams {
    double eta_AS = 0.08;        ///< total anti-Stokes detection efficiency
    double eta_S = 1.0;          ///< Stokes channel efficiency excluding memory decay
    double dark_prob_AS = 0.0;   ///< dark-click probability per anti-Stokes detector
    double dark_prob_S = 0.00198832709304497; ///< dark-click probability per Stokes detector

    void validate() const {
        if (eta_AS < 0.0 || eta_AS > 1.0) throw std::invalid_argument("eta_AS outside [0,1]");
        if (eta_S < 0.0 || eta_S > 1.0) throw std::invalid_argument("eta_S outside [0,1]");
        if (dark_prob_AS < 0.0 || dark_prob_AS >= 1.0)
            throw std::invalid_argument("dark_prob_AS outside [0,1)");
        if (dark_prob_S < 0.0 || dark_prob_S >= 1.0)
            throw std::invalid_argument("dark_prob_S outside [0,1)");
    }
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 scaled(double s) const { return {s * x, s * y, s * z}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 normalized() const {
        double n = norm();
        if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
        return scaled(1.0 / n);
    }
};

/// Beam and collection-mode wavevector directions (unit vectors) plus the
/// common wavenumber magnitude.
struct GeometryParams {
    Vec3 k_W{0.0, 0.0, 1.0};
    Vec3 k_R{0.0, 0.0, -1.0};
    Vec3 k_AS_L{std::sin(3.0 * kPi / 180.0), 0.0, std::cos(3.0 * kPi / 180.0)};
    Vec3 k_AS_R{-std::sin(3.0 * kPi / 180.0), 0.0, std::cos(3.0 * kPi / 180.0)};
    double wavenumber = 2.0 * kPi / 795e-9;  ///< rad/m

    void validate() const {
        for (const Vec3* v : {&k_W, &k_R, &k_AS_L, &k_AS_R})
            if (std::abs(v->norm() - 1.0) > 1e-12)
                throw std::invalid_argument("geometry direction vector is not unit-norm");
        if (wavenumber <= 0.0) throw std::invalid_argument("wavenumber must be > 0");
    }
};

/// Everything the analytic chain needs for one evaluation.
struct ModelParams {
    SourceParams source;
    MemoryParams memory;
    DetectorParams detector;
    GeometryParams geometry;
    int n_max = 6;

    void validate() const {
        source.validate();
        memory.validate();
        detector.validate();
        geometry.validate();
        if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
    }
};

namespace detail {

inline QuantumState blend(const QuantumState& a, const QuantumState& b, double wa) {
    QuantumState out = a;
    for (std::size_t i = 0; i < out.dim() * out.dim(); ++i)
        out.data()[i] = wa * a.data()[i] + (1.0 - wa) * b.data()[i];
    return out;
}

}  // namespace detail

/// Write-stage output: arm L squeezed onto (AS_H, spin_L), arm R onto
/// (AS_V, spin_R), phi1 on the V path, interferometer jitter as a Gaussian
/// phase average and imperfect mode overlap as an incoherent admixture that
/// scales the which-arm interference terms.
inline QuantumState build_atom_photon_state(const SourceParams& src, int n_max) {
    src.validate();
    ModeRegister reg({"AS_H", "AS_V", "spin_L", "spin_R"}, n_max);
    auto st = vacuum(reg);
    st = two_mode_squeeze(st, "AS_H", "spin_L", src.chi_L);
    st = two_mode_squeeze(st, "AS_V", "spin_R", src.chi_R);
    if (src.phi1 != 0.0) st = phase_shift(st, "AS_V", src.phi1);
    if (src.phase_jitter_sigma > 0.0)
        st = gaussian_phase_average(st, "AS_V", src.phase_jitter_sigma);
    if (src.mode_overlap < 1.0)
        st = detail::blend(st, dephase(st, "AS_V", 1.0), src.mode_overlap);
    return st;
}

/// Storage for tau microseconds: the spin modes dephase, populations stay.
inline QuantumState store(const QuantumState& st, double tau_us, const MemoryParams& mem) {
    mem.validate();
    double k = mem.kappa(tau_us);
    return dephase(dephase(st, "spin_L", k), "spin_R", k);
}

/// Read-out after tau microseconds: the spin modes become the Stokes fields
/// behind the second beam splitter (spin_L -> S_V, spin_R -> S_H), each
/// attenuated by the tau-dependent retrieval efficiency times the Stokes
/// channel efficiency, with the Stokes path phase phi2 on the H output.
inline QuantumState retrieve(const QuantumState& st, double tau_us, const MemoryParams& mem,
                             const DetectorParams& det, double phi2 = 0.0) {
    mem.validate();
    det.validate();
    double eta = mem.retrieval(tau_us) * det.eta_S;
    if (eta > 1.0) throw std::domain_error("retrieval efficiency exceeds 1");
    auto out = relabeled(st, {{"spin_L", "S_V"}, {"spin_R", "S_H"}});
    out = with_mode_order(out, {"AS_H", "AS_V", "S_H", "S_V"});
    out = loss_channel(out, "S_H", eta);
    out = loss_channel(out, "S_V", eta);
    if (phi2 != 0.0) out = phase_shift(out, "S_H", phi2);
    return out;
}

/// Pre-analyzer state of the full chain at storage time tau.
inline QuantumState chain_state(const ModelParams& p, double tau_us) {
    p.validate();
    auto st = build_atom_photon_state(p.source, p.n_max);
    st = store(st, tau_us, p.memory);
    st = retrieve(st, tau_us, p.memory, p.detector, p.source.phi2);
    return st;
}

/// Detector indices in every 16-entry click distribution.
enum ClickBit : int { kASPlus = 0, kASMinus = 1, kSPlus = 2, kSMinus = 3 };

/// Joint click distribution behind both polarization analyzers set to the
/// given basis angles. Bit layout: (AS+, AS-, S+, S-) = bits 0..3.
inline std::vector<double> analyzer_probabilities(const QuantumState& st, double theta_AS,
                                                  double theta_S, const DetectorParams& det) {
    det.validate();
    auto s = su2_mix(st, "AS_H", "AS_V", theta_AS, 0.0);
    s = su2_mix(s, "S_H", "S_V", theta_S, 0.0);
    s = loss_channel(s, "AS_H", det.eta_AS);
    s = loss_channel(s, "AS_V", det.eta_AS);
    return click_probabilities(s, {{"AS_H", det.dark_prob_AS},
                                   {"AS_V", det.dark_prob_AS},
                                   {"S_H", det.dark_prob_S},
                                   {"S_V", det.dark_prob_S}});
}

/// Same distributions for one anti-Stokes basis and many Stokes bases.
/// Equal loss on both anti-Stokes outputs commutes with their mixer, so the
/// loss is applied once up front; the per-setting work is then only the
/// rotated diagonal, which is all the threshold detectors see. The two
/// orderings coincide exactly below the truncation boundary and differ only
/// by the boundary population the mixer sheds (the truncation_occupancy
/// scale).
inline std::vector<std::vector<double>> analyzer_scan_probabilities(
    const QuantumState& st, double theta_AS, const std::vector<double>& theta_S_grid,
    const DetectorParams& det) {
    det.validate();
    auto s = loss_channel(st, "AS_H", det.eta_AS);
    s = loss_channel(s, "AS_V", det.eta_AS);
    const auto& reg = s.reg();
    auto ua = detail::make_su2_pair_unitary(reg.levels(), theta_AS, 0.0);
    const std::vector<Detector> detectors{{"AS_H", det.dark_prob_AS},
                                          {"AS_V", det.dark_prob_AS},
                                          {"S_H", det.dark_prob_S},
                                          {"S_V", det.dark_prob_S}};
    std::vector<std::vector<double>> out;
    out.reserve(theta_S_grid.size());
    for (double th : theta_S_grid) {
        auto ub = detail::make_su2_pair_unitary(reg.levels(), th, 0.0);
        auto diag = detail::pair_rotated_diagonal(s, reg.index_of("AS_H"), reg.index_of("AS_V"),
                                                  ua, reg.index_of("S_H"), reg.index_of("S_V"),
                                                  ub);
        out.push_back(click_probabilities_from_diagonal(reg, diag, detectors));
    }
    return out;
}

/// Per-setting click distributions, grouped by anti-Stokes angle so each
/// distinct angle shares one loss/rotation setup.
inline std::vector<std::vector<double>> setting_distributions(
    const QuantumState& pre_analyzer, const std::vector<std::pair<double, double>>& settings,
    const DetectorParams& det) {
    std::vector<std::vector<double>> dists(settings.size());
    std::vector<bool> done(settings.size(), false);
    for (std::size_t i = 0; i < settings.size(); ++i) {
        if (done[i]) continue;
        std::vector<std::size_t> group;
        std::vector<double> thetas;
        for (std::size_t j = i; j < settings.size(); ++j) {
            if (!done[j] && settings[j].first == settings[i].first) {
                group.push_back(j);
                thetas.push_back(settings[j].second);
                done[j] = true;
            }
        }
        auto scans = analyzer_scan_probabilities(pre_analyzer, settings[i].first, thetas, det);
        for (std::size_t k = 0; k < group.size(); ++k) dists[group[k]] = std::move(scans[k]);
    }
    return dists;
}

/// Detection rate of the anti-Stokes field: the click probability per
/// anti-Stokes detector, averaged over the two analyzer outputs. Each
/// output collects one arm's flux, so for balanced arms this equals
/// eta_AS * chi, the p_AS the visibility law is written in.
inline double anti_stokes_detection_rate(const ModelParams& p) {
    p.validate();
    auto st = build_atom_photon_state(p.source, p.n_max);
    st = loss_channel(st, "AS_H", p.detector.eta_AS);
    st = loss_channel(st, "AS_V", p.detector.eta_AS);
    auto dist = click_probabilities(
        st, {{"AS_H", p.detector.dark_prob_AS}, {"AS_V", p.detector.dark_prob_AS}});
    double p_plus = dist[1] + dist[3];
    double p_minus = dist[2] + dist[3];
    return 0.5 * (p_plus + p_minus);
}

/// Normalized anti-Stokes / Stokes coincidence ratio for a matched or
/// unmatched mode pair, computed from the full four-mode state without
/// polarization analyzers. Matched pairs share an arm (AS_H with S_V);
/// unmatched pairs cross arms (AS_H with S_H) and factorize, so the ratio
/// is exactly 1. Returns nullopt when a singles probability vanishes.
struct PairCorrelation {
    double p_as = 0.0;
    double p_s = 0.0;
    double p_joint = 0.0;
    std::optional<double> g2;
};

inline PairCorrelation pair_g2_from_state(const QuantumState& pre_analyzer,
                                          const DetectorParams& det, bool matched) {
    auto st = loss_channel(pre_analyzer, "AS_H", det.eta_AS);
    const std::string s_mode = matched ? "S_V" : "S_H";
    auto dist =
        click_probabilities(st, {{"AS_H", det.dark_prob_AS}, {s_mode, det.dark_prob_S}});
    PairCorrelation out;
    out.p_as = dist[1] + dist[3];
    out.p_s = dist[2] + dist[3];
    out.p_joint = dist[3];
    if (out.p_as > 0.0 && out.p_s > 0.0) out.g2 = out.p_joint / (out.p_as * out.p_s);
    return out;
}

inline PairCorrelation pair_g2(const ModelParams& p, double tau_us, bool matched) {
    return pair_g2_from_state(chain_state(p, tau_us), p.detector, matched);
}

inline PairCorrelation crosstalk_g2(const ModelParams& p, double tau_us) {
    return pair_g2(p, tau_us, false);
}

/// Wavevector prediction for the retrieved Stokes field of one arm.
struct ModeMatchResult {
    Vec3 k_S;                    ///< predicted direction (unit vector)
    bool counter_propagating;    ///< true iff k_S is anti-parallel to k_AS within 1e-3
    double mismatch_angle_rad;   ///< angle between k_S and -k_AS
};

enum class Arm { left, right };

/// Momentum conservation through write, storage and read:
/// k_S = k_R + k_W - k_AS for the selected collection arm.
inline ModeMatchResult mode_match(const GeometryParams& geo, Arm arm) {
    geo.validate();
    const Vec3& k_AS = (arm == Arm::left) ? geo.k_AS_L : geo.k_AS_R;
    Vec3 k_S = geo.k_R + geo.k_W - k_AS;
    Vec3 dir = k_S.normalized();
    Vec3 as_dir = k_AS.normalized();
    double residual = (dir + as_dir).norm();
    double cosang = std::clamp(-dir.dot(as_dir), -1.0, 1.0);
    return {dir, residual < 1e-3, std::acos(cosang)};
}

}  // namespace apsim
