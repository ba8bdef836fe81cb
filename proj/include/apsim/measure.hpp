#pragma once

// Estimators and closed-form relations for the photon-counting data:
// cross-correlation, fringe visibility, correlation functions, the CHSH
// parameter and first-order Poisson error propagation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apsim {

/// A scalar with its one-sigma uncertainty. std_err is 0 for values coming
/// from the analytic path; `defined` is false when the estimator's
/// denominator vanished (flagged rather than thrown, so sweeps can carry on).
struct Estimate {
    double value = 0.0;
    double std_err = 0.0;
    std::uint64_t n_effective = 0;
    bool defined = true;

    static Estimate exact(double v) { return {v, 0.0, 0, true}; }
    static Estimate undefined() { return {0.0, 0.0, 0, false}; }
};

/// Normalized coincidence ratio g2 = P(joint) / (P(a) P(b)) from raw counts,
/// with independent-Poisson error propagation.
inline Estimate g2_estimator(std::uint64_t joint, std::uint64_t singles_as,
                             std::uint64_t singles_s, std::uint64_t trials) {
    if (trials == 0) throw std::invalid_argument("g2_estimator: zero trials");
    if (joint > singles_as || joint > singles_s || singles_as > trials || singles_s > trials)
        throw std::invalid_argument("g2_estimator: inconsistent counts");
    if (singles_as == 0 || singles_s == 0) return Estimate::undefined();
    double g = (double(joint) * double(trials)) / (double(singles_as) * double(singles_s));
    double rel2 = 1.0 / double(singles_as) + 1.0 / double(singles_s);
    if (joint > 0) rel2 += 1.0 / double(joint);
    return {g, g * std::sqrt(rel2), joint, true};
}

/// V = (g2 - 1) / (g2 + 1).
inline Estimate visibility_from_g2(const Estimate& g2) {
    if (!g2.defined) return Estimate::undefined();
    if (g2.value < 0.0) throw std::invalid_argument("visibility_from_g2: negative g2");
    double d = g2.value + 1.0;
    return {(g2.value - 1.0) / d, 2.0 * g2.std_err / (d * d), g2.n_effective, true};
}

/// Inverse of visibility_from_g2: g2 = (1 + V) / (1 - V).
inline Estimate g2_from_visibility(const Estimate& v) {
    if (!v.defined) return Estimate::undefined();
    if (v.value >= 1.0 || v.value < -1.0)
        throw std::invalid_argument("g2_from_visibility: visibility outside [-1,1)");
    double d = 1.0 - v.value;
    return {(1.0 + v.value) / d, 2.0 * v.std_err / (d * d), v.n_effective, true};
}

/// Small-excitation visibility law V = 1 - 2 p_AS / eta_AS, clamped to [-1, 1].
inline double predicted_visibility(double p_as, double eta_as) {
    if (eta_as <= 0.0) throw std::invalid_argument("predicted_visibility: eta_AS must be > 0");
    if (p_as < 0.0 || p_as > eta_as)
        throw std::invalid_argument("predicted_visibility: p_AS outside [0, eta_AS]");
    double v = 1.0 - 2.0 * p_as / eta_as;
    return std::clamp(v, -1.0, 1.0);
}

/// Coincidence counts of one analyzer-setting pair plus bookkeeping.
/// Counts are inclusive: a trial enters n_pp when both the AS "+" and the
/// S "+" detectors clicked, independent of the other two.
struct SettingRecord {
    int setting_id = 0;
    double theta_AS = 0.0;  ///< analyzer basis angle, rad
    double theta_S = 0.0;   ///< analyzer basis angle, rad
    std::uint64_t n_pp = 0, n_pm = 0, n_mp = 0, n_mm = 0;
    std::array<std::uint64_t, 4> singles{{0, 0, 0, 0}};  ///< AS+, AS-, S+, S-
    std::uint64_t trials = 0;

    std::uint64_t coincidences() const { return n_pp + n_pm + n_mp + n_mm; }

    void validate() const {
        for (std::uint64_t s : singles)
            if (s > trials) throw std::invalid_argument("SettingRecord: singles exceed trials");
        if (n_pp > std::min(singles[0], singles[2]) || n_pm > std::min(singles[0], singles[3]) ||
            n_mp > std::min(singles[1], singles[2]) || n_mm > std::min(singles[1], singles[3]))
            throw std::invalid_argument("SettingRecord: coincidences exceed singles");
    }
};

struct CountsTable {
    std::vector<SettingRecord> settings;

    const SettingRecord& by_id(int id) const {
        for (const auto& s : settings)
            if (s.setting_id == id) return s;
        throw std::invalid_argument("CountsTable: no setting with id " + std::to_string(id));
    }
};

/// Correlation function E = (N++ + N-- - N+- - N-+) / N_total with binomial error.
inline Estimate correlation_E(const SettingRecord& r) {
    r.validate();
    double tot = double(r.coincidences());
    if (tot == 0.0) return Estimate::undefined();
    double e = (double(r.n_pp) + double(r.n_mm) - double(r.n_pm) - double(r.n_mp)) / tot;
    double se = std::sqrt(std::max(1.0 - e * e, 0.0) / tot);
    return {e, se, r.coincidences(), true};
}

/// Exact correlation from analytic coincidence probabilities.
inline Estimate correlation_from_probabilities(double p_pp, double p_pm, double p_mp,
                                               double p_mm) {
    double tot = p_pp + p_pm + p_mp + p_mm;
    if (tot <= 0.0) return Estimate::undefined();
    return Estimate::exact((p_pp + p_mm - p_pm - p_mp) / tot);
}

/// The four analyzer-setting pairs of the Bell measurement, as basis angles
/// (rad): (0, 22.5), (0, -22.5), (45, 22.5), (45, -22.5) in degrees.
inline std::array<std::pair<double, double>, 4> bell_settings() {
    constexpr double pi = 3.14159265358979323846;
    return {{{0.0, pi / 8.0}, {0.0, -pi / 8.0}, {pi / 4.0, pi / 8.0}, {pi / 4.0, -pi / 8.0}}};
}

/// Sign assignment of the CHSH sum, fixed once: the combination
///   S = | E(a,b) + E(a,b') - E(a',b) + E(a',b') |
/// over the settings of bell_settings() reaches 2*sqrt(2) on the ideal
/// retrieved state, which fixes the outcome labeling left open by the
/// correlation-function definition.
inline constexpr std::array<double, 4> kChshSigns{{1.0, 1.0, -1.0, 1.0}};

/// CHSH parameter with quadrature error propagation.
inline Estimate chsh_S(const Estimate& e11, const Estimate& e12, const Estimate& e21,
                       const Estimate& e22) {
    const std::array<const Estimate*, 4> es{{&e11, &e12, &e21, &e22}};
    for (const auto* e : es)
        if (!e->defined) return Estimate::undefined();
    double s = 0.0, var = 0.0;
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        s += kChshSigns[i] * es[i]->value;
        var += es[i]->std_err * es[i]->std_err;
        n += es[i]->n_effective;
    }
    return {std::abs(s), std::sqrt(var), n, true};
}

/// Number of standard errors by which S exceeds the classical bound of 2.
inline double violation_significance(const Estimate& s) {
    if (!s.defined || s.std_err <= 0.0)
        throw std::invalid_argument("violation_significance: needs a sampled S with std_err > 0");
    return (s.value - 2.0) / s.std_err;
}

/// One point of a coincidence fringe scan. sigma = 0 marks an exact
/// (analytic) value; mixed exact/noisy scans are not supported.
struct FringePoint {
    double theta = 0.0;  ///< Stokes analyzer basis angle, rad
    double value = 0.0;  ///< coincidence count or probability
    double sigma = 0.0;
};

struct FringeFit {
    Estimate visibility;
    double phase_rad = 0.0;   ///< fringe offset: value ~ offset (1 + V sin(2 theta + phase))
    double offset = 0.0;
    double rms_residual = 0.0;
};

/// Least-squares sinusoid fit at the known analyzer period (pi in basis
/// angle): value(theta) = a + b cos(2 theta) + c sin(2 theta), from which
/// V = sqrt(b^2 + c^2) / a. Needs at least 4 points spanning half a period.
inline FringeFit fringe_visibility(const std::vector<FringePoint>& scan) {
    if (scan.size() < 4)
        throw std::invalid_argument("fringe_visibility: need at least 4 scan points");
    double lo = scan.front().theta, hi = scan.front().theta;
    bool noisy = false;
    for (const auto& p : scan) {
        lo = std::min(lo, p.theta);
        hi = std::max(hi, p.theta);
        if (p.sigma > 0.0) noisy = true;
    }
    constexpr double pi = 3.14159265358979323846;
    if (hi - lo < pi / 2.0 - 1e-12)
        throw std::invalid_argument("fringe_visibility: scan spans less than half a period");

    // normal equations for the 3-parameter linear model
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double rhs[3] = {0, 0, 0};
    for (const auto& p : scan) {
        double w = noisy ? 1.0 / std::max(p.sigma * p.sigma, 1e-300) : 1.0;
        double f[3] = {1.0, std::cos(2.0 * p.theta), std::sin(2.0 * p.theta)};
        for (int i = 0; i < 3; ++i) {
            rhs[i] += w * f[i] * p.value;
            for (int j = 0; j < 3; ++j) m[i][j] += w * f[i] * f[j];
        }
    }
    // solve the 3x3 system by Gaussian elimination with partial pivoting
    double a[3][4];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) a[i][j] = m[i][j];
        a[i][3] = rhs[i];
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-300)
            throw std::invalid_argument("fringe_visibility: degenerate scan");
        std::swap(a[col], a[piv]);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            for (int j = col; j < 4; ++j) a[r][j] -= f * a[col][j];
        }
    }
    double pa = a[0][3] / a[0][0], pb = a[1][3] / a[1][1], pc = a[2][3] / a[2][2];
    if (pa <= 0.0) throw std::invalid_argument("fringe_visibility: non-positive fringe offset");

    double amp = std::sqrt(pb * pb + pc * pc);
    double v = amp / pa;
    double rms = 0.0;
    for (const auto& p : scan) {
        double model = pa + pb * std::cos(2.0 * p.theta) + pc * std::sin(2.0 * p.theta);
        rms += (p.value - model) * (p.value - model);
    }
    rms = std::sqrt(rms / double(scan.size()));

    double sigma_v = 0.0;
    if (noisy) {
        // covariance of (a, b, c) is the inverse normal matrix; propagate to V
        double inv[3][3];
        {
            double aug[3][6] = {};
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) aug[i][j] = m[i][j];
                aug[i][3 + i] = 1.0;
            }
            for (int col = 0; col < 3; ++col) {
                int piv = col;
                for (int r = col + 1; r < 3; ++r)
                    if (std::abs(aug[r][col]) > std::abs(aug[piv][col])) piv = r;
                std::swap(aug[col], aug[piv]);
                double d = aug[col][col];
                for (int j = 0; j < 6; ++j) aug[col][j] /= d;
                for (int r = 0; r < 3; ++r) {
                    if (r == col) continue;
                    double f = aug[r][col];
                    for (int j = 0; j < 6; ++j) aug[r][j] -= f * aug[col][j];
                }
            }
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) inv[i][j] = aug[i][3 + j];
        }
        double amp_safe = std::max(amp, 1e-300);
        double grad[3] = {-v / pa, pb / (amp_safe * pa), pc / (amp_safe * pa)};
        double var = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) var += grad[i] * inv[i][j] * grad[j];
        sigma_v = std::sqrt(std::max(var, 0.0));
    }

    FringeFit fit;
    fit.visibility = {v, sigma_v, std::uint64_t(scan.size()), true};
    fit.phase_rad = std::atan2(pb, pc);  // a + amp * sin(2 theta + phase)
    fit.offset = pa;
    fit.rms_residual = rms;
    return fit;
}

}  // namespace apsim
