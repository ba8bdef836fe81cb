#pragma once

// Dense density-operator engine for a small register of bosonic modes,
// each truncated at n_max photons. All operations are pure: they take a
// const state and return a new one, so states can be shared freely
// between threads.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace apsim {

using cx = std::complex<double>;

namespace detail {

inline double binom(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 0; i < k; ++i) r = r * double(n - i) / double(i + 1);
    return r;
}

inline double sqrt_factorial(int n) {
    double r = 1.0;
    for (int i = 2; i <= n; ++i) r *= std::sqrt(double(i));
    return r;
}

template <typename T>
T ipow(T base, int e) {
    T r{1.0};
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}

}  // namespace detail

/// Ordered set of named bosonic modes sharing one photon-number cutoff.
/// Basis index layout is row-major: the first mode is the slowest index.
class ModeRegister {
public:
    ModeRegister(std::vector<std::string> labels, int n_max)
        : labels_(std::move(labels)), n_max_(n_max) {
        if (n_max_ < 1) throw std::invalid_argument("ModeRegister: n_max must be >= 1");
        if (labels_.empty()) throw std::invalid_argument("ModeRegister: no modes");
        for (std::size_t i = 0; i < labels_.size(); ++i)
            for (std::size_t j = i + 1; j < labels_.size(); ++j)
                if (labels_[i] == labels_[j])
                    throw std::invalid_argument("ModeRegister: duplicate mode label '" + labels_[i] + "'");
        dim_ = 1;
        for (std::size_t i = 0; i < labels_.size(); ++i) dim_ *= std::size_t(levels());
    }

    int modes() const { return int(labels_.size()); }
    int n_max() const { return n_max_; }
    int levels() const { return n_max_ + 1; }
    std::size_t dim() const { return dim_; }
    const std::vector<std::string>& labels() const { return labels_; }

    int index_of(const std::string& label) const {
        for (std::size_t i = 0; i < labels_.size(); ++i)
            if (labels_[i] == label) return int(i);
        throw std::invalid_argument("ModeRegister: unknown mode label '" + label + "'");
    }

    std::size_t stride(int mode) const {
        std::size_t s = 1;
        for (int m = modes() - 1; m > mode; --m) s *= std::size_t(levels());
        return s;
    }

    int occupation(std::size_t basis_index, int mode) const {
        return int((basis_index / stride(mode)) % std::size_t(levels()));
    }

    bool operator==(const ModeRegister& o) const {
        return labels_ == o.labels_ && n_max_ == o.n_max_;
    }

private:
    std::vector<std::string> labels_;
    int n_max_;
    std::size_t dim_;
};

/// Density operator over a ModeRegister, stored dense row-major.
class QuantumState {
public:
    explicit QuantumState(ModeRegister reg)
        : reg_(std::move(reg)), m_(reg_.dim() * reg_.dim(), cx{0.0, 0.0}) {}

    const ModeRegister& reg() const { return reg_; }
    std::size_t dim() const { return reg_.dim(); }

    cx& at(std::size_t r, std::size_t c) { return m_[r * dim() + c]; }
    const cx& at(std::size_t r, std::size_t c) const { return m_[r * dim() + c]; }
    cx* data() { return m_.data(); }
    const cx* data() const { return m_.data(); }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) t += at(i, i).real();
        return t;
    }

    /// Max |rho - rho^dagger| entry, as a Hermiticity diagnostic.
    double hermiticity_error() const {
        double e = 0.0;
        for (std::size_t r = 0; r < dim(); ++r)
            for (std::size_t c = r; c < dim(); ++c)
                e = std::max(e, std::abs(at(r, c) - std::conj(at(c, r))));
        return e;
    }

    /// Probability of finding any mode at the truncation boundary n = n_max.
    /// Estimators that claim truncation safety should check this first.
    double truncation_occupancy() const {
        double worst = 0.0;
        for (int m = 0; m < reg_.modes(); ++m) {
            double p = 0.0;
            for (std::size_t i = 0; i < dim(); ++i)
                if (reg_.occupation(i, m) == reg_.n_max()) p += at(i, i).real();
            worst = std::max(worst, p);
        }
        return worst;
    }

private:
    ModeRegister reg_;
    std::vector<cx> m_;
};

/// Pure vacuum state of a register.
inline QuantumState vacuum(const ModeRegister& reg) {
    QuantumState st(reg);
    st.at(0, 0) = 1.0;
    return st;
}

/// State rescaled to unit trace.
inline QuantumState normalized(const QuantumState& st) {
    double t = st.trace();
    if (t <= 0.0) throw std::invalid_argument("normalized: non-positive trace");
    QuantumState out = st;
    for (std::size_t i = 0; i < out.dim() * out.dim(); ++i) out.data()[i] /= t;
    return out;
}

/// Photon-number marginal P(n) of one mode.
inline std::vector<double> number_distribution(const QuantumState& st, const std::string& mode) {
    const auto& reg = st.reg();
    int m = reg.index_of(mode);
    std::vector<double> p(std::size_t(reg.levels()), 0.0);
    for (std::size_t i = 0; i < st.dim(); ++i)
        p[std::size_t(reg.occupation(i, m))] += st.at(i, i).real();
    return p;
}

inline double mean_photon_number(const QuantumState& st, const std::string& mode) {
    auto p = number_distribution(st, mode);
    double mu = 0.0;
    for (std::size_t n = 0; n < p.size(); ++n) mu += double(n) * p[n];
    return mu;
}

namespace detail {

// Multiplies every element by f(n_row, n_col) of one mode's occupations.
// Covers all channels diagonal in that mode's number basis.
template <typename F>
QuantumState scale_mode_coherences(const QuantumState& st, const std::string& mode, F&& f) {
    const auto& reg = st.reg();
    int m = reg.index_of(mode);
    const std::size_t dim = st.dim();
    std::vector<std::uint8_t> occ(dim);
    for (std::size_t i = 0; i < dim; ++i) occ[i] = std::uint8_t(reg.occupation(i, m));

    const int levels = reg.levels();
    std::vector<cx> factor(std::size_t(levels) * std::size_t(levels));
    for (int nr = 0; nr < levels; ++nr)
        for (int nc = 0; nc < levels; ++nc)
            factor[std::size_t(nr) * levels + nc] = f(nr, nc);

    QuantumState out = st;
    for (std::size_t r = 0; r < dim; ++r) {
        cx* row = out.data() + r * dim;
        const std::size_t fr = std::size_t(occ[r]) * std::size_t(levels);
        for (std::size_t c = 0; c < dim; ++c) row[c] *= factor[fr + occ[c]];
    }
    return out;
}

// Basis indices whose occupations vanish on the given modes.
inline std::vector<std::size_t> indices_with_zero_on(const ModeRegister& reg,
                                                     std::initializer_list<int> modes) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < reg.dim(); ++i) {
        bool ok = true;
        for (int m : modes)
            if (reg.occupation(i, m) != 0) { ok = false; break; }
        if (ok) out.push_back(i);
    }
    return out;
}

}  // namespace detail

/// Unitary phase e^{i phi n} on one mode. Photon statistics are untouched.
inline QuantumState phase_shift(const QuantumState& st, const std::string& mode, double phi) {
    return detail::scale_mode_coherences(st, mode, [phi](int nr, int nc) {
        double d = double(nr - nc);
        return cx{std::cos(phi * d), std::sin(phi * d)};
    });
}

/// Number-basis phase diffusion: the (n, n') coherence is multiplied by
/// (1-kappa)^|n-n'|; populations are untouched.
inline QuantumState dephase(const QuantumState& st, const std::string& mode, double kappa) {
    if (kappa < 0.0 || kappa > 1.0) throw std::invalid_argument("dephase: kappa outside [0,1]");
    return detail::scale_mode_coherences(st, mode, [kappa](int nr, int nc) {
        int d = std::abs(nr - nc);
        if (d == 0) return cx{1.0, 0.0};
        return cx{std::pow(1.0 - kappa, double(d)), 0.0};
    });
}

/// Gaussian-phase average on one mode: coherences scale by exp(-sigma^2 (n-n')^2 / 2).
/// This is the channel obtained by averaging phase_shift over phi ~ N(0, sigma).
inline QuantumState gaussian_phase_average(const QuantumState& st, const std::string& mode,
                                           double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_phase_average: sigma must be >= 0");
    return detail::scale_mode_coherences(st, mode, [sigma](int nr, int nc) {
        double d = double(nr - nc);
        return cx{std::exp(-0.5 * sigma * sigma * d * d), 0.0};
    });
}

/// Beam-splitter-to-environment loss: exact binomial-thinning Kraus sum.
/// Mean photon number of the mode scales by exactly eta.
inline QuantumState loss_channel(const QuantumState& st, const std::string& mode, double eta) {
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("loss_channel: eta outside [0,1]");
    const auto& reg = st.reg();
    int m = reg.index_of(mode);
    const std::size_t dim = st.dim();
    const int levels = reg.levels();
    const std::size_t stride = reg.stride(m);

    // coef[k][n] = <n-k| A_k |n> = sqrt( C(n,k) eta^(n-k) (1-eta)^k )
    std::vector<std::vector<double>> coef(std::size_t(levels),
                                          std::vector<double>(std::size_t(levels), 0.0));
    for (int k = 0; k < levels; ++k)
        for (int n = k; n < levels; ++n)
            coef[std::size_t(k)][std::size_t(n)] =
                std::sqrt(detail::binom(n, k) * std::pow(eta, double(n - k)) *
                          std::pow(1.0 - eta, double(k)));

    std::vector<std::uint8_t> occ(dim);
    for (std::size_t i = 0; i < dim; ++i) occ[i] = std::uint8_t(reg.occupation(i, m));

    QuantumState out(reg);
    for (std::size_t r = 0; r < dim; ++r) {
        const int nr = occ[r];
        for (std::size_t c = 0; c < dim; ++c) {
            const cx v = st.at(r, c);
            if (v == cx{0.0, 0.0}) continue;
            const int nc = occ[c];
            const int kmax = std::min(nr, nc);
            for (int k = 0; k <= kmax; ++k) {
                out.at(r - std::size_t(k) * stride, c - std::size_t(k) * stride) +=
                    coef[std::size_t(k)][std::size_t(nr)] * coef[std::size_t(k)][std::size_t(nc)] * v;
            }
        }
    }
    return out;
}

/// Places a normalized two-mode-squeezed pair state on two vacuum modes:
///   sum_n c_n |n, n>,  c_n  proportional to  chi^(n/2),
/// truncated at n_max and renormalized. chi is the single-pair excitation
/// probability; the untruncated photon-number marginal is geometric,
/// P(n) = (1 - chi) chi^n.
inline QuantumState two_mode_squeeze(const QuantumState& st, const std::string& photon_mode,
                                     const std::string& spin_mode, double chi) {
    if (photon_mode == spin_mode)
        throw std::invalid_argument("two_mode_squeeze: identical mode labels");
    if (chi < 0.0 || chi >= 1.0)
        throw std::invalid_argument("two_mode_squeeze: chi outside [0,1)");
    const auto& reg = st.reg();
    int a = reg.index_of(photon_mode);
    int b = reg.index_of(spin_mode);

    auto pa = number_distribution(st, photon_mode);
    auto pb = number_distribution(st, spin_mode);
    if (std::abs(pa[0] - 1.0) > 1e-12 || std::abs(pb[0] - 1.0) > 1e-12)
        throw std::invalid_argument("two_mode_squeeze: target modes are not in vacuum");

    if (chi == 0.0) return st;

    const int levels = reg.levels();
    std::vector<double> amp(static_cast<std::size_t>(levels), 0.0);
    double norm = 0.0;
    for (int n = 0; n < levels; ++n) {
        amp[std::size_t(n)] = std::pow(chi, 0.5 * double(n));
        norm += std::pow(chi, double(n));
    }
    norm = std::sqrt(norm);
    for (auto& v : amp) v /= norm;

    const std::size_t pair_stride = reg.stride(a) + reg.stride(b);
    auto rest = detail::indices_with_zero_on(reg, {a, b});

    QuantumState out(reg);
    for (std::size_t rr : rest) {
        for (std::size_t cc : rest) {
            const cx v = st.at(rr, cc);
            if (v == cx{0.0, 0.0}) continue;
            for (int i = 0; i < levels; ++i)
                for (int j = 0; j < levels; ++j)
                    out.at(rr + std::size_t(i) * pair_stride, cc + std::size_t(j) * pair_stride) +=
                        amp[std::size_t(i)] * amp[std::size_t(j)] * v;
        }
    }
    return out;
}

namespace detail {

// Two-mode number-conserving unitary stored as one dense (levels^2)^2 matrix
// in the composite index P = n_a * levels + n_b. Off-block entries are zero.
struct PairUnitary {
    int levels;
    std::vector<cx> u;  // row-major (levels^2) x (levels^2)
    cx at(int P_out, int P_in) const { return u[std::size_t(P_out) * std::size_t(levels * levels) + std::size_t(P_in)]; }
};

// Fock-basis matrix of the two-mode mixer with annihilator convention
//   a -> cos(theta) a + e^{i phi} sin(theta) b
//   b -> -e^{-i phi} sin(theta) a + cos(theta) b
// so a photon in mode a splits cos^2 / sin^2 between the outputs.
inline PairUnitary make_su2_pair_unitary(int levels, double theta, double phi) {
    PairUnitary pu{levels, std::vector<cx>(std::size_t(levels * levels) * std::size_t(levels * levels), cx{0, 0})};
    const double c = std::cos(theta), s = std::sin(theta);
    const cx eip{std::cos(phi), std::sin(phi)};
    const cx eim = std::conj(eip);
    const int L2 = levels * levels;
    for (int n1 = 0; n1 < levels; ++n1) {
        for (int n2 = 0; n2 < levels; ++n2) {
            const int N = n1 + n2;
            const int P_in = n1 * levels + n2;
            // U (a+)^n1 (b+)^n2 |0> expanded binomially:
            //   U a+ U+ = c a+ - e^{-i phi} s b+ ;  U b+ U+ = e^{i phi} s a+ + c b+
            for (int p = 0; p <= n1; ++p) {
                for (int q = 0; q <= n2; ++q) {
                    const int k = p + q;          // output occupation of mode a
                    const int l = N - k;          // output occupation of mode b
                    if (k >= levels || l >= levels) continue;  // truncation leak
                    cx term = binom(n1, p) * binom(n2, q) * ipow(c, p + n2 - q) *
                              ipow(cx{-s, 0.0} * eim, n1 - p) * ipow(cx{s, 0.0} * eip, q);
                    term *= sqrt_factorial(k) * sqrt_factorial(l) /
                            (sqrt_factorial(n1) * sqrt_factorial(n2));
                    pu.u[std::size_t(k * levels + l) * std::size_t(L2) + std::size_t(P_in)] += term;
                }
            }
        }
    }
    return pu;
}

// rho' = (U x I) rho (U x I)^dagger with U acting on the (a, b) pair.
// Left multiply streams whole matrix rows (axpy over the sparse U rows);
// the right multiply works row by row so every access stays inside one
// cached row.
inline QuantumState apply_pair_unitary(const QuantumState& st, int a, int b, const PairUnitary& pu) {
    const auto& reg = st.reg();
    const std::size_t dim = st.dim();
    const int levels = reg.levels();
    const int L2 = levels * levels;
    const std::size_t sa = reg.stride(a), sb = reg.stride(b);

    std::vector<std::size_t> off(static_cast<std::size_t>(L2), 0);
    for (int n1 = 0; n1 < levels; ++n1)
        for (int n2 = 0; n2 < levels; ++n2)
            off[std::size_t(n1 * levels + n2)] = std::size_t(n1) * sa + std::size_t(n2) * sb;

    // nonzero sparsity pattern of U, grouped by output index
    std::vector<std::vector<std::pair<int, cx>>> rows(static_cast<std::size_t>(L2));
    for (int Po = 0; Po < L2; ++Po)
        for (int Pi = 0; Pi < L2; ++Pi) {
            cx v = pu.at(Po, Pi);
            if (std::abs(v) > 0.0) rows[std::size_t(Po)].push_back({Pi, v});
        }

    auto rest = indices_with_zero_on(reg, {a, b});

    // left multiply: tmp = (U x I) rho, as axpy over full rows
    QuantumState tmp(reg);
    for (std::size_t base : rest) {
        for (int Po = 0; Po < L2; ++Po) {
            cx* dst = tmp.data() + (base + off[std::size_t(Po)]) * dim;
            for (const auto& [Pi, v] : rows[std::size_t(Po)]) {
                const cx* src = st.data() + (base + off[std::size_t(Pi)]) * dim;
                for (std::size_t c = 0; c < dim; ++c) dst[c] += v * src[c];
            }
        }
    }
    // right multiply in place: row r of tmp (U x I)^dagger only needs row r
    std::vector<cx> gather(static_cast<std::size_t>(L2), cx{0.0, 0.0});
    std::vector<cx> result(static_cast<std::size_t>(L2), cx{0.0, 0.0});
    for (std::size_t ridx = 0; ridx < dim; ++ridx) {
        cx* row = tmp.data() + ridx * dim;
        for (std::size_t base : rest) {
            for (int P = 0; P < L2; ++P) gather[std::size_t(P)] = row[base + off[std::size_t(P)]];
            for (int Po = 0; Po < L2; ++Po) {
                cx acc{0.0, 0.0};
                for (const auto& [Pi, v] : rows[std::size_t(Po)])
                    acc += std::conj(v) * gather[std::size_t(Pi)];
                result[std::size_t(Po)] = acc;
            }
            for (int P = 0; P < L2; ++P) row[base + off[std::size_t(P)]] = result[std::size_t(P)];
        }
    }
    return tmp;
}

// Diagonal of (U_A x U_B x I_rest) rho (U_A x U_B x I_rest)^dagger where
// U_A acts on the mode pair (a1, a2) and U_B on the disjoint pair (b1, b2).
// Threshold-detector statistics only need this diagonal, and producing it
// directly is two orders of magnitude cheaper than two full conjugations.
inline std::vector<double> pair_rotated_diagonal(const QuantumState& st, int a1, int a2,
                                                 const PairUnitary& ua, int b1, int b2,
                                                 const PairUnitary& ub) {
    const auto& reg = st.reg();
    const int levels = reg.levels();
    const int L2 = levels * levels;
    const std::size_t dim = st.dim();

    auto offsets = [&](int ma, int mb) {
        std::vector<std::size_t> off(static_cast<std::size_t>(L2), 0);
        for (int n1 = 0; n1 < levels; ++n1)
            for (int n2 = 0; n2 < levels; ++n2)
                off[std::size_t(n1 * levels + n2)] =
                    std::size_t(n1) * reg.stride(ma) + std::size_t(n2) * reg.stride(mb);
        return off;
    };
    auto offA = offsets(a1, a2), offB = offsets(b1, b2);

    // per total photon number N: the composite pair indices of that block
    auto blocks_of = [&]() {
        std::vector<std::vector<int>> blocks(std::size_t(2 * levels - 1));
        for (int n1 = 0; n1 < levels; ++n1)
            for (int n2 = 0; n2 < levels; ++n2)
                blocks[std::size_t(n1 + n2)].push_back(n1 * levels + n2);
        return blocks;
    };
    auto blocks = blocks_of();

    auto rest = indices_with_zero_on(reg, {a1, a2, b1, b2});

    std::vector<double> diag(dim, 0.0);
    std::vector<cx> sub(std::size_t(L2) * std::size_t(L2), cx{0.0, 0.0});
    std::vector<cx> vecB(static_cast<std::size_t>(L2), cx{0.0, 0.0});
    for (std::size_t rb : rest) {
        for (const auto& blockA : blocks) {
            for (int PJ : blockA) {
                for (int PK : blockA) {
                    // gather the same-block B sub-elements of rho for this (PJ, PK)
                    const std::size_t row0 = rb + offA[std::size_t(PJ)];
                    const std::size_t col0 = rb + offA[std::size_t(PK)];
                    for (const auto& blockB : blocks)
                        for (int J : blockB)
                            for (int K : blockB)
                                sub[std::size_t(J) * std::size_t(L2) + std::size_t(K)] =
                                    st.at(row0 + offB[std::size_t(J)], col0 + offB[std::size_t(K)]);
                    // vecB[B_out] = sum_{J,K in block(B_out)} UB[B,J] UB*[B,K] sub[J,K]
                    for (const auto& blockB : blocks) {
                        for (int Bout : blockB) {
                            cx acc{0.0, 0.0};
                            for (int J : blockB) {
                                cx uj = ub.at(Bout, J);
                                if (uj == cx{0.0, 0.0}) continue;
                                cx inner{0.0, 0.0};
                                for (int K : blockB)
                                    inner += std::conj(ub.at(Bout, K)) *
                                             sub[std::size_t(J) * std::size_t(L2) + std::size_t(K)];
                                acc += uj * inner;
                            }
                            vecB[std::size_t(Bout)] = acc;
                        }
                    }
                    // scatter onto every A output of this block
                    for (int Aout : blockA) {
                        cx w = ua.at(Aout, PJ) * std::conj(ua.at(Aout, PK));
                        if (w == cx{0.0, 0.0}) continue;
                        const std::size_t base = rb + offA[std::size_t(Aout)];
                        for (const auto& blockB : blocks)
                            for (int Bout : blockB)
                                diag[base + offB[std::size_t(Bout)]] +=
                                    (w * vecB[std::size_t(Bout)]).real();
                    }
                }
            }
        }
    }
    return diag;
}

}  // namespace detail

/// Two-mode SU(2) mixer (beam splitter / wave-plate rotation):
///   a -> cos(theta) a + e^{i phi} sin(theta) b
///   b -> -e^{-i phi} sin(theta) a + cos(theta) b
/// Conserves total photon number across the pair. theta = 0, phi = 0 is the
/// identity. Used with phi = 0 and theta = analyzer basis angle, mode a
/// carries the "+" analyzer output. Exactly unitary on states whose total
/// pair occupation stays at or below n_max; amplitude that would overflow
/// one mode's cutoff is shed and shows up as a trace deficit.
inline QuantumState su2_mix(const QuantumState& st, const std::string& mode_a,
                            const std::string& mode_b, double theta, double phi) {
    if (mode_a == mode_b) throw std::invalid_argument("su2_mix: identical modes");
    const auto& reg = st.reg();
    int a = reg.index_of(mode_a);
    int b = reg.index_of(mode_b);
    auto pu = detail::make_su2_pair_unitary(reg.levels(), theta, phi);
    return detail::apply_pair_unitary(st, a, b, pu);
}

/// One threshold detector: mode label plus per-gate dark-click probability.
struct Detector {
    std::string mode;
    double dark_prob = 0.0;
};

/// Joint click-pattern distribution for threshold (non-number-resolving)
/// detectors, computed from a number-basis diagonal. Pattern bit i set
/// means detector i clicked. The no-click POVM element of detector i is
/// (1 - dark) |0><0| on its mode, the click element is the complement;
/// detection efficiency must already be folded in via loss_channel.
inline std::vector<double> click_probabilities_from_diagonal(
    const ModeRegister& reg, const std::vector<double>& diagonal,
    const std::vector<Detector>& detectors) {
    const int k = int(detectors.size());
    if (k == 0) throw std::invalid_argument("click_probabilities: no detectors");
    if (k > 16) throw std::invalid_argument("click_probabilities: too many detectors");
    if (diagonal.size() != reg.dim())
        throw std::invalid_argument("click_probabilities: diagonal has wrong length");
    std::vector<int> dmode;
    for (const auto& d : detectors) {
        if (d.dark_prob < 0.0 || d.dark_prob >= 1.0)
            throw std::invalid_argument("click_probabilities: dark_prob outside [0,1)");
        dmode.push_back(reg.index_of(d.mode));
    }
    for (std::size_t i = 0; i < dmode.size(); ++i)
        for (std::size_t j = i + 1; j < dmode.size(); ++j)
            if (dmode[i] == dmode[j])
                throw std::invalid_argument("click_probabilities: duplicate detector modes");

    const std::size_t npat = std::size_t(1) << k;

    // Q[X] = probability that every detector mode in subset X is in vacuum.
    std::vector<double> Q(npat, 0.0);
    for (std::size_t i = 0; i < reg.dim(); ++i) {
        const double p = diagonal[i];
        if (p == 0.0) continue;
        std::size_t vac = 0;
        for (int d = 0; d < k; ++d)
            if (reg.occupation(i, dmode[std::size_t(d)]) == 0) vac |= std::size_t(1) << d;
        // add p to every subset of vac
        for (std::size_t X = vac;; X = (X - 1) & vac) {
            Q[X] += p;
            if (X == 0) break;
        }
    }
    // fold in dark counts: no-click element carries a (1 - dark) factor
    for (std::size_t X = 0; X < npat; ++X) {
        double f = 1.0;
        for (int d = 0; d < k; ++d)
            if (X & (std::size_t(1) << d)) f *= 1.0 - detectors[std::size_t(d)].dark_prob;
        Q[X] *= f;
    }
    // Moebius inversion: P(exactly pattern S clicks) = sum_{T subset S} (-1)^|T| Q[T | ~S]
    std::vector<double> P(npat, 0.0);
    const std::size_t full = npat - 1;
    for (std::size_t S = 0; S < npat; ++S) {
        const std::size_t comp = full & ~S;
        double acc = 0.0;
        for (std::size_t T = S;; T = (T - 1) & S) {
            const int sign = (std::popcount(T) % 2 == 0) ? 1 : -1;
            acc += sign * Q[comp | T];
            if (T == 0) break;
        }
        P[S] = std::max(acc, 0.0);
    }
    return P;
}

inline std::vector<double> click_probabilities(const QuantumState& st,
                                               const std::vector<Detector>& detectors) {
    std::vector<double> diagonal(st.dim());
    for (std::size_t i = 0; i < st.dim(); ++i) diagonal[i] = st.at(i, i).real();
    return click_probabilities_from_diagonal(st.reg(), diagonal, detectors);
}

/// Reduced state over a subset of modes, kept in their original order.
inline QuantumState partial_trace(const QuantumState& st, const std::vector<std::string>& keep) {
    const auto& reg = st.reg();
    if (keep.empty()) throw std::invalid_argument("partial_trace: empty keep set");
    std::vector<int> kidx;
    for (const auto& l : keep) kidx.push_back(reg.index_of(l));
    std::sort(kidx.begin(), kidx.end());
    if (std::adjacent_find(kidx.begin(), kidx.end()) != kidx.end())
        throw std::invalid_argument("partial_trace: duplicate mode in keep set");

    std::vector<std::string> new_labels;
    for (int m : kidx) new_labels.push_back(reg.labels()[std::size_t(m)]);
    ModeRegister nreg(new_labels, reg.n_max());

    // map of source index -> (kept part index, traced part index)
    const std::size_t dim = st.dim();
    std::vector<std::size_t> kept_part(dim), traced_part(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        std::size_t kp = 0, tp = 0;
        std::size_t kmul = 1, tmul = 1;
        for (int m = reg.modes() - 1; m >= 0; --m) {
            const std::size_t occ = std::size_t(reg.occupation(i, m));
            if (std::find(kidx.begin(), kidx.end(), m) != kidx.end()) {
                kp += occ * kmul;
                kmul *= std::size_t(reg.levels());
            } else {
                tp += occ * tmul;
                tmul *= std::size_t(reg.levels());
            }
        }
        kept_part[i] = kp;
        traced_part[i] = tp;
    }

    QuantumState out(nreg);
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < dim; ++c) {
            if (traced_part[r] != traced_part[c]) continue;
            const cx v = st.at(r, c);
            if (v != cx{0.0, 0.0}) out.at(kept_part[r], kept_part[c]) += v;
        }
    return out;
}

/// Renames modes without touching the matrix.
inline QuantumState relabeled(const QuantumState& st,
                              const std::vector<std::pair<std::string, std::string>>& renames) {
    auto labels = st.reg().labels();
    for (const auto& [from, to] : renames) {
        int m = st.reg().index_of(from);
        labels[std::size_t(m)] = to;
    }
    ModeRegister nreg(labels, st.reg().n_max());
    QuantumState out(nreg);
    std::copy(st.data(), st.data() + st.dim() * st.dim(), out.data());
    return out;
}

/// Reorders modes to the given label order (a basis permutation).
inline QuantumState with_mode_order(const QuantumState& st, const std::vector<std::string>& order) {
    const auto& reg = st.reg();
    if (int(order.size()) != reg.modes())
        throw std::invalid_argument("with_mode_order: order must list every mode");
    std::vector<int> src;
    for (const auto& l : order) src.push_back(reg.index_of(l));

    ModeRegister nreg(order, reg.n_max());
    const std::size_t dim = st.dim();
    std::vector<std::size_t> map(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        std::size_t ni = 0;
        for (int m = 0; m < nreg.modes(); ++m)
            ni += std::size_t(reg.occupation(i, src[std::size_t(m)])) * nreg.stride(m);
        map[i] = ni;
    }
    QuantumState out(nreg);
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < dim; ++c) out.at(map[r], map[c]) = st.at(r, c);
    return out;
}

/// A pure state given as a sparse list of (occupations, amplitude) terms.
using PureTerms = std::vector<std::pair<std::vector<int>, cx>>;

namespace detail {

inline std::size_t basis_index(const ModeRegister& reg, const std::vector<int>& occs) {
    if (int(occs.size()) != reg.modes())
        throw std::invalid_argument("basis_index: occupation list has wrong length");
    std::size_t idx = 0;
    for (int m = 0; m < reg.modes(); ++m) {
        if (occs[std::size_t(m)] < 0 || occs[std::size_t(m)] > reg.n_max())
            throw std::invalid_argument("basis_index: occupation outside truncation");
        idx += std::size_t(occs[std::size_t(m)]) * reg.stride(m);
    }
    return idx;
}

}  // namespace detail

/// <psi| rho |psi> for a normalized sparse pure state |psi>.
inline double pure_state_fidelity(const QuantumState& st, const PureTerms& terms) {
    double norm = 0.0;
    for (const auto& [occ, amp] : terms) norm += std::norm(amp);
    if (norm <= 0.0) throw std::invalid_argument("pure_state_fidelity: zero target state");
    cx acc{0.0, 0.0};
    for (const auto& [occ_r, amp_r] : terms)
        for (const auto& [occ_c, amp_c] : terms)
            acc += std::conj(amp_r) * st.at(detail::basis_index(st.reg(), occ_r),
                                            detail::basis_index(st.reg(), occ_c)) * amp_c;
    return acc.real() / norm;
}

/// Projects onto the basis states selected by the predicate and renormalizes.
/// Returns the conditional state and the weight of the selected subspace.
inline std::pair<QuantumState, double> postselect(
    const QuantumState& st, const std::function<bool(const std::vector<int>&)>& keep) {
    const auto& reg = st.reg();
    const std::size_t dim = st.dim();
    std::vector<std::uint8_t> sel(dim, 0);
    std::vector<int> occs(std::size_t(reg.modes()));
    for (std::size_t i = 0; i < dim; ++i) {
        for (int m = 0; m < reg.modes(); ++m) occs[std::size_t(m)] = reg.occupation(i, m);
        sel[i] = keep(occs) ? 1 : 0;
    }
    QuantumState out(reg);
    double w = 0.0;
    for (std::size_t r = 0; r < dim; ++r) {
        if (!sel[r]) continue;
        w += st.at(r, r).real();
        for (std::size_t c = 0; c < dim; ++c)
            if (sel[c]) out.at(r, c) = st.at(r, c);
    }
    if (w > 0.0)
        for (std::size_t i = 0; i < dim * dim; ++i) out.data()[i] /= w;
    return {out, w};
}

}  // namespace apsim
