// rates.hpp - three-level charge/optical kinetics
//
// States: bright ground |g>, bright excited |e>, dark |d>.  Transitions:
//   g -> e   k_pump   (resonant drive)
//   e -> g   k_stim + gamma_sp   (stimulated + spontaneous; only the
//                                 spontaneous branch can emit a photon)
//   e -> d   k_ion    (ionization, reachable from the excited state only)
//   d -> g   k_rec    (recovery, lands in the ground state)
//
// Resonant pumping follows the weak-drive two-level result
//   k_pump = (gamma_sp / 2) * s * L(delta),  s = P_res / P_sat,
//   L(delta) = 1 / (1 + (2 delta / linewidth)^2)
// with the transform-limited linewidth 1/(2 pi tau).  With k_stim = k_pump
// the excited fraction (s L / 2) / (s L + 1) and the power-broadened width
// linewidth * sqrt(1 + s) follow directly.
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "errors.hpp"

namespace snvsim {

// Slow wandering of the optical transition, applied once per init pulse.
struct SpectralDiffusionParams {
    double jump_prob_per_init = 0.0;  // chance a jump happens at each init
    double jump_sigma_hz = 0.0;       // Gaussian step of the center frequency

    void validate() const {
        if (jump_prob_per_init < 0.0 || jump_prob_per_init > 1.0)
            throw ConfigError("spectral diffusion: jump probability must be in [0,1]");
        if (jump_sigma_hz < 0.0)
            throw ConfigError("spectral diffusion: jump sigma must be >= 0");
    }
};

struct EmitterParams {
    double lifetime_excited_s = 5.2e-9;    // radiative lifetime tau
    double sat_power_resonant_w = 1e-7;    // resonant saturation power
    double ion_coeff_green_hz_per_w = 0.0; // green contribution to k_ion
    double ion_coeff_res_hz_per_w = 0.0;   // resonant contribution to k_ion
    double rec_coeff_green_hz_per_w = 0.0; // green contribution to k_rec
    double detect_eff = 5e-4;              // photon detection probability
    double bg_dark_cps = 0.0;              // detector background, always on
    double bg_green_cps_per_w = 0.0;       // background scaling with green power
    double center_frequency_hz = 484.3e12; // nominal optical transition
    std::optional<SpectralDiffusionParams> spectral_diffusion;

    double gamma_sp_hz() const { return 1.0 / lifetime_excited_s; }

    // Transform-limited FWHM of the optical transition.
    double natural_linewidth_hz() const {
        return 1.0 / (2.0 * M_PI * lifetime_excited_s);
    }

    void validate() const {
        if (!(lifetime_excited_s > 0.0))
            throw ConfigError("emitter: lifetime_excited must be > 0");
        if (!(sat_power_resonant_w > 0.0))
            throw ConfigError("emitter: sat_power_resonant must be > 0");
        if (ion_coeff_green_hz_per_w < 0.0 || ion_coeff_res_hz_per_w < 0.0 ||
            rec_coeff_green_hz_per_w < 0.0)
            throw ConfigError("emitter: rate coefficients must be >= 0");
        if (detect_eff < 0.0 || detect_eff > 1.0)
            throw ConfigError("emitter: detect_eff must be in [0,1]");
        if (bg_dark_cps < 0.0 || bg_green_cps_per_w < 0.0)
            throw ConfigError("emitter: background rates must be >= 0");
        if (!(center_frequency_hz > 0.0))
            throw ConfigError("emitter: center_frequency must be > 0");
        if (spectral_diffusion) spectral_diffusion->validate();
    }
};

struct LaserState {
    double res_power_w = 0.0;
    double res_detuning_hz = 0.0;  // laser frequency minus emitter center
    double green_power_w = 0.0;

    void validate() const {
        if (res_power_w < 0.0) throw ConfigError("laser: resonant power must be >= 0");
        if (green_power_w < 0.0) throw ConfigError("laser: green power must be >= 0");
        if (!std::isfinite(res_detuning_hz))
            throw ConfigError("laser: detuning must be finite");
    }
};

struct RateSet {
    double pump_hz = 0.0;      // g -> e
    double stim_hz = 0.0;      // e -> g, stimulated (no photon)
    double gamma_sp_hz = 0.0;  // e -> g, spontaneous (photon candidate)
    double ion_hz = 0.0;       // e -> d
    double rec_hz = 0.0;       // d -> g
};

struct StateVector {
    double ground = 1.0;
    double excited = 0.0;
    double dark = 0.0;

    double sum() const { return ground + excited + dark; }
    double bright() const { return ground + excited; }
};

inline double lorentzian_response(double detuning_hz, double fwhm_hz) {
    double x = 2.0 * detuning_hz / fwhm_hz;
    return 1.0 / (1.0 + x * x);
}

inline double saturation_parameter(const EmitterParams& em, const LaserState& laser) {
    return laser.res_power_w / em.sat_power_resonant_w;
}

inline RateSet build_rates(const EmitterParams& em, const LaserState& laser) {
    RateSet r;
    r.gamma_sp_hz = em.gamma_sp_hz();
    double s = saturation_parameter(em, laser);
    double L = lorentzian_response(laser.res_detuning_hz, em.natural_linewidth_hz());
    r.pump_hz = 0.5 * r.gamma_sp_hz * s * L;
    r.stim_hz = r.pump_hz;
    r.ion_hz = em.ion_coeff_green_hz_per_w * laser.green_power_w +
               em.ion_coeff_res_hz_per_w * laser.res_power_w;
    r.rec_hz = em.rec_coeff_green_hz_per_w * laser.green_power_w;
    return r;
}

// Quasi-steady excited fraction of the bright manifold, k_pump/(2 k_pump + gamma).
inline double excited_fraction_qss(const RateSet& r) {
    double denom = r.pump_hz + r.stim_hz + r.gamma_sp_hz;
    if (denom <= 0.0) return 0.0;
    return r.pump_hz / denom;
}

struct SteadyStateResult {
    StateVector state;
    bool unique = true;  // false when some state cannot be reached or left
};

// Stationary distribution of the three-state chain.  With recovery present
// the chain is a single communicating class and the result is unique:
//   p_g : p_e : p_d  =  (m + i) r : a r : a i
// where a = pump, m = stim + gamma, i = ion, r = rec.
inline SteadyStateResult steady_state(const RateSet& rt) {
    double a = rt.pump_hz;
    double m = rt.stim_hz + rt.gamma_sp_hz;
    double i = rt.ion_hz;
    double r = rt.rec_hz;

    SteadyStateResult out;
    if (r > 0.0) {
        double pg = (m + i) * r;
        double pe = a * r;
        double pd = a * i;
        double z = pg + pe + pd;
        out.state = {pg / z, pe / z, pd / z};
        out.unique = true;
        return out;
    }
    // No recovery: anything that can ionize eventually stays dark.
    if (a > 0.0 && i > 0.0) {
        out.state = {0.0, 0.0, 1.0};
        out.unique = true;
        return out;
    }
    if (a > 0.0) {
        // i == 0: bright two-level balance a p_g = m p_e, dark unreachable
        // but also unleavable, hence not unique.
        double z = a + m;
        out.state = {m / z, a / z, 0.0};
        out.unique = false;
        return out;
    }
    // No drive at all: report all population in the ground state.
    out.state = {1.0, 0.0, 0.0};
    out.unique = false;
    return out;
}

namespace detail {

using Mat3 = std::array<double, 9>;  // row-major

inline Mat3 mat_mul(const Mat3& A, const Mat3& B) {
    Mat3 C{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
            double a = A[3 * i + k];
            if (a == 0.0) continue;
            for (int j = 0; j < 3; ++j) C[3 * i + j] += a * B[3 * k + j];
        }
    return C;
}

// exp(A) by scaling and squaring with a Taylor series on the scaled matrix.
// A is a generator times a time step; columns of the result sum to one, which
// keeps repeated squaring well behaved even for huge rate-time products.
inline Mat3 mat_exp(Mat3 A) {
    double norm = 0.0;
    for (int j = 0; j < 3; ++j) {
        double c = std::abs(A[j]) + std::abs(A[3 + j]) + std::abs(A[6 + j]);
        norm = std::max(norm, c);
    }
    int squarings = 0;
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
        double scale = std::ldexp(1.0, -squarings);
        for (double& v : A) v *= scale;
    }
    Mat3 result{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Mat3 term = result;
    for (int k = 1; k <= 30; ++k) {
        term = mat_mul(term, A);
        for (double& v : term) v /= k;
        double tnorm = 0.0;
        for (double v : term) tnorm += std::abs(v);
        for (int idx = 0; idx < 9; ++idx) result[idx] += term[idx];
        if (tnorm < 1e-19) break;
    }
    for (int sq = 0; sq < squarings; ++sq) result = mat_mul(result, result);
    return result;
}

}  // namespace detail

// Deterministic evolution of occupation probabilities over a constant-rate
// interval: p(t) = exp(G t) p(0).
inline StateVector propagate(const RateSet& rt, const StateVector& p0, double t_s) {
    if (!(t_s >= 0.0)) throw std::invalid_argument("propagate: negative time");
    if (t_s == 0.0) return p0;
    double a = rt.pump_hz;
    double m = rt.stim_hz + rt.gamma_sp_hz;
    double i = rt.ion_hz;
    double r = rt.rec_hz;
    // Generator in state order (g, e, d), columns are source states.
    detail::Mat3 G{-a,     m,      r,
                   a,      -(m + i), 0.0,
                   0.0,    i,      -r};
    for (double& v : G) v *= t_s;
    detail::Mat3 M = detail::mat_exp(G);
    StateVector p;
    p.ground = M[0] * p0.ground + M[1] * p0.excited + M[2] * p0.dark;
    p.excited = M[3] * p0.ground + M[4] * p0.excited + M[5] * p0.dark;
    p.dark = M[6] * p0.ground + M[7] * p0.excited + M[8] * p0.dark;
    p.ground = std::max(p.ground, 0.0);
    p.excited = std::max(p.excited, 0.0);
    p.dark = std::max(p.dark, 0.0);
    double z = p.sum();
    if (z > 0.0) {
        p.ground /= z;
        p.excited /= z;
        p.dark /= z;
    }
    // Rescale to the initial total so sub-normalized inputs stay meaningful.
    double z0 = p0.sum();
    if (z0 != 1.0 && z0 > 0.0) {
        p.ground *= z0;
        p.excited *= z0;
        p.dark *= z0;
    }
    return p;
}

struct TelegraphRates {
    double off_hz = 0.0;      // bright -> dark, averaged over optical cycling
    double on_hz = 0.0;       // dark -> bright
    double bright_ss = 1.0;   // stationary bright probability
    double relax_hz() const { return off_hz + on_hz; }
};

// Adiabatic elimination of the optical cycle.  Valid only when cycling beats
// charge dynamics by a wide margin; enforced at a factor of 100.
inline TelegraphRates effective_telegraph(const RateSet& r) {
    double cycling = r.pump_hz + r.gamma_sp_hz;
    double charge = r.ion_hz + r.rec_hz;
    if (cycling < 100.0 * charge)
        throw TimescaleSeparationViolated(
            "optical cycling rate " + std::to_string(cycling) +
            " Hz is not >= 100x charge rate " + std::to_string(charge) + " Hz");
    TelegraphRates t;
    t.off_hz = excited_fraction_qss(r) * r.ion_hz;
    t.on_hz = r.rec_hz;
    double tot = t.off_hz + t.on_hz;
    t.bright_ss = tot > 0.0 ? t.on_hz / tot : 1.0;
    return t;
}

// Mean detected rate for a given occupation: signal plus both backgrounds.
inline double expected_count_rate(const EmitterParams& em, const LaserState& laser,
                                  const StateVector& p) {
    return em.detect_eff * em.gamma_sp_hz() * p.excited + em.bg_dark_cps +
           em.bg_green_cps_per_w * laser.green_power_w;
}

}  // namespace snvsim
