// calibrate.hpp - solving emitter coefficients from measured observables
//
// A targets file freezes the parameters the experiment fixes independently
// (lifetime, saturation power, anything borrowed from another emitter) and
// lists measured observables with conditions and tolerances.  The solver
// inverts the rate model analytically for the free coefficients, then checks
// every target against the forward model.
//
// Observable value units follow lab reporting conventions:
//   decay_rate, recovery_rate      Hz
//   decay_slope_vs_res             Hz per nW of resonant power
//   bright_cps                     counts per second
//   linewidth                      MHz (FWHM)
#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "kv.hpp"
#include "rates.hpp"
#include "units.hpp"

namespace snvsim {

enum class Observable {
    decay_rate,           // ionization-limited decay of the bright ensemble, p_e * k_ion
    decay_slope_vs_res,   // d(decay_rate)/d(res power) at the stated condition
    recovery_rate,        // k_rec under green
    bright_cps,           // detected rate while bright at quasi-steady state
    linewidth,            // power-broadened optical FWHM
};

inline std::string to_string(Observable o) {
    switch (o) {
        case Observable::decay_rate: return "decay_rate";
        case Observable::decay_slope_vs_res: return "decay_slope_vs_res";
        case Observable::recovery_rate: return "recovery_rate";
        case Observable::bright_cps: return "bright_cps";
        case Observable::linewidth: return "linewidth";
    }
    return "?";
}

inline Observable observable_from_string(const std::string& s) {
    if (s == "decay_rate") return Observable::decay_rate;
    if (s == "decay_slope_vs_res") return Observable::decay_slope_vs_res;
    if (s == "recovery_rate") return Observable::recovery_rate;
    if (s == "bright_cps") return Observable::bright_cps;
    if (s == "linewidth") return Observable::linewidth;
    throw ConfigError("unknown observable: " + s);
}

struct CalibrationTarget {
    std::string emitter_id;
    Observable observable = Observable::decay_rate;
    LaserState condition;
    double value = 0.0;      // units depend on observable, see header comment
    double tolerance = 0.0;  // absolute, same units as value
    std::string label;

    void validate() const {
        condition.validate();
        if (!std::isfinite(value)) throw ConfigError("target '" + label + "': value not finite");
        if (!(tolerance >= 0.0))
            throw ConfigError("target '" + label + "': tolerance must be >= 0");
    }
};

// Optional overrides for every emitter field; set fields win over defaults
// and are never touched by the solver.
struct PartialEmitterParams {
    std::optional<double> lifetime_excited_s;
    std::optional<double> sat_power_resonant_w;
    std::optional<double> ion_coeff_green_hz_per_w;
    std::optional<double> ion_coeff_res_hz_per_w;
    std::optional<double> rec_coeff_green_hz_per_w;
    std::optional<double> detect_eff;
    std::optional<double> bg_dark_cps;
    std::optional<double> bg_green_cps_per_w;
    std::optional<double> center_frequency_hz;
};

struct TargetSet {
    std::string emitter_id;
    PartialEmitterParams frozen;
    std::vector<CalibrationTarget> targets;
};

// Forward model for one observable, in the units listed above.
inline double eval_observable(const EmitterParams& em, const CalibrationTarget& t) {
    RateSet r = build_rates(em, t.condition);
    switch (t.observable) {
        case Observable::decay_rate:
            return excited_fraction_qss(r) * r.ion_hz;
        case Observable::decay_slope_vs_res: {
            // d/dP [p_e(P) (c_g G + c_r P)] with p_e = P / (2 (P + P_sat))
            double P = t.condition.res_power_w;
            double Ps = em.sat_power_resonant_w;
            double L = lorentzian_response(t.condition.res_detuning_hz,
                                           em.natural_linewidth_hz());
            double pe = 0.5 * P * L / (P * L + Ps);
            double dpe = 0.5 * Ps * L / ((P * L + Ps) * (P * L + Ps));
            double kion = em.ion_coeff_green_hz_per_w * t.condition.green_power_w +
                          em.ion_coeff_res_hz_per_w * P;
            double slope_per_w = dpe * kion + pe * em.ion_coeff_res_hz_per_w;
            return slope_per_w * units::nW;  // reported per nW
        }
        case Observable::recovery_rate:
            return r.rec_hz;
        case Observable::bright_cps: {
            StateVector p{1.0 - excited_fraction_qss(r), excited_fraction_qss(r), 0.0};
            return expected_count_rate(em, t.condition, p);
        }
        case Observable::linewidth: {
            double s = saturation_parameter(em, t.condition);
            return em.natural_linewidth_hz() * std::sqrt(1.0 + s) / units::MHz;
        }
    }
    throw std::logic_error("unreachable");
}

struct VerifyEntry {
    CalibrationTarget target;
    double model_value = 0.0;
    double deviation = 0.0;  // model - target value
    bool pass = false;
};

struct VerifyReport {
    std::vector<VerifyEntry> entries;
    bool all_pass = true;
};

inline VerifyReport verify(const EmitterParams& em, const std::vector<CalibrationTarget>& targets) {
    VerifyReport rep;
    for (const auto& t : targets) {
        t.validate();
        VerifyEntry e;
        e.target = t;
        e.model_value = eval_observable(em, t);
        e.deviation = e.model_value - t.value;
        e.pass = std::abs(e.deviation) <= t.tolerance;
        rep.all_pass = rep.all_pass && e.pass;
        rep.entries.push_back(e);
    }
    return rep;
}

struct CalibrationOutcome {
    EmitterParams params;
    std::vector<std::string> provenance;  // one line per emitter field
    VerifyReport verification;
};

namespace detail {

// Defaults for quantities a calibration dataset rarely pins down directly.
inline constexpr double default_bg_dark_cps = 100.0;
inline constexpr double default_bg_green_cps_per_w = 2.0 / units::uW;
inline constexpr double default_detect_eff = 5e-4;

inline double pe_at(const EmitterParams& em, const LaserState& cond) {
    return excited_fraction_qss(build_rates(em, cond));
}

}  // namespace detail

// Solve the free coefficients from targets, honoring frozen values.  Order of
// solving follows the dependency chain (ion_res from resonant-only decay,
// then ion_green, then recovery, then detection efficiency), iterated until
// stationary.  A final forward check throws InconsistentTargets when any
// target misses its tolerance, including tolerance-zero targets that can
// never be met exactly.
inline CalibrationOutcome calibrate(const TargetSet& set) {
    const auto& targets = set.targets;
    if (targets.empty()) throw UnderdeterminedCalibration("no calibration targets given");
    for (const auto& t : targets) {
        t.validate();
        if (t.emitter_id != set.emitter_id)
            throw CalibrationError("mixed emitter ids in target set: '" + t.emitter_id +
                                   "' vs '" + set.emitter_id + "'");
    }
    const PartialEmitterParams& fz = set.frozen;
    if (!fz.lifetime_excited_s || !fz.sat_power_resonant_w)
        throw UnderdeterminedCalibration(
            "lifetime_excited and sat_power_resonant must be frozen; the listed "
            "observables cannot determine them");

    EmitterParams em;
    em.lifetime_excited_s = *fz.lifetime_excited_s;
    em.sat_power_resonant_w = *fz.sat_power_resonant_w;
    em.ion_coeff_green_hz_per_w = fz.ion_coeff_green_hz_per_w.value_or(0.0);
    em.ion_coeff_res_hz_per_w = fz.ion_coeff_res_hz_per_w.value_or(0.0);
    em.rec_coeff_green_hz_per_w = fz.rec_coeff_green_hz_per_w.value_or(0.0);
    em.detect_eff = fz.detect_eff.value_or(detail::default_detect_eff);
    em.bg_dark_cps = fz.bg_dark_cps.value_or(detail::default_bg_dark_cps);
    em.bg_green_cps_per_w = fz.bg_green_cps_per_w.value_or(detail::default_bg_green_cps_per_w);
    em.center_frequency_hz = fz.center_frequency_hz.value_or(em.center_frequency_hz);

    std::string src_ion_res, src_ion_green, src_rec, src_eta;

    for (int pass = 0; pass < 8; ++pass) {
        EmitterParams before = em;

        if (!fz.ion_coeff_res_hz_per_w) {
            for (const auto& t : targets) {
                if (t.observable != Observable::decay_rate) continue;
                if (t.condition.green_power_w > 0.0 || !(t.condition.res_power_w > 0.0))
                    continue;
                double pe = detail::pe_at(em, t.condition);
                em.ion_coeff_res_hz_per_w = t.value / (pe * t.condition.res_power_w);
                src_ion_res = t.label;
                break;
            }
        }

        if (!fz.ion_coeff_green_hz_per_w) {
            for (const auto& t : targets) {
                if (t.observable == Observable::decay_slope_vs_res &&
                    t.condition.green_power_w > 0.0) {
                    double P = t.condition.res_power_w;
                    double Ps = em.sat_power_resonant_w;
                    double L = lorentzian_response(t.condition.res_detuning_hz,
                                                   em.natural_linewidth_hz());
                    double pe = 0.5 * P * L / (P * L + Ps);
                    double dpe = 0.5 * Ps * L / ((P * L + Ps) * (P * L + Ps));
                    double slope_per_w = t.value / units::nW;
                    double cr = em.ion_coeff_res_hz_per_w;
                    em.ion_coeff_green_hz_per_w =
                        (slope_per_w - dpe * cr * P - pe * cr) /
                        (dpe * t.condition.green_power_w);
                    src_ion_green = t.label;
                    break;
                }
                if (t.observable == Observable::decay_rate &&
                    t.condition.green_power_w > 0.0 && t.condition.res_power_w > 0.0) {
                    double pe = detail::pe_at(em, t.condition);
                    em.ion_coeff_green_hz_per_w =
                        (t.value / pe -
                         em.ion_coeff_res_hz_per_w * t.condition.res_power_w) /
                        t.condition.green_power_w;
                    src_ion_green = t.label;
                    break;
                }
            }
        }

        if (!fz.rec_coeff_green_hz_per_w) {
            for (const auto& t : targets) {
                if (t.observable != Observable::recovery_rate) continue;
                if (!(t.condition.green_power_w > 0.0))
                    throw CalibrationError("target '" + t.label +
                                           "': recovery_rate needs green power");
                em.rec_coeff_green_hz_per_w = t.value / t.condition.green_power_w;
                src_rec = t.label;
                break;
            }
        }

        if (!fz.detect_eff) {
            for (const auto& t : targets) {
                if (t.observable != Observable::bright_cps) continue;
                double pe = detail::pe_at(em, t.condition);
                if (!(pe > 0.0))
                    throw CalibrationError("target '" + t.label +
                                           "': bright_cps needs resonant drive");
                double signal = t.value - em.bg_dark_cps -
                                em.bg_green_cps_per_w * t.condition.green_power_w;
                double eta = signal / (em.gamma_sp_hz() * pe);
                if (!(eta > 0.0) || eta > 1.0)
                    throw CalibrationError("target '" + t.label +
                                           "': implies detection efficiency " +
                                           std::to_string(eta) + ", outside (0,1]");
                em.detect_eff = eta;
                src_eta = t.label;
                break;
            }
        }

        double drift = std::abs(em.ion_coeff_green_hz_per_w - before.ion_coeff_green_hz_per_w) +
                       std::abs(em.ion_coeff_res_hz_per_w - before.ion_coeff_res_hz_per_w) +
                       std::abs(em.rec_coeff_green_hz_per_w - before.rec_coeff_green_hz_per_w) +
                       std::abs(em.detect_eff - before.detect_eff);
        if (pass > 0 && drift == 0.0) break;
    }

    if (em.ion_coeff_res_hz_per_w < 0.0 || em.ion_coeff_green_hz_per_w < 0.0 ||
        em.rec_coeff_green_hz_per_w < 0.0)
        throw CalibrationError("solved coefficients are negative; targets contradict the model");
    em.validate();

    CalibrationOutcome out;
    out.params = em;
    auto describe = [](const std::string& field, bool frozen, const std::string& src) {
        if (frozen) return field + ": frozen";
        if (!src.empty()) return field + ": solved from target '" + src + "'";
        return field + ": default (no target constrains it)";
    };
    out.provenance.push_back(describe("lifetime_excited", true, ""));
    out.provenance.push_back(describe("sat_power_resonant", true, ""));
    out.provenance.push_back(
        describe("ion_coeff_green", fz.ion_coeff_green_hz_per_w.has_value(), src_ion_green));
    out.provenance.push_back(
        describe("ion_coeff_res", fz.ion_coeff_res_hz_per_w.has_value(), src_ion_res));
    out.provenance.push_back(
        describe("rec_coeff_green", fz.rec_coeff_green_hz_per_w.has_value(), src_rec));
    out.provenance.push_back(describe("detect_eff", fz.detect_eff.has_value(), src_eta));
    out.provenance.push_back(
        describe("bg_dark_cps", fz.bg_dark_cps.has_value(), ""));
    out.provenance.push_back(
        describe("bg_green_cps_per_w", fz.bg_green_cps_per_w.has_value(), ""));

    out.verification = verify(em, targets);
    if (!out.verification.all_pass) {
        std::ostringstream why;
        why << "calibrated parameters cannot satisfy all targets:";
        for (const auto& e : out.verification.entries)
            if (!e.pass)
                why << " [" << e.target.label << " (" << to_string(e.target.observable)
                    << "): model " << e.model_value << " vs " << e.target.value << " +/- "
                    << e.target.tolerance << "]";
        throw InconsistentTargets(why.str());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Targets file format
//
//   [calibration]
//   emitter_id = emitter_12
//   [frozen]
//   lifetime_excited_ns = 5.2
//   ...any emitter-file key...
//   [target]
//   label = ...
//   observable = decay_rate
//   res_power_nW = 4
//   green_power_uW = 0
//   res_detuning_MHz = 0
//   value = 0.6
//   tolerance = 0.03

inline PartialEmitterParams parse_frozen_section(const KvSection& sec,
                                                 const std::string& origin) {
    kv_require_known(sec,
                     {"lifetime_excited_ns", "sat_power_resonant_nW", "ion_coeff_green_per_uW",
                      "ion_coeff_res_per_nW", "rec_coeff_green_per_uW", "detect_eff",
                      "bg_dark_cps", "bg_green_cps_per_uW", "center_frequency_THz"},
                     origin);
    PartialEmitterParams fz;
    if (const KvEntry* e = sec.find("lifetime_excited_ns"))
        fz.lifetime_excited_s = kv_double(*e, origin) * units::ns;
    if (const KvEntry* e = sec.find("sat_power_resonant_nW"))
        fz.sat_power_resonant_w = kv_double(*e, origin) * units::nW;
    if (const KvEntry* e = sec.find("ion_coeff_green_per_uW"))
        fz.ion_coeff_green_hz_per_w = kv_double(*e, origin) / units::uW;
    if (const KvEntry* e = sec.find("ion_coeff_res_per_nW"))
        fz.ion_coeff_res_hz_per_w = kv_double(*e, origin) / units::nW;
    if (const KvEntry* e = sec.find("rec_coeff_green_per_uW"))
        fz.rec_coeff_green_hz_per_w = kv_double(*e, origin) / units::uW;
    if (const KvEntry* e = sec.find("detect_eff")) fz.detect_eff = kv_double(*e, origin);
    if (const KvEntry* e = sec.find("bg_dark_cps")) fz.bg_dark_cps = kv_double(*e, origin);
    if (const KvEntry* e = sec.find("bg_green_cps_per_uW"))
        fz.bg_green_cps_per_w = kv_double(*e, origin) / units::uW;
    if (const KvEntry* e = sec.find("center_frequency_THz"))
        fz.center_frequency_hz = kv_double(*e, origin) * units::THz;
    return fz;
}

inline TargetSet parse_targets(std::string_view text, const std::string& origin = "<string>") {
    KvDocument doc = KvDocument::parse(text, origin);
    const KvSection* head = doc.find("calibration");
    if (!head) throw ParseError(origin, 1, "missing [calibration] section");
    kv_require_known(*head, {"emitter_id"}, origin);

    TargetSet set;
    set.emitter_id = kv_require(*head, "emitter_id", origin).value;
    if (const KvSection* fz = doc.find("frozen"))
        set.frozen = parse_frozen_section(*fz, origin);

    for (const KvSection* sec : doc.find_all("target")) {
        kv_require_known(*sec,
                         {"label", "observable", "res_power_nW", "green_power_uW",
                          "res_detuning_MHz", "value", "tolerance"},
                         origin);
        CalibrationTarget t;
        t.emitter_id = set.emitter_id;
        if (const KvEntry* e = sec->find("label")) t.label = e->value;
        t.observable =
            observable_from_string(kv_require(*sec, "observable", origin).value);
        if (const KvEntry* e = sec->find("res_power_nW"))
            t.condition.res_power_w = kv_double(*e, origin) * units::nW;
        if (const KvEntry* e = sec->find("green_power_uW"))
            t.condition.green_power_w = kv_double(*e, origin) * units::uW;
        if (const KvEntry* e = sec->find("res_detuning_MHz"))
            t.condition.res_detuning_hz = kv_double(*e, origin) * units::MHz;
        t.value = kv_double(kv_require(*sec, "value", origin), origin);
        const KvEntry& tol = kv_require(*sec, "tolerance", origin);
        t.tolerance = kv_double(tol, origin);
        if (t.tolerance < 0.0)
            throw ParseError(origin, tol.line, "tolerance must be >= 0");
        t.validate();
        set.targets.push_back(t);
    }
    for (const auto& sec : doc.sections)
        if (sec.name != "calibration" && sec.name != "frozen" && sec.name != "target")
            throw ParseError(origin, sec.line, "unknown section [" + sec.name + "]");
    if (set.targets.empty()) throw ParseError(origin, 1, "no [target] sections");
    return set;
}

inline TargetSet load_targets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open targets file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_targets(ss.str(), path);
}

}  // namespace snvsim
