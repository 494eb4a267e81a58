// ple.hpp - synthetic resonant-excitation scan maps and their statistics
//
// A scan program runs back and forth over a frequency grid (boustrophedon:
// scan 0 descends, scan 1 ascends, ...).  The charge state carries over from
// one scan line to the next, so an ionization without recovery shows up as a
// peak that terminates mid-scan and stays gone.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "engine.hpp"
#include "fit.hpp"
#include "pulse.hpp"

namespace snvsim {

struct ScanMap {
    std::vector<double> detuning_grid_hz;       // ascending, relative to nominal center
    std::vector<std::vector<uint64_t>> scans;   // [scan][grid index]
    std::vector<int> directions;                // acquisition direction, -1 or +1
    std::vector<bool> had_init;                 // green init preceded this scan
    std::vector<double> emitter_center_hz;      // actual center during each scan
    ScanMode mode = ScanMode::resonant_only;
    uint64_t seed = 0;
    double dwell_s = 0.0;
    double res_power_w = 0.0;
    double green_power_w = 0.0;

    size_t n_scans() const { return scans.size(); }
    size_t n_points() const { return detuning_grid_hz.size(); }
};

// Runs the whole program as one continuous repetition.  Spectral diffusion,
// when enabled on the emitter, jumps the center at green init pulses; the
// jump offsets are drawn up front from a dedicated RNG stream and folded into
// the dwell detunings.
inline ScanMap generate_ple(const EmitterParams& em, const ScanProgram& prog, uint64_t seed,
                            const EnginePolicy& policy = {}) {
    em.validate();
    prog.validate();

    std::vector<double> grid = prog.grid.points();
    size_t npts = grid.size();

    std::vector<double> center_offset(prog.n_scans, 0.0);
    {
        double off = 0.0;
        for (int k = 0; k < prog.n_scans; ++k) {
            if (prog.mode == ScanMode::init_then_scan && em.spectral_diffusion) {
                CounterRng dr(seed, static_cast<uint64_t>(k), detail::stream_diffusion);
                if (uniform01(dr) < em.spectral_diffusion->jump_prob_per_init)
                    off += normal(dr, 0.0, em.spectral_diffusion->jump_sigma_hz);
            }
            center_offset[k] = off;
        }
    }

    // One long sequence: [init?] dwell dwell ... per scan, state carried through.
    PulseSequence seq;
    seq.label = "ple_" + to_string(prog.mode);
    seq.repetitions = 1;
    seq.bin_width_s = prog.grid.dwell_s;
    for (int k = 0; k < prog.n_scans; ++k) {
        PulseSequence line = build_scan_sequence(prog, k, scan_direction(k));
        for (PulseSegment& s : line.segments) {
            if (s.record && center_offset[k] != 0.0)
                s.laser.res_detuning_hz -= center_offset[k];
            seq.segments.push_back(std::move(s));
        }
    }
    seq.validate();

    BinnedTrace trace = simulate_ensemble(em, seq, seed, 1, policy);

    ScanMap map;
    map.detuning_grid_hz = grid;
    map.mode = prog.mode;
    map.seed = seed;
    map.dwell_s = prog.grid.dwell_s;
    map.res_power_w = prog.res_power_w;
    map.green_power_w = prog.mode == ScanMode::simultaneous ? prog.green_power_w : 0.0;
    map.scans.assign(prog.n_scans, std::vector<uint64_t>(npts, 0));
    map.directions.resize(prog.n_scans);
    map.had_init.resize(prog.n_scans);
    map.emitter_center_hz.resize(prog.n_scans);
    for (int k = 0; k < prog.n_scans; ++k) {
        int dir = scan_direction(k);
        map.directions[k] = dir;
        map.had_init[k] = prog.mode == ScanMode::init_then_scan;
        map.emitter_center_hz[k] = em.center_frequency_hz + center_offset[k];
        for (size_t j = 0; j < npts; ++j) {
            size_t grid_idx = dir >= 0 ? j : npts - 1 - j;
            map.scans[k][grid_idx] = trace.counts[k * npts + j];
        }
    }
    return map;
}

// Mean counts per grid point across scans.
inline std::vector<double> scan_mean(const ScanMap& map) {
    std::vector<double> out(map.n_points(), 0.0);
    if (map.n_scans() == 0) return out;
    for (const auto& s : map.scans)
        for (size_t j = 0; j < out.size(); ++j) out[j] += s[j];
    for (double& v : out) v /= static_cast<double>(map.n_scans());
    return out;
}

// Per-point maximum across scans; rescues lines that blink between scans.
inline std::vector<double> scan_max(const ScanMap& map) {
    std::vector<double> out(map.n_points(), 0.0);
    for (const auto& s : map.scans)
        for (size_t j = 0; j < out.size(); ++j)
            out[j] = std::max(out[j], static_cast<double>(s[j]));
    return out;
}

struct GatingRules {
    double min_linewidth_hz = 0.0;  // reject fits narrower than this
    double min_peak_to_bg = 0.0;    // reject weak peaks, amplitude over background
    double max_fit_rms = std::numeric_limits<double>::infinity();

    void validate() const {
        if (min_linewidth_hz < 0.0 || min_peak_to_bg < 0.0)
            throw ConfigError("gating: thresholds must be >= 0");
        if (!(max_fit_rms > 0.0)) throw ConfigError("gating: max_fit_rms must be > 0");
    }
};

struct ScanExclusion {
    size_t scan_index = 0;
    std::string reason;
};

struct ScanStatistics {
    std::vector<size_t> included;        // scan indices that passed
    std::vector<double> centers_hz;      // parallel to included
    std::vector<double> linewidths_hz;
    std::vector<FitResult> fits;
    std::vector<ScanExclusion> excluded;
    std::string empty_reason;            // set when nothing passed

    bool empty() const { return included.empty(); }
};

// Lorentzian fit per scan line plus quality gating.  Never throws on bad
// scans; a map with no usable line comes back empty with the reasons kept.
inline ScanStatistics scan_statistics(const ScanMap& map, const GatingRules& gating = {}) {
    gating.validate();
    ScanStatistics st;
    for (size_t k = 0; k < map.n_scans(); ++k) {
        std::vector<double> y(map.scans[k].begin(), map.scans[k].end());
        FitResult fit;
        try {
            fit = fit_lorentzian(map.detuning_grid_hz, y);
        } catch (const PeakNotFound& e) {
            st.excluded.push_back({k, std::string("no peak: ") + e.what()});
            continue;
        }
        if (!fit.converged) {
            st.excluded.push_back({k, "fit did not converge"});
            continue;
        }
        double fwhm = std::abs(fit.value("fwhm"));
        double peak_to_bg = fit.value("amplitude") / std::max(fit.value("offset"), 1.0);
        if (fwhm < gating.min_linewidth_hz) {
            st.excluded.push_back({k, "linewidth below gate"});
            continue;
        }
        if (peak_to_bg < gating.min_peak_to_bg) {
            st.excluded.push_back({k, "peak/background below gate"});
            continue;
        }
        if (fit.residual_rms > gating.max_fit_rms) {
            st.excluded.push_back({k, "fit residual above gate"});
            continue;
        }
        st.included.push_back(k);
        st.centers_hz.push_back(fit.value("center"));
        st.linewidths_hz.push_back(fwhm);
        st.fits.push_back(std::move(fit));
    }
    if (st.included.empty()) {
        std::map<std::string, int> tally;
        for (const auto& e : st.excluded) {
            std::string key = e.reason.substr(0, e.reason.find(':'));
            ++tally[key];
        }
        std::string why = "all " + std::to_string(map.n_scans()) + " scans excluded:";
        for (const auto& [reason, cnt] : tally)
            why += " " + reason + " x" + std::to_string(cnt) + ";";
        st.empty_reason = why;
    }
    return st;
}

namespace detail {

// Bright points inside the peak region of one scan, in acquisition order.
// Threshold sits 3 Poisson sigmas above the off-peak background.
inline std::vector<bool> bright_flags_in_region(const ScanMap& map, size_t k, double c_lo,
                                                double c_hi) {
    std::vector<double> off_peak;
    const auto& s = map.scans[k];
    for (size_t j = 0; j < map.n_points(); ++j) {
        double f = map.detuning_grid_hz[j];
        if (f < c_lo || f > c_hi) off_peak.push_back(static_cast<double>(s[j]));
    }
    double bg = off_peak.empty() ? 0.0 : median(off_peak);
    double thr = bg + 3.0 * std::sqrt(bg + 1.0);
    std::vector<bool> flags;
    int dir = map.directions[k];
    size_t n = map.n_points();
    for (size_t j = 0; j < n; ++j) {
        size_t idx = dir >= 0 ? j : n - 1 - j;
        double f = map.detuning_grid_hz[idx];
        if (f >= c_lo && f <= c_hi)
            flags.push_back(static_cast<double>(s[idx]) > thr);
    }
    return flags;
}

}  // namespace detail

// Scans where the line vanished partway through the previous pass and came
// back whole: the previous scan shows at least two bright points in the peak
// region followed by nothing for the rest of the region, and the scan itself
// passed the statistics gating.
inline std::vector<size_t> select_terminated_then_complete(const ScanMap& map,
                                                           const ScanStatistics& stats) {
    std::vector<size_t> out;
    if (map.n_scans() < 2 || stats.empty()) return out;

    // Reference peak region from the scans that fit cleanly.  1.5 linewidths
    // to each side covers the flanks down to 10% of the peak.
    double c = median(stats.centers_hz);
    double w = median(stats.linewidths_hz);
    double c_lo = c - 1.5 * w, c_hi = c + 1.5 * w;

    std::vector<bool> complete(map.n_scans(), false);
    for (size_t idx : stats.included) complete[idx] = true;

    for (size_t k = 1; k < map.n_scans(); ++k) {
        if (!complete[k]) continue;
        std::vector<bool> flags = detail::bright_flags_in_region(map, k - 1, c_lo, c_hi);
        if (flags.size() < 5) continue;
        size_t n_bright = 0;
        size_t last_bright = 0;
        for (size_t j = 0; j < flags.size(); ++j) {
            if (flags[j]) {
                ++n_bright;
                last_bright = j;
            }
        }
        bool terminated = n_bright >= 2 && flags.size() - 1 - last_bright >= 3;
        if (terminated) out.push_back(k);
    }
    return out;
}

}  // namespace snvsim
