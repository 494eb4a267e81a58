// engine.hpp - stochastic simulation of pulse sequences
//
// Exact continuous-time simulation of the three-level chain, one repetition
// at a time, each repetition on its own counter-based RNG stream so results
// never depend on how repetitions are distributed over threads.
//
// Binned output uses the recording clock: bin times count only time spent in
// recorded segments, so traces have no dead stretches where the detector was
// gated off.  Event lists use physical sequence-local time.
#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

#include "pulse.hpp"
#include "rates.hpp"
#include "rng.hpp"

namespace snvsim {

enum class EventKind { photon_detected, to_dark, to_bright, segment_boundary };

inline std::string to_string(EventKind k) {
    switch (k) {
        case EventKind::photon_detected: return "photon_detected";
        case EventKind::to_dark: return "to_dark";
        case EventKind::to_bright: return "to_bright";
        case EventKind::segment_boundary: return "segment_boundary";
    }
    return "?";
}

struct EventRecord {
    double time_s = 0.0;  // physical time within the repetition
    EventKind kind = EventKind::photon_detected;
};

struct BinnedTrace {
    std::vector<double> bin_edges_s;  // recording-clock edges, size counts+1
    std::vector<uint64_t> counts;
    uint64_t n_reps = 0;
    uint64_t seed = 0;
    uint64_t sequence_hash = 0;

    size_t n_bins() const { return counts.size(); }
    double bin_center(size_t i) const { return 0.5 * (bin_edges_s[i] + bin_edges_s[i + 1]); }
    double bin_width(size_t i) const { return bin_edges_s[i + 1] - bin_edges_s[i]; }
};

struct EnginePolicy {
    bool allow_aggregate = true;
    // The aggregate path drops ionization within a window; permitted only
    // while k_ion * window_duration stays below this.
    double aggregate_threshold = 1e-3;
    int sweep_slices = 32;      // piecewise-constant slices per swept segment
    uint64_t rep_offset = 0;    // first repetition's RNG stream index
};

namespace detail {

// RNG stream ids within one repetition.
inline constexpr uint32_t stream_dynamics = 0;
inline constexpr uint32_t stream_diffusion = 1;  // used by the scan synthesizer
inline constexpr uint32_t stream_background = 2;

enum class Level : uint8_t { ground, excited, dark };

// One constant-rate piece of the sequence (a segment, or a slice of a swept
// segment).
struct WindowPlan {
    RateSet rates;
    double t_start = 0.0;     // physical time
    double t_end = 0.0;
    double rec_offset = 0.0;  // recording clock at window start
    double bg_rate = 0.0;     // background counts per second
    bool record = true;
    size_t segment_index = 0;
    bool segment_end = false;  // last window of its segment
};

inline std::vector<WindowPlan> plan_sequence(const EmitterParams& em, const PulseSequence& seq,
                                             const EnginePolicy& policy,
                                             double center_offset_hz = 0.0) {
    std::vector<WindowPlan> plans;
    double t = 0.0;
    double rec = 0.0;
    for (size_t i = 0; i < seq.segments.size(); ++i) {
        const PulseSegment& seg = seq.segments[i];
        int slices = seg.sweep ? std::max(1, policy.sweep_slices) : 1;
        double dt = seg.duration_s / slices;
        for (int sl = 0; sl < slices; ++sl) {
            WindowPlan w;
            LaserState laser = seg.laser;
            double frac_mid = (sl + 0.5) / slices;
            laser.res_detuning_hz = seg.detuning_at(frac_mid) - center_offset_hz;
            w.rates = build_rates(em, laser);
            w.t_start = t + sl * dt;
            w.t_end = (sl + 1 == slices) ? t + seg.duration_s : t + (sl + 1) * dt;
            w.rec_offset = rec + (seg.record ? sl * dt : 0.0);
            w.bg_rate = em.bg_dark_cps + em.bg_green_cps_per_w * seg.laser.green_power_w;
            w.record = seg.record;
            w.segment_index = i;
            w.segment_end = (sl + 1 == slices);
            plans.push_back(w);
        }
        t += seg.duration_s;
        if (seg.record) rec += seg.duration_s;
    }
    return plans;
}

// Exact stochastic stepping across one constant-rate window.  Residual
// holding times are discarded at the window edge, which is valid because the
// exponential distribution is memoryless.
template <class PhotonFn, class TransFn>
inline void run_window_exact(const RateSet& r, double detect_eff, double t_begin, double t_end,
                             Level& st, CounterRng& rng, PhotonFn&& on_photon,
                             TransFn&& on_transition) {
    const double tot_e = r.stim_hz + r.gamma_sp_hz + r.ion_hz;
    const double thr_stim = r.stim_hz;
    const double thr_detect = r.stim_hz + r.gamma_sp_hz * detect_eff;
    const double thr_spont = r.stim_hz + r.gamma_sp_hz;
    double t = t_begin;
    for (;;) {
        switch (st) {
            case Level::ground: {
                if (r.pump_hz <= 0.0) return;
                t += exponential(rng, r.pump_hz);
                if (t >= t_end) return;
                st = Level::excited;
                break;
            }
            case Level::excited: {
                if (tot_e <= 0.0) return;
                t += exponential(rng, tot_e);
                if (t >= t_end) return;
                double u = uniform01(rng) * tot_e;
                if (u < thr_stim) {
                    st = Level::ground;
                } else if (u < thr_detect) {
                    st = Level::ground;
                    on_photon(t);
                } else if (u < thr_spont) {
                    st = Level::ground;
                } else {
                    st = Level::dark;
                    on_transition(t, EventKind::to_dark);
                }
                break;
            }
            case Level::dark: {
                if (r.rec_hz <= 0.0) return;
                t += exponential(rng, r.rec_hz);
                if (t >= t_end) return;
                st = Level::ground;
                on_transition(t, EventKind::to_bright);
                break;
            }
        }
    }
}

struct BinLayout {
    std::vector<double> edges;  // recording clock, last bin may be short
    double width = 0.0;

    size_t n_bins() const { return edges.empty() ? 0 : edges.size() - 1; }

    size_t index_for(double t_rec) const {
        if (t_rec <= 0.0) return 0;
        size_t i = static_cast<size_t>(t_rec / width);
        size_t n = n_bins();
        return i < n ? i : n - 1;
    }
};

inline BinLayout make_bin_layout(const PulseSequence& seq) {
    BinLayout layout;
    layout.width = seq.bin_width_s;
    double total = seq.recorded_duration_s();
    size_t n = static_cast<size_t>(std::ceil(total / seq.bin_width_s - 1e-9));
    if (n == 0) n = 1;
    layout.edges.resize(n + 1);
    for (size_t k = 0; k < n; ++k) layout.edges[k] = k * seq.bin_width_s;
    layout.edges[n] = total;
    return layout;
}

// Poisson counts in every bin overlapping [rec_lo, rec_hi) at a given rate.
inline void add_poisson_per_bin(const BinLayout& layout, std::vector<uint64_t>& counts,
                                CounterRng& rng, double rec_lo, double rec_hi, double rate) {
    if (rate <= 0.0 || rec_hi <= rec_lo) return;
    size_t b = layout.index_for(rec_lo + 1e-15);
    for (; b < layout.n_bins() && layout.edges[b] < rec_hi; ++b) {
        double lo = std::max(layout.edges[b], rec_lo);
        double hi = std::min(layout.edges[b + 1], rec_hi);
        if (hi > lo) counts[b] += poisson(rng, rate * (hi - lo));
    }
}

// Quasi-steady treatment of a bright window: photon counts collapse to a
// Poisson process at the mean signal rate and ionization is neglected.  Only
// legal when the neglected ionization probability is tiny; see EnginePolicy.
inline void run_window_aggregate(const WindowPlan& w, double detect_eff, Level& st,
                                 CounterRng& rng, const BinLayout& layout,
                                 std::vector<uint64_t>& counts) {
    double pe = excited_fraction_qss(w.rates);
    if (w.record) {
        double signal = detect_eff * w.rates.gamma_sp_hz * pe;
        double rec_lo = w.rec_offset;
        double rec_hi = w.rec_offset + (w.t_end - w.t_start);
        add_poisson_per_bin(layout, counts, rng, rec_lo, rec_hi, signal);
    }
    st = uniform01(rng) < pe ? Level::excited : Level::ground;
}

}  // namespace detail

// Exact event-level simulation of a single repetition.  Events carry physical
// times; photons and backgrounds are generated in recorded and unrecorded
// segments alike (the record flag only controls binning).  One
// segment_boundary event closes each segment.
inline std::vector<EventRecord> simulate_repetition(const EmitterParams& em,
                                                    const PulseSequence& seq, uint64_t seed,
                                                    uint64_t rep_index,
                                                    const EnginePolicy& policy = {}) {
    em.validate();
    seq.validate();
    CounterRng dyn(seed, policy.rep_offset + rep_index, detail::stream_dynamics);
    CounterRng bg(seed, policy.rep_offset + rep_index, detail::stream_background);
    auto plans = detail::plan_sequence(em, seq, policy);

    std::vector<EventRecord> events;
    detail::Level st = seq.start_in_dark ? detail::Level::dark : detail::Level::ground;
    size_t seg_first_event = 0;  // index into events where this segment begins
    double seg_t_start = 0.0;
    for (const auto& w : plans) {
        detail::run_window_exact(
            w.rates, em.detect_eff, w.t_start, w.t_end, st, dyn,
            [&](double t) { events.push_back({t, EventKind::photon_detected}); },
            [&](double t, EventKind k) { events.push_back({t, k}); });
        if (w.segment_end) {
            double seg_span = w.t_end - seg_t_start;
            uint64_t nbg = poisson(bg, w.bg_rate * seg_span);
            for (uint64_t j = 0; j < nbg; ++j)
                events.push_back(
                    {seg_t_start + uniform01(bg) * seg_span, EventKind::photon_detected});
            std::sort(events.begin() + static_cast<std::ptrdiff_t>(seg_first_event),
                      events.end(), [](const EventRecord& a, const EventRecord& b) {
                          return a.time_s < b.time_s;
                      });
            events.push_back({w.t_end, EventKind::segment_boundary});
            seg_first_event = events.size();
            seg_t_start = w.t_end;
        }
    }
    return events;
}

// Ensemble simulation with binned accumulation.  Each repetition runs on its
// own RNG stream addressed by repetition index, so any thread count produces
// identical counts.
inline BinnedTrace simulate_ensemble(const EmitterParams& em, const PulseSequence& seq,
                                     uint64_t seed, int threads = 1,
                                     const EnginePolicy& policy = {}) {
    em.validate();
    seq.validate();
    if (threads < 1) throw std::invalid_argument("simulate_ensemble: threads must be >= 1");
    auto plans = detail::plan_sequence(em, seq, policy);
    detail::BinLayout layout = detail::make_bin_layout(seq);

    auto run_range = [&](uint64_t rep_lo, uint64_t rep_hi, std::vector<uint64_t>& counts) {
        for (uint64_t rep = rep_lo; rep < rep_hi; ++rep) {
            CounterRng dyn(seed, policy.rep_offset + rep, detail::stream_dynamics);
            CounterRng bg(seed, policy.rep_offset + rep, detail::stream_background);
            detail::Level st =
                seq.start_in_dark ? detail::Level::dark : detail::Level::ground;
            for (const auto& w : plans) {
                double dur = w.t_end - w.t_start;
                bool aggregate_ok = policy.allow_aggregate &&
                                    st != detail::Level::dark &&
                                    w.rates.ion_hz * dur < policy.aggregate_threshold;
                if (aggregate_ok) {
                    detail::run_window_aggregate(w, em.detect_eff, st, dyn, layout, counts);
                } else if (w.record) {
                    double shift = w.rec_offset - w.t_start;
                    detail::run_window_exact(
                        w.rates, em.detect_eff, w.t_start, w.t_end, st, dyn,
                        [&](double t) { ++counts[layout.index_for(t + shift)]; },
                        [](double, EventKind) {});
                } else {
                    detail::run_window_exact(w.rates, em.detect_eff, w.t_start, w.t_end, st,
                                             dyn, [](double) {}, [](double, EventKind) {});
                }
                if (w.record)
                    detail::add_poisson_per_bin(layout, counts, bg, w.rec_offset,
                                                w.rec_offset + dur, w.bg_rate);
            }
        }
    };

    std::vector<std::vector<uint64_t>> partials;
    uint64_t reps = seq.repetitions;
    int nthreads = static_cast<int>(std::min<uint64_t>(threads, reps));
    partials.assign(nthreads, std::vector<uint64_t>(layout.n_bins(), 0));
    if (nthreads == 1) {
        run_range(0, reps, partials[0]);
    } else {
        std::vector<std::thread> pool;
        uint64_t chunk = reps / nthreads;
        uint64_t extra = reps % nthreads;
        uint64_t lo = 0;
        for (int t = 0; t < nthreads; ++t) {
            uint64_t hi = lo + chunk + (static_cast<uint64_t>(t) < extra ? 1 : 0);
            pool.emplace_back(run_range, lo, hi, std::ref(partials[t]));
            lo = hi;
        }
        for (auto& th : pool) th.join();
    }

    BinnedTrace trace;
    trace.bin_edges_s = layout.edges;
    trace.counts.assign(layout.n_bins(), 0);
    for (const auto& part : partials)
        for (size_t b = 0; b < part.size(); ++b) trace.counts[b] += part[b];
    trace.n_reps = reps;
    trace.seed = seed;
    trace.sequence_hash = sequence_hash(seq);
    return trace;
}

// Continuous acquisition under fixed laser conditions; blinking shows up
// directly in the binned counts.
inline BinnedTrace real_time_trace(const EmitterParams& em, const LaserState& laser,
                                   double total_s, double bin_width_s, uint64_t seed,
                                   const EnginePolicy& policy = {}) {
    if (!(total_s > 0.0)) throw std::invalid_argument("real_time_trace: total time must be > 0");
    PulseSequence seq;
    seq.label = "real_time";
    seq.repetitions = 1;
    seq.bin_width_s = bin_width_s;
    PulseSegment watch;
    watch.label = "watch";
    watch.duration_s = total_s;
    watch.laser = laser;
    seq.segments.push_back(watch);
    return simulate_ensemble(em, seq, seed, 1, policy);
}

}  // namespace snvsim
