#include <catch2/catch_amalgamated.hpp>
#include <snvsim/engine.hpp>
#include <snvsim/units.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace snvsim;

namespace {

// Non-stiff test emitter: gamma_sp = 1e4 so the occupation ODE can be
// integrated with plain RK4 as an oracle.
EmitterParams slow_emitter() {
    EmitterParams em;
    em.lifetime_excited_s = 1e-4;
    em.sat_power_resonant_w = 1e-7;
    em.ion_coeff_green_hz_per_w = 5e6;
    em.rec_coeff_green_hz_per_w = 3e6;
    em.detect_eff = 0.05;
    return em;
}

// RK4 on the occupation ODE, accumulating the excited-state time integral.
struct OdeResult {
    StateVector p;
    double excited_integral = 0.0;
};

OdeResult ode_evolve(const RateSet& rt, StateVector p, double t_total, double dt_max) {
    int n = std::max(1, int(std::ceil(t_total / dt_max)));
    double h = t_total / n;
    auto deriv = [&](const StateVector& s) {
        StateVector d;
        double a = rt.pump_hz, m = rt.stim_hz + rt.gamma_sp_hz;
        d.ground = -a * s.ground + m * s.excited + rt.rec_hz * s.dark;
        d.excited = a * s.ground - (m + rt.ion_hz) * s.excited;
        d.dark = rt.ion_hz * s.excited - rt.rec_hz * s.dark;
        return d;
    };
    OdeResult out;
    for (int i = 0; i < n; ++i) {
        StateVector k1 = deriv(p);
        StateVector p2{p.ground + 0.5 * h * k1.ground, p.excited + 0.5 * h * k1.excited,
                       p.dark + 0.5 * h * k1.dark};
        StateVector k2 = deriv(p2);
        StateVector p3{p.ground + 0.5 * h * k2.ground, p.excited + 0.5 * h * k2.excited,
                       p.dark + 0.5 * h * k2.dark};
        StateVector k3 = deriv(p3);
        StateVector p4{p.ground + h * k3.ground, p.excited + h * k3.excited,
                       p.dark + h * k3.dark};
        StateVector k4 = deriv(p4);
        // Simpson-consistent integral of the excited population over the step.
        out.excited_integral +=
            h / 6.0 * (p.excited + 4.0 * p2.excited + p4.excited);
        p.ground += h / 6.0 * (k1.ground + 2 * k2.ground + 2 * k3.ground + k4.ground);
        p.excited += h / 6.0 * (k1.excited + 2 * k2.excited + 2 * k3.excited + k4.excited);
        p.dark += h / 6.0 * (k1.dark + 2 * k2.dark + 2 * k3.dark + k4.dark);
    }
    out.p = p;
    return out;
}

double ks_statistic(std::vector<double> sample, double rate) {
    std::sort(sample.begin(), sample.end());
    double n = double(sample.size());
    double d = 0.0;
    for (size_t i = 0; i < sample.size(); ++i) {
        double f = 1.0 - std::exp(-rate * sample[i]);
        d = std::max(d, std::max(f - double(i) / n, double(i + 1) / n - f));
    }
    return d;
}

}  // namespace

TEST_CASE("bin layout follows the recording clock") {
    PulseSequence seq;
    seq.bin_width_s = 2 * units::ms;
    PulseSegment a;
    a.duration_s = 2 * units::ms;
    seq.segments.push_back(a);
    PulseSegment gap;
    gap.duration_s = 5 * units::ms;
    gap.record = false;
    seq.segments.push_back(gap);
    PulseSegment b;
    b.duration_s = 3 * units::ms;
    seq.segments.push_back(b);

    detail::BinLayout layout = detail::make_bin_layout(seq);
    REQUIRE(layout.n_bins() == 3);  // 5 ms recorded, 2 ms bins, last one short
    CHECK(layout.edges.front() == 0.0);
    CHECK(layout.edges.back() == Catch::Approx(5 * units::ms));
    CHECK(layout.index_for(4.9 * units::ms) == 2);
    CHECK(layout.index_for(5.0 * units::ms) == 2);  // clamp at the end
    CHECK(layout.index_for(0.0) == 0);
}

TEST_CASE("background accumulates only over recorded segments") {
    EmitterParams em;
    em.bg_dark_cps = 5000.0;
    PulseSequence seq;
    seq.bin_width_s = 1 * units::ms;
    PulseSegment rec1;
    rec1.duration_s = 2 * units::ms;
    seq.segments.push_back(rec1);
    PulseSegment gap;
    gap.duration_s = 50 * units::ms;
    gap.record = false;
    seq.segments.push_back(gap);
    PulseSegment rec2;
    rec2.duration_s = 3 * units::ms;
    seq.segments.push_back(rec2);
    seq.repetitions = 2000;

    BinnedTrace tr = simulate_ensemble(em, seq, 77);
    double total = double(std::accumulate(tr.counts.begin(), tr.counts.end(), uint64_t(0)));
    double expect = 5000.0 * 5e-3 * 2000;  // recorded time only
    CHECK(std::abs(total - expect) < 4.0 * std::sqrt(expect));
}

TEST_CASE("ensemble is reproducible and thread-count independent") {
    EmitterParams em = slow_emitter();
    PulseSequence seq;
    seq.label = "det";
    seq.repetitions = 999;
    seq.bin_width_s = 5 * units::ms;
    PulseSegment s;
    s.duration_s = 50 * units::ms;
    s.laser.res_power_w = 2e-7;
    s.laser.green_power_w = 10 * units::uW;
    seq.segments.push_back(s);

    BinnedTrace t1 = simulate_ensemble(em, seq, 4242, 1);
    BinnedTrace t1b = simulate_ensemble(em, seq, 4242, 1);
    BinnedTrace t3 = simulate_ensemble(em, seq, 4242, 3);
    CHECK(t1.counts == t1b.counts);
    CHECK(t1.counts == t3.counts);
    BinnedTrace other = simulate_ensemble(em, seq, 4243, 1);
    CHECK(t1.counts != other.counts);
}

TEST_CASE("repetition streams are addressed by index") {
    EmitterParams em = slow_emitter();
    PulseSequence seq;
    seq.repetitions = 800;
    seq.bin_width_s = 5 * units::ms;
    PulseSegment s;
    s.duration_s = 30 * units::ms;
    s.laser.res_power_w = 2e-7;
    s.laser.green_power_w = 10 * units::uW;
    seq.segments.push_back(s);

    BinnedTrace whole = simulate_ensemble(em, seq, 99, 1);

    PulseSequence half = seq;
    half.repetitions = 400;
    EnginePolicy lo, hi;
    hi.rep_offset = 400;
    BinnedTrace a = simulate_ensemble(em, half, 99, 1, lo);
    BinnedTrace b = simulate_ensemble(em, half, 99, 1, hi);
    for (size_t i = 0; i < whole.n_bins(); ++i)
        CHECK(whole.counts[i] == a.counts[i] + b.counts[i]);
}

TEST_CASE("binned means match the occupation ODE") {
    EmitterParams em = slow_emitter();
    LaserState laser;
    laser.res_power_w = 2e-7;
    laser.green_power_w = 10 * units::uW;
    RateSet rt = build_rates(em, laser);

    PulseSequence seq;
    seq.repetitions = 4000;
    seq.bin_width_s = 5 * units::ms;
    PulseSegment s;
    s.duration_s = 50 * units::ms;
    s.laser = laser;
    seq.segments.push_back(s);

    // Per-bin expected counts from the ODE oracle.
    std::vector<double> expect;
    StateVector p;
    for (int b = 0; b < 10; ++b) {
        OdeResult step = ode_evolve(rt, p, 5e-3, 2e-7);
        expect.push_back(em.detect_eff * em.gamma_sp_hz() * step.excited_integral);
        p = step.p;
    }

    // Empirical per-bin scatter from 16 sub-ensembles of 250 repetitions.
    const int groups = 16;
    std::vector<std::vector<uint64_t>> parts;
    PulseSequence sub = seq;
    sub.repetitions = 250;
    for (int g = 0; g < groups; ++g) {
        EnginePolicy pol;
        pol.rep_offset = uint64_t(g) * 250;
        parts.push_back(simulate_ensemble(em, sub, 31337, 1, pol).counts);
    }
    for (size_t b = 0; b < expect.size(); ++b) {
        double mean = 0.0, var = 0.0;
        for (int g = 0; g < groups; ++g) mean += double(parts[size_t(g)][b]);
        mean /= groups;
        for (int g = 0; g < groups; ++g) {
            double d = double(parts[size_t(g)][b]) - mean;
            var += d * d;
        }
        var /= (groups - 1);
        double se = std::sqrt(var / groups);
        double want = expect[b] * 250.0;  // per sub-ensemble of 250 repetitions
        double z = (mean - want) / se;
        INFO("bin " << b << " mean " << mean << " expect " << want << " z " << z);
        CHECK(std::abs(z) < 4.5);
    }
}

TEST_CASE("aggregate and exact paths agree when ionization is negligible") {
    EmitterParams em = slow_emitter();
    em.ion_coeff_green_hz_per_w = 0.0;
    em.rec_coeff_green_hz_per_w = 0.0;
    PulseSequence seq;
    seq.repetitions = 2000;
    seq.bin_width_s = 0.1 * units::ms;
    PulseSegment s;
    s.duration_s = 1 * units::ms;
    s.laser.res_power_w = 2e-7;
    seq.segments.push_back(s);

    EnginePolicy agg, exact;
    exact.allow_aggregate = false;
    BinnedTrace ta = simulate_ensemble(em, seq, 8, 1, agg);
    BinnedTrace te = simulate_ensemble(em, seq, 9, 1, exact);
    double a = double(std::accumulate(ta.counts.begin(), ta.counts.end(), uint64_t(0)));
    double e = double(std::accumulate(te.counts.begin(), te.counts.end(), uint64_t(0)));
    double z = (a - e) / std::sqrt(a + e);
    INFO("aggregate " << a << " exact " << e);
    CHECK(std::abs(z) < 4.0);
}

TEST_CASE("start_in_dark with no recovery stays silent") {
    EmitterParams em = slow_emitter();
    em.rec_coeff_green_hz_per_w = 0.0;
    PulseSequence seq;
    seq.repetitions = 50;
    seq.start_in_dark = true;
    seq.bin_width_s = 1 * units::ms;
    PulseSegment s;
    s.duration_s = 10 * units::ms;
    s.laser.res_power_w = 2e-7;
    seq.segments.push_back(s);

    BinnedTrace dark = simulate_ensemble(em, seq, 3);
    CHECK(std::accumulate(dark.counts.begin(), dark.counts.end(), uint64_t(0)) == 0);

    seq.start_in_dark = false;
    BinnedTrace bright = simulate_ensemble(em, seq, 3);
    CHECK(std::accumulate(bright.counts.begin(), bright.counts.end(), uint64_t(0)) > 0);
}

TEST_CASE("event lists are ordered with one boundary per segment") {
    EmitterParams em = slow_emitter();
    em.bg_dark_cps = 2000.0;  // keeps P(no event in the unrecorded half) < 1e-3
    PulseSequence seq;
    seq.repetitions = 1;
    seq.bin_width_s = 1 * units::ms;
    PulseSegment a;
    a.duration_s = 4 * units::ms;
    a.laser.res_power_w = 2e-7;
    a.laser.green_power_w = 10 * units::uW;
    seq.segments.push_back(a);
    PulseSegment b = a;
    b.record = false;  // events must still be generated here
    seq.segments.push_back(b);

    auto events = simulate_repetition(em, seq, 5, 0);
    int boundaries = 0;
    double prev = 0.0;
    int photons_late = 0;
    for (const auto& ev : events) {
        CHECK(ev.time_s >= prev - 1e-15);
        prev = ev.time_s;
        CHECK(ev.time_s <= 8 * units::ms + 1e-12);
        if (ev.kind == EventKind::segment_boundary) ++boundaries;
        if (ev.kind == EventKind::photon_detected && ev.time_s > 4 * units::ms) ++photons_late;
    }
    CHECK(boundaries == 2);
    CHECK(photons_late > 0);  // unrecorded segment still produced events

    // Charge transitions alternate, starting with to_dark from a bright start.
    EventKind expect_next = EventKind::to_dark;
    for (const auto& ev : events) {
        if (ev.kind != EventKind::to_dark && ev.kind != EventKind::to_bright) continue;
        CHECK(ev.kind == expect_next);
        expect_next = expect_next == EventKind::to_dark ? EventKind::to_bright
                                                        : EventKind::to_dark;
    }
}

TEST_CASE("first passage to dark is exponential at the telegraph rate") {
    // Cycling 1.5e5 Hz against charge rates ~1e2 Hz: separation 1e3.
    RateSet r;
    r.pump_hz = 5e4;
    r.stim_hz = 5e4;
    r.gamma_sp_hz = 1e5;
    r.ion_hz = 120.0;
    r.rec_hz = 0.0;
    double k_off = excited_fraction_qss(r) * r.ion_hz;

    const int n = 2000;
    std::vector<double> sample;
    sample.reserve(n);
    const double window = 0.02;
    for (int i = 0; i < n; ++i) {
        CounterRng rng(5150, uint64_t(i), 0);
        detail::Level st = detail::Level::ground;
        double first = -1.0;
        double t0 = 0.0;
        while (first < 0.0) {
            detail::run_window_exact(r, 0.0, t0, t0 + window, st, rng, [](double) {},
                                     [&](double td, EventKind k) {
                                         if (k == EventKind::to_dark && first < 0.0)
                                             first = td;
                                     });
            t0 += window;
        }
        sample.push_back(first);
    }
    double d = ks_statistic(sample, k_off);
    INFO("KS statistic " << d << " against rate " << k_off);
    CHECK(d < 0.04);
}

TEST_CASE("real-time trace blinks between two levels") {
    EmitterParams em;
    em.lifetime_excited_s = 5.2 * units::ns;
    em.sat_power_resonant_w = 100 * units::nW;
    em.ion_coeff_green_hz_per_w = 1.01e9;
    em.rec_coeff_green_hz_per_w = 5e6;
    em.detect_eff = 5e-4;
    LaserState laser;
    laser.res_power_w = 1 * units::nW;
    laser.green_power_w = 10 * units::uW;

    RateSet rt = build_rates(em, laser);
    TelegraphRates tg = effective_telegraph(rt);

    BinnedTrace tr = real_time_trace(em, laser, 10.0, 50 * units::ms, 1312);
    double bright_level = em.detect_eff * em.gamma_sp_hz() *
                          excited_fraction_qss(rt) * 50e-3;
    int above = 0;
    for (uint64_t c : tr.counts)
        if (double(c) > 0.5 * bright_level) ++above;
    double frac = double(above) / double(tr.n_bins());
    INFO("bright fraction " << frac << " expected " << tg.bright_ss);
    CHECK(std::abs(frac - tg.bright_ss) < 0.10);
}

TEST_CASE("swept segments discretize the chirp") {
    EmitterParams em = slow_emitter();
    PulseSequence seq;
    seq.bin_width_s = 1 * units::ms;
    PulseSegment s;
    s.duration_s = 8 * units::ms;
    s.laser.res_power_w = 2e-7;
    s.sweep = DetuningSweep{-4 * units::MHz, 4 * units::MHz};
    seq.segments.push_back(s);

    EnginePolicy pol;
    pol.sweep_slices = 8;
    auto plans = detail::plan_sequence(em, seq, pol);
    REQUIRE(plans.size() == 8);
    CHECK(plans.front().t_start == 0.0);
    CHECK(plans.back().t_end == Catch::Approx(8 * units::ms));
    CHECK(plans.back().segment_end);
    for (size_t i = 0; i + 1 < plans.size(); ++i) {
        CHECK_FALSE(plans[i].segment_end);
        CHECK(plans[i].t_end == Catch::Approx(plans[i + 1].t_start));
    }
    // Slice midpoints: first slice covers [-4,-3] MHz, midpoint -3.5 MHz.
    double gamma = em.gamma_sp_hz();
    double L0 = plans[0].rates.pump_hz / (0.5 * gamma * 2.0);
    double expect_L0 = lorentzian_response(-3.5 * units::MHz, em.natural_linewidth_hz());
    CHECK(L0 == Catch::Approx(expect_L0).epsilon(1e-12));

    // A center offset shifts every slice detuning.
    auto shifted = detail::plan_sequence(em, seq, pol, 1 * units::MHz);
    double L0s = shifted[0].rates.pump_hz / (0.5 * gamma * 2.0);
    CHECK(L0s ==
          Catch::Approx(lorentzian_response(-4.5 * units::MHz, em.natural_linewidth_hz()))
              .epsilon(1e-12));
}

TEST_CASE("engine rejects invalid invocations") {
    EmitterParams em = slow_emitter();
    PulseSequence seq;
    seq.bin_width_s = 1 * units::ms;
    PulseSegment s;
    s.duration_s = 2 * units::ms;
    seq.segments.push_back(s);
    CHECK_THROWS_AS(simulate_ensemble(em, seq, 1, 0), std::invalid_argument);
    LaserState laser;
    CHECK_THROWS_AS(real_time_trace(em, laser, 0.0, 1e-3, 1), std::invalid_argument);
}
