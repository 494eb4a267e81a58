// pulse.hpp - pulse sequence description, file format, canonical builders
//
// A sequence is an ordered list of laser segments executed once per
// repetition.  Each repetition starts from a fresh emitter (bright ground
// state unless start_in_dark is set) and detected counts are accumulated
// into shared time bins across repetitions.
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "hashing.hpp"
#include "kv.hpp"
#include "rates.hpp"
#include "units.hpp"

namespace snvsim {

// Linear chirp of the resonant detuning across one segment.
struct DetuningSweep {
    double start_hz = 0.0;
    double end_hz = 0.0;
};

struct PulseSegment {
    double duration_s = 0.0;
    LaserState laser;                   // laser.res_detuning_hz used when no sweep
    std::optional<DetuningSweep> sweep;
    bool record = true;
    std::string label;

    // Detuning at a fractional position in [0,1] through the segment.
    double detuning_at(double frac) const {
        if (!sweep) return laser.res_detuning_hz;
        return sweep->start_hz + (sweep->end_hz - sweep->start_hz) * frac;
    }

    void validate() const {
        if (!(duration_s > 0.0))
            throw ConfigError("segment '" + label + "': duration must be > 0");
        laser.validate();
        if (sweep && (!std::isfinite(sweep->start_hz) || !std::isfinite(sweep->end_hz)))
            throw ConfigError("segment '" + label + "': sweep bounds must be finite");
    }
};

struct PulseSequence {
    std::vector<PulseSegment> segments;
    uint64_t repetitions = 1;
    double bin_width_s = 0.0;
    std::string label;
    bool start_in_dark = false;

    double total_duration_s() const {
        double t = 0.0;
        for (const auto& s : segments) t += s.duration_s;
        return t;
    }

    double recorded_duration_s() const {
        double t = 0.0;
        for (const auto& s : segments)
            if (s.record) t += s.duration_s;
        return t;
    }

    void validate() const {
        if (segments.empty()) throw ConfigError("sequence: no segments");
        if (repetitions < 1) throw ConfigError("sequence: repetitions must be >= 1");
        if (!(bin_width_s > 0.0)) throw ConfigError("sequence: bin_width must be > 0");
        double shortest_recorded = 0.0;
        bool any_recorded = false;
        for (const auto& s : segments) {
            s.validate();
            if (s.record) {
                shortest_recorded =
                    any_recorded ? std::min(shortest_recorded, s.duration_s) : s.duration_s;
                any_recorded = true;
            }
        }
        if (!any_recorded) throw ConfigError("sequence: no recorded segment");
        if (bin_width_s > shortest_recorded * (1.0 + 1e-12))
            throw ConfigError("sequence: bin_width exceeds shortest recorded segment");
    }
};

namespace detail {

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// Canonical text form: fixed key order, full-precision numbers.  Parsing the
// output reproduces the sequence exactly, and re-serializing reproduces the
// bytes, which is what the content hash is taken over.
inline std::string serialize_sequence(const PulseSequence& seq) {
    std::ostringstream out;
    out << "[sequence]\n";
    out << "label = " << seq.label << "\n";
    out << "repetitions = " << seq.repetitions << "\n";
    out << "bin_width_us = " << detail::fmt_g(seq.bin_width_s / units::us) << "\n";
    out << "start_in_dark = " << (seq.start_in_dark ? "true" : "false") << "\n";
    for (const auto& s : seq.segments) {
        out << "\n[segment]\n";
        out << "label = " << s.label << "\n";
        out << "duration_ms = " << detail::fmt_g(s.duration_s / units::ms) << "\n";
        out << "res_power_nW = " << detail::fmt_g(s.laser.res_power_w / units::nW) << "\n";
        if (s.sweep) {
            out << "res_detuning_start_MHz = " << detail::fmt_g(s.sweep->start_hz / units::MHz)
                << "\n";
            out << "res_detuning_end_MHz = " << detail::fmt_g(s.sweep->end_hz / units::MHz)
                << "\n";
        } else {
            out << "res_detuning_MHz = " << detail::fmt_g(s.laser.res_detuning_hz / units::MHz)
                << "\n";
        }
        out << "green_power_uW = " << detail::fmt_g(s.laser.green_power_w / units::uW) << "\n";
        out << "record = " << (s.record ? "true" : "false") << "\n";
    }
    return out.str();
}

inline uint64_t sequence_hash(const PulseSequence& seq) {
    return fnv1a64(serialize_sequence(seq));
}

inline PulseSequence parse_sequence(std::string_view text,
                                    const std::string& origin = "<string>") {
    KvDocument doc = KvDocument::parse(text, origin);
    const KvSection* head = doc.find("sequence");
    if (!head) throw ParseError(origin, 1, "missing [sequence] section");

    PulseSequence seq;
    kv_require_known(*head, {"label", "repetitions", "bin_width_us", "start_in_dark"}, origin);
    if (const KvEntry* e = head->find("label")) seq.label = e->value;
    if (const KvEntry* e = head->find("repetitions")) {
        long long n = kv_int(*e, origin);
        if (n < 1) throw ParseError(origin, e->line, "repetitions must be >= 1");
        seq.repetitions = static_cast<uint64_t>(n);
    }
    seq.bin_width_s = kv_double(kv_require(*head, "bin_width_us", origin), origin) * units::us;
    if (const KvEntry* e = head->find("start_in_dark")) seq.start_in_dark = kv_bool(*e, origin);

    for (const KvSection* sec : doc.find_all("segment")) {
        kv_require_known(*sec,
                         {"label", "duration_ms", "res_power_nW", "res_detuning_MHz",
                          "res_detuning_start_MHz", "res_detuning_end_MHz", "green_power_uW",
                          "record"},
                         origin);
        PulseSegment s;
        if (const KvEntry* e = sec->find("label")) s.label = e->value;
        s.duration_s = kv_double(kv_require(*sec, "duration_ms", origin), origin) * units::ms;
        if (const KvEntry* e = sec->find("res_power_nW"))
            s.laser.res_power_w = kv_double(*e, origin) * units::nW;
        if (const KvEntry* e = sec->find("green_power_uW"))
            s.laser.green_power_w = kv_double(*e, origin) * units::uW;
        bool has_start = sec->has("res_detuning_start_MHz");
        bool has_end = sec->has("res_detuning_end_MHz");
        if (has_start != has_end)
            throw ParseError(origin, sec->line,
                             "detuning sweep needs both res_detuning_start_MHz and "
                             "res_detuning_end_MHz");
        if (has_start) {
            if (sec->has("res_detuning_MHz"))
                throw ParseError(origin, sec->line,
                                 "res_detuning_MHz conflicts with a detuning sweep");
            DetuningSweep sw;
            sw.start_hz =
                kv_double(*sec->find("res_detuning_start_MHz"), origin) * units::MHz;
            sw.end_hz = kv_double(*sec->find("res_detuning_end_MHz"), origin) * units::MHz;
            s.sweep = sw;
            s.laser.res_detuning_hz = sw.start_hz;
        } else if (const KvEntry* e = sec->find("res_detuning_MHz")) {
            s.laser.res_detuning_hz = kv_double(*e, origin) * units::MHz;
        }
        if (const KvEntry* e = sec->find("record")) s.record = kv_bool(*e, origin);
        seq.segments.push_back(std::move(s));
    }
    for (const auto& sec : doc.sections)
        if (sec.name != "sequence" && sec.name != "segment")
            throw ParseError(origin, sec.line, "unknown section [" + sec.name + "]");
    seq.validate();
    return seq;
}

inline PulseSequence load_sequence(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open sequence file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_sequence(ss.str(), path);
}

inline void save_sequence(const PulseSequence& seq, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write sequence file: " + path);
    out << serialize_sequence(seq);
}

// ---------------------------------------------------------------------------
// Frequency scan grids and scan programs

struct ScanGrid {
    double f_min_hz = -250.0 * units::MHz;  // relative to nominal center
    double f_max_hz = 250.0 * units::MHz;
    double step_hz = 2.0 * units::MHz;
    double dwell_s = 10.0 * units::ms;

    void validate() const {
        if (!(step_hz > 0.0)) throw ConfigError("scan grid: step must be > 0");
        if (!(dwell_s > 0.0)) throw ConfigError("scan grid: dwell must be > 0");
        if (f_max_hz < f_min_hz) throw ConfigError("scan grid: f_max < f_min");
    }

    // Ascending grid points, both endpoints included when the span divides.
    std::vector<double> points() const {
        validate();
        std::vector<double> pts;
        long n = static_cast<long>(std::floor((f_max_hz - f_min_hz) / step_hz + 1e-9)) + 1;
        pts.reserve(n);
        for (long j = 0; j < n; ++j) pts.push_back(f_min_hz + j * step_hz);
        if (pts.empty()) throw ConfigError("scan grid: no points");
        return pts;
    }
};

enum class ScanMode {
    resonant_only,   // scan the resonant laser, nothing else
    init_then_scan,  // green init pulse before each scan line
    simultaneous,    // green stays on during the scan
};

inline std::string to_string(ScanMode m) {
    switch (m) {
        case ScanMode::resonant_only: return "resonant_only";
        case ScanMode::init_then_scan: return "init_then_scan";
        case ScanMode::simultaneous: return "simultaneous";
    }
    return "?";
}

inline ScanMode scan_mode_from_string(const std::string& s) {
    if (s == "resonant_only") return ScanMode::resonant_only;
    if (s == "init_then_scan") return ScanMode::init_then_scan;
    if (s == "simultaneous") return ScanMode::simultaneous;
    throw ConfigError("unknown scan mode: " + s);
}

struct ScanProgram {
    ScanGrid grid;
    ScanMode mode = ScanMode::resonant_only;
    int n_scans = 1;
    double res_power_w = 1.0 * units::nW;
    double green_power_w = 20.0 * units::uW;       // simultaneous mode only
    double init_green_power_w = 20.0 * units::uW;  // init_then_scan mode only
    double init_duration_s = 50.0 * units::ms;

    void validate() const {
        grid.validate();
        if (n_scans < 1) throw ConfigError("scan program: n_scans must be >= 1");
        if (res_power_w < 0.0) throw ConfigError("scan program: res power must be >= 0");
        if (green_power_w < 0.0 || init_green_power_w < 0.0)
            throw ConfigError("scan program: green power must be >= 0");
        if (mode == ScanMode::init_then_scan && !(init_duration_s > 0.0))
            throw ConfigError("scan program: init duration must be > 0");
    }
};

// One scan line as a sequence: optional init segment, then one dwell segment
// per grid point.  direction +1 walks the grid ascending, -1 descending.
inline PulseSequence build_scan_sequence(const ScanProgram& prog, int scan_index,
                                         int direction) {
    prog.validate();
    PulseSequence seq;
    seq.label = "scan" + std::to_string(scan_index);
    seq.repetitions = 1;
    seq.bin_width_s = prog.grid.dwell_s;
    if (prog.mode == ScanMode::init_then_scan) {
        PulseSegment init;
        init.label = "init";
        init.duration_s = prog.init_duration_s;
        init.laser.green_power_w = prog.init_green_power_w;
        init.record = false;
        seq.segments.push_back(init);
    }
    std::vector<double> pts = prog.grid.points();
    size_t n = pts.size();
    for (size_t j = 0; j < n; ++j) {
        size_t idx = direction >= 0 ? j : n - 1 - j;
        PulseSegment dwell;
        dwell.label = "dwell" + std::to_string(idx);
        dwell.duration_s = prog.grid.dwell_s;
        dwell.laser.res_power_w = prog.res_power_w;
        dwell.laser.res_detuning_hz = pts[idx];
        if (prog.mode == ScanMode::simultaneous)
            dwell.laser.green_power_w = prog.green_power_w;
        seq.segments.push_back(dwell);
    }
    seq.validate();
    return seq;
}

// Boustrophedon acquisition: scan 0 runs the grid descending, scan 1
// ascending, alternating so consecutive scans meet at a shared endpoint.
inline int scan_direction(int scan_index) { return scan_index % 2 == 0 ? -1 : +1; }

inline std::vector<PulseSequence> expand_scan_program(const ScanProgram& prog) {
    prog.validate();
    std::vector<PulseSequence> out;
    out.reserve(prog.n_scans);
    for (int k = 0; k < prog.n_scans; ++k)
        out.push_back(build_scan_sequence(prog, k, scan_direction(k)));
    return out;
}

// ---------------------------------------------------------------------------
// Canonical named sequences
//
// Builders take a parameter map (name -> value in the units of the name's
// suffix) so config files and tests can override any knob; unknown names are
// rejected.

class ParamMap {
  public:
    ParamMap() = default;
    explicit ParamMap(std::map<std::string, double> vals) : vals_(std::move(vals)) {}

    double get(const std::string& name, double fallback) {
        seen_.insert({name, true});
        auto it = vals_.find(name);
        return it == vals_.end() ? fallback : it->second;
    }

    // After building, every provided key must have been consulted.
    void check_consumed(const std::string& builder) const {
        for (const auto& [k, v] : vals_) {
            (void)v;
            if (seen_.find(k) == seen_.end())
                throw ConfigError("sequence builder '" + builder + "': unknown parameter '" +
                                  k + "'");
        }
    }

  private:
    std::map<std::string, double> vals_;
    std::map<std::string, bool> seen_;
};

// Green init, then a long resonant-only window watched until the emitter
// ionizes.  Slow decay of the ensemble brightness gives the resonant-only
// ionization rate.
inline PulseSequence seq_resonant_decay(ParamMap p = {}) {
    PulseSequence seq;
    seq.label = "resonant_decay";
    seq.repetitions = static_cast<uint64_t>(p.get("repetitions", 100));
    seq.bin_width_s = p.get("bin_width_us", 100e3) * units::us;

    PulseSegment init;
    init.label = "init";
    init.duration_s = p.get("init_ms", 50) * units::ms;
    init.laser.green_power_w = p.get("init_green_uW", 20) * units::uW;
    init.record = false;
    seq.segments.push_back(init);

    PulseSegment probe;
    probe.label = "probe";
    probe.duration_s = p.get("window_ms", 8000) * units::ms;
    probe.laser.res_power_w = p.get("res_power_nW", 4) * units::nW;
    probe.laser.res_detuning_hz = p.get("res_detuning_MHz", 0) * units::MHz;
    seq.segments.push_back(probe);

    p.check_consumed("resonant_decay");
    seq.validate();
    return seq;
}

// Short simultaneous red+green pulse repeated many times; the averaged trace
// decays at the fast ionization rate and settles at the telegraph equilibrium.
inline PulseSequence seq_simultaneous_decay(ParamMap p = {}) {
    PulseSequence seq;
    seq.label = "simultaneous_decay";
    seq.repetitions = static_cast<uint64_t>(p.get("repetitions", 10000));
    seq.bin_width_s = p.get("bin_width_us", 20) * units::us;
    double green = p.get("green_power_uW", 11.5) * units::uW;

    double init_ms = p.get("init_ms", 0.5);
    if (init_ms > 0.0) {
        PulseSegment init;
        init.label = "init";
        init.duration_s = init_ms * units::ms;
        init.laser.green_power_w = green;
        init.record = false;
        seq.segments.push_back(init);
    }

    PulseSegment pulse;
    pulse.label = "pulse";
    pulse.duration_s = p.get("pulse_ms", 2) * units::ms;
    pulse.laser.res_power_w = p.get("res_power_nW", 5) * units::nW;
    pulse.laser.res_detuning_hz = p.get("res_detuning_MHz", 0) * units::MHz;
    pulse.laser.green_power_w = green;
    seq.segments.push_back(pulse);

    p.check_consumed("simultaneous_decay");
    seq.validate();
    return seq;
}

// Alternating resonant readouts and short simultaneous blocks: each block
// darkens the emitter a step further, the final long green pulse restores it.
inline PulseSequence seq_multi_block(ParamMap p = {}) {
    PulseSequence seq;
    seq.label = "multi_block";
    seq.repetitions = static_cast<uint64_t>(p.get("repetitions", 2000));
    seq.bin_width_s = p.get("bin_width_us", 100) * units::us;

    double res_w = p.get("res_power_nW", 4) * units::nW;
    double green_w = p.get("green_power_uW", 32.2) * units::uW;
    double readout_s = p.get("readout_ms", 5) * units::ms;
    double sim_s = p.get("sim_ms", 0.1) * units::ms;
    int n_blocks = static_cast<int>(p.get("blocks", 3));

    PulseSegment init;
    init.label = "init";
    init.duration_s = p.get("init_ms", 50) * units::ms;
    init.laser.green_power_w = p.get("init_green_uW", 20) * units::uW;
    init.record = false;
    seq.segments.push_back(init);

    for (int b = 0; b < n_blocks; ++b) {
        PulseSegment readout;
        readout.label = "readout" + std::to_string(b);
        readout.duration_s = readout_s;
        readout.laser.res_power_w = res_w;
        seq.segments.push_back(readout);
        if (b + 1 < n_blocks) {
            PulseSegment sim;
            sim.label = "sim" + std::to_string(b);
            sim.duration_s = sim_s;
            sim.laser.res_power_w = res_w;
            sim.laser.green_power_w = green_w;
            seq.segments.push_back(sim);
        }
    }

    double final_green_ms = p.get("final_green_ms", 50);
    if (final_green_ms > 0.0) {
        PulseSegment fin;
        fin.label = "reset";
        fin.duration_s = final_green_ms * units::ms;
        fin.laser.green_power_w = p.get("reset_green_uW", 20) * units::uW;
        fin.record = false;
        seq.segments.push_back(fin);
        // Readout after the reset so the recovered level is part of the trace.
        PulseSegment after;
        after.label = "readout_final";
        after.duration_s = readout_s;
        after.laser.res_power_w = res_w;
        seq.segments.push_back(after);
    }

    p.check_consumed("multi_block");
    seq.validate();
    return seq;
}

// Darken with a simultaneous pulse, then alternate green recovery pulses with
// short resonant readouts; brightness climbs back pulse by pulse.
inline PulseSequence seq_recovery(ParamMap p = {}) {
    PulseSequence seq;
    seq.label = "recovery";
    seq.repetitions = static_cast<uint64_t>(p.get("repetitions", 1500));
    seq.bin_width_s = p.get("bin_width_us", 100) * units::us;

    double res_w = p.get("res_power_nW", 5) * units::nW;
    double green_w = p.get("green_power_uW", 30.1) * units::uW;
    double readout_s = p.get("readout_ms", 1) * units::ms;
    int n_blocks = static_cast<int>(p.get("blocks", 16));

    PulseSegment darken;
    darken.label = "darken";
    darken.duration_s = p.get("darken_ms", 5) * units::ms;
    darken.laser.res_power_w = res_w;
    darken.laser.green_power_w = p.get("darken_green_uW", 30.1) * units::uW;
    darken.record = false;
    seq.segments.push_back(darken);

    for (int b = 0; b < n_blocks; ++b) {
        PulseSegment green;
        green.label = "green" + std::to_string(b);
        green.duration_s = p.get("green_ms", 5) * units::ms;
        green.laser.green_power_w = green_w;
        green.record = false;
        seq.segments.push_back(green);
        PulseSegment readout;
        readout.label = "readout" + std::to_string(b);
        readout.duration_s = readout_s;
        readout.laser.res_power_w = res_w;
        seq.segments.push_back(readout);
    }

    p.check_consumed("recovery");
    seq.validate();
    return seq;
}

// Single uninterrupted acquisition window, for blinking statistics.
inline PulseSequence seq_real_time(ParamMap p = {}) {
    PulseSequence seq;
    seq.label = "real_time";
    seq.repetitions = 1;
    seq.bin_width_s = p.get("bin_width_us", 10e3) * units::us;

    PulseSegment watch;
    watch.label = "watch";
    watch.duration_s = p.get("window_ms", 60e3) * units::ms;
    watch.laser.res_power_w = p.get("res_power_nW", 1) * units::nW;
    watch.laser.res_detuning_hz = p.get("res_detuning_MHz", 0) * units::MHz;
    watch.laser.green_power_w = p.get("green_power_uW", 1) * units::uW;
    seq.segments.push_back(watch);

    p.check_consumed("real_time");
    seq.validate();
    return seq;
}

using SequenceBuilder = std::function<PulseSequence(ParamMap)>;

inline const std::map<std::string, SequenceBuilder>& canonical_sequences() {
    static const std::map<std::string, SequenceBuilder> reg = {
        {"resonant_decay", [](ParamMap p) { return seq_resonant_decay(std::move(p)); }},
        {"simultaneous_decay",
         [](ParamMap p) { return seq_simultaneous_decay(std::move(p)); }},
        {"multi_block", [](ParamMap p) { return seq_multi_block(std::move(p)); }},
        {"recovery", [](ParamMap p) { return seq_recovery(std::move(p)); }},
        {"real_time", [](ParamMap p) { return seq_real_time(std::move(p)); }},
    };
    return reg;
}

inline PulseSequence build_canonical_sequence(const std::string& name, ParamMap params = {}) {
    const auto& reg = canonical_sequences();
    auto it = reg.find(name);
    if (it == reg.end()) throw ConfigError("unknown canonical sequence: " + name);
    return it->second(std::move(params));
}

}  // namespace snvsim
