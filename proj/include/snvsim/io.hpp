// io.hpp - file formats: emitter fixtures, traces, scan maps, reports
//
// Numbers are written with %.17g so every file round-trips bit-exactly
// through the matching reader.  Nothing here embeds wall-clock time; outputs
// are pure functions of inputs and seed.
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibrate.hpp"
#include "engine.hpp"
#include "hashing.hpp"
#include "kv.hpp"
#include "ple.hpp"
#include "pulse.hpp"
#include "rates.hpp"
#include "units.hpp"

namespace snvsim {

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(kv_trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(kv_trim(cur));
    return cells;
}

inline double parse_double(const std::string& s, const std::string& origin, int line) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ParseError(origin, line, "not a number: '" + s + "'");
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Emitter fixture files

inline std::string serialize_emitter(const EmitterParams& em, const std::string& id,
                                     const std::vector<std::string>& comments = {}) {
    std::ostringstream out;
    for (const auto& c : comments) out << "# " << c << "\n";
    out << "[emitter]\n";
    out << "id = " << id << "\n";
    out << "lifetime_excited_ns = " << detail::fmt_g(em.lifetime_excited_s / units::ns) << "\n";
    out << "sat_power_resonant_nW = " << detail::fmt_g(em.sat_power_resonant_w / units::nW)
        << "\n";
    out << "ion_coeff_green_per_uW = "
        << detail::fmt_g(em.ion_coeff_green_hz_per_w * units::uW) << "\n";
    out << "ion_coeff_res_per_nW = " << detail::fmt_g(em.ion_coeff_res_hz_per_w * units::nW)
        << "\n";
    out << "rec_coeff_green_per_uW = "
        << detail::fmt_g(em.rec_coeff_green_hz_per_w * units::uW) << "\n";
    out << "detect_eff = " << detail::fmt_g(em.detect_eff) << "\n";
    out << "bg_dark_cps = " << detail::fmt_g(em.bg_dark_cps) << "\n";
    out << "bg_green_cps_per_uW = " << detail::fmt_g(em.bg_green_cps_per_w * units::uW) << "\n";
    out << "center_frequency_THz = " << detail::fmt_g(em.center_frequency_hz / units::THz)
        << "\n";
    if (em.spectral_diffusion) {
        out << "\n[spectral_diffusion]\n";
        out << "jump_prob_per_init = " << detail::fmt_g(em.spectral_diffusion->jump_prob_per_init)
            << "\n";
        out << "jump_sigma_MHz = "
            << detail::fmt_g(em.spectral_diffusion->jump_sigma_hz / units::MHz) << "\n";
    }
    return out.str();
}

inline void save_emitter(const EmitterParams& em, const std::string& id,
                         const std::string& path,
                         const std::vector<std::string>& comments = {}) {
    detail::write_text(path, serialize_emitter(em, id, comments));
}

struct NamedEmitter {
    EmitterParams params;
    std::string id;
};

inline NamedEmitter parse_emitter(std::string_view text,
                                  const std::string& origin = "<string>") {
    KvDocument doc = KvDocument::parse(text, origin);
    const KvSection* sec = doc.find("emitter");
    if (!sec) throw ParseError(origin, 1, "missing [emitter] section");
    kv_require_known(*sec,
                     {"id", "lifetime_excited_ns", "sat_power_resonant_nW",
                      "ion_coeff_green_per_uW", "ion_coeff_res_per_nW",
                      "rec_coeff_green_per_uW", "detect_eff", "bg_dark_cps",
                      "bg_green_cps_per_uW", "center_frequency_THz"},
                     origin);
    NamedEmitter ne;
    if (const KvEntry* e = sec->find("id")) ne.id = e->value;
    EmitterParams& em = ne.params;
    em.lifetime_excited_s =
        kv_double(kv_require(*sec, "lifetime_excited_ns", origin), origin) * units::ns;
    em.sat_power_resonant_w =
        kv_double(kv_require(*sec, "sat_power_resonant_nW", origin), origin) * units::nW;
    if (const KvEntry* e = sec->find("ion_coeff_green_per_uW"))
        em.ion_coeff_green_hz_per_w = kv_double(*e, origin) / units::uW;
    if (const KvEntry* e = sec->find("ion_coeff_res_per_nW"))
        em.ion_coeff_res_hz_per_w = kv_double(*e, origin) / units::nW;
    if (const KvEntry* e = sec->find("rec_coeff_green_per_uW"))
        em.rec_coeff_green_hz_per_w = kv_double(*e, origin) / units::uW;
    if (const KvEntry* e = sec->find("detect_eff")) em.detect_eff = kv_double(*e, origin);
    if (const KvEntry* e = sec->find("bg_dark_cps")) em.bg_dark_cps = kv_double(*e, origin);
    if (const KvEntry* e = sec->find("bg_green_cps_per_uW"))
        em.bg_green_cps_per_w = kv_double(*e, origin) / units::uW;
    if (const KvEntry* e = sec->find("center_frequency_THz"))
        em.center_frequency_hz = kv_double(*e, origin) * units::THz;
    if (const KvSection* sd = doc.find("spectral_diffusion")) {
        kv_require_known(*sd, {"jump_prob_per_init", "jump_sigma_MHz"}, origin);
        SpectralDiffusionParams p;
        p.jump_prob_per_init =
            kv_double(kv_require(*sd, "jump_prob_per_init", origin), origin);
        p.jump_sigma_hz =
            kv_double(kv_require(*sd, "jump_sigma_MHz", origin), origin) * units::MHz;
        em.spectral_diffusion = p;
    }
    for (const auto& s : doc.sections)
        if (s.name != "emitter" && s.name != "spectral_diffusion")
            throw ParseError(origin, s.line, "unknown section [" + s.name + "]");
    em.validate();
    return ne;
}

inline NamedEmitter load_emitter(const std::string& path) {
    return parse_emitter(detail::read_text(path), path);
}

// ---------------------------------------------------------------------------
// Binned traces

inline std::string trace_to_csv(const BinnedTrace& trace) {
    std::ostringstream out;
    out << "bin_start_s, bin_end_s, counts, n_reps\n";
    for (size_t i = 0; i < trace.n_bins(); ++i)
        out << detail::fmt_g(trace.bin_edges_s[i]) << ", "
            << detail::fmt_g(trace.bin_edges_s[i + 1]) << ", " << trace.counts[i] << ", "
            << trace.n_reps << "\n";
    return out.str();
}

inline void write_trace_csv(const BinnedTrace& trace, const std::string& path) {
    detail::write_text(path, trace_to_csv(trace));
}

inline BinnedTrace trace_from_csv(const std::string& text,
                                  const std::string& origin = "<string>") {
    BinnedTrace trace;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    double prev_end = 0.0;
    while (std::getline(in, line)) {
        ++lineno;
        if (kv_trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (!header_seen) {
            if (cells.size() != 4 || cells[0] != "bin_start_s" || cells[1] != "bin_end_s" ||
                cells[2] != "counts" || cells[3] != "n_reps")
                throw ParseError(origin, lineno,
                                 "expected header 'bin_start_s, bin_end_s, counts, n_reps'");
            header_seen = true;
            continue;
        }
        if (cells.size() != 4) throw ParseError(origin, lineno, "expected 4 columns");
        double start = detail::parse_double(cells[0], origin, lineno);
        double end = detail::parse_double(cells[1], origin, lineno);
        if (!(end > start)) throw ParseError(origin, lineno, "bin_end must exceed bin_start");
        if (trace.bin_edges_s.empty()) {
            trace.bin_edges_s.push_back(start);
        } else if (start != prev_end) {
            throw ParseError(origin, lineno, "bins are not contiguous");
        }
        trace.bin_edges_s.push_back(end);
        prev_end = end;
        double counts = detail::parse_double(cells[2], origin, lineno);
        if (counts < 0.0 || counts != std::floor(counts))
            throw ParseError(origin, lineno, "counts must be a non-negative integer");
        trace.counts.push_back(static_cast<uint64_t>(counts));
        trace.n_reps = static_cast<uint64_t>(detail::parse_double(cells[3], origin, lineno));
    }
    if (!header_seen) throw ParseError(origin, 1, "empty trace CSV");
    if (trace.counts.empty()) throw ParseError(origin, 1, "trace CSV has no data rows");
    return trace;
}

inline BinnedTrace read_trace_csv(const std::string& path) {
    return trace_from_csv(detail::read_text(path), path);
}

// Sidecar: everything needed to reproduce and to detect input drift.
inline std::string trace_meta_text(const BinnedTrace& trace, uint64_t emitter_file_hash,
                                   const std::string& emitter_id,
                                   const std::string& sequence_label) {
    std::ostringstream out;
    out << "[trace_meta]\n";
    out << "seed = " << trace.seed << "\n";
    out << "sequence_hash = " << hash_hex(trace.sequence_hash) << "\n";
    out << "sequence_label = " << sequence_label << "\n";
    out << "emitter_hash = " << hash_hex(emitter_file_hash) << "\n";
    out << "emitter_id = " << emitter_id << "\n";
    out << "n_reps = " << trace.n_reps << "\n";
    out << "n_bins = " << trace.n_bins() << "\n";
    return out.str();
}

inline void write_trace_meta(const BinnedTrace& trace, uint64_t emitter_file_hash,
                             const std::string& emitter_id, const std::string& sequence_label,
                             const std::string& path) {
    detail::write_text(path, trace_meta_text(trace, emitter_file_hash, emitter_id,
                                             sequence_label));
}

// ---------------------------------------------------------------------------
// Scan maps

inline std::string scanmap_to_csv(const ScanMap& map) {
    std::ostringstream out;
    out << "scan_index, detuning_MHz, counts\n";
    for (size_t k = 0; k < map.n_scans(); ++k)
        for (size_t j = 0; j < map.n_points(); ++j)
            out << k << ", " << detail::fmt_g(map.detuning_grid_hz[j] / units::MHz) << ", "
                << map.scans[k][j] << "\n";
    return out.str();
}

inline void write_scanmap_csv(const ScanMap& map, const std::string& path) {
    detail::write_text(path, scanmap_to_csv(map));
}

// Rebuilds grid and counts; acquisition metadata lives in the sidecar.
inline ScanMap scanmap_from_csv(const std::string& text,
                                const std::string& origin = "<string>") {
    ScanMap map;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (kv_trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (!header_seen) {
            if (cells.size() != 3 || cells[0] != "scan_index" || cells[1] != "detuning_MHz" ||
                cells[2] != "counts")
                throw ParseError(origin, lineno,
                                 "expected header 'scan_index, detuning_MHz, counts'");
            header_seen = true;
            continue;
        }
        if (cells.size() != 3) throw ParseError(origin, lineno, "expected 3 columns");
        size_t k = static_cast<size_t>(detail::parse_double(cells[0], origin, lineno));
        double f = detail::parse_double(cells[1], origin, lineno) * units::MHz;
        double c = detail::parse_double(cells[2], origin, lineno);
        if (k >= map.scans.size()) map.scans.resize(k + 1);
        if (k == 0) map.detuning_grid_hz.push_back(f);
        map.scans[k].push_back(static_cast<uint64_t>(c));
    }
    if (!header_seen) throw ParseError(origin, 1, "empty scan CSV");
    if (map.scans.empty()) throw ParseError(origin, 1, "scan CSV has no data rows");
    for (const auto& s : map.scans)
        if (s.size() != map.detuning_grid_hz.size())
            throw ParseError(origin, 1, "scan rows are ragged");
    map.directions.resize(map.n_scans());
    map.had_init.resize(map.n_scans());
    map.emitter_center_hz.resize(map.n_scans());
    for (size_t k = 0; k < map.n_scans(); ++k) map.directions[k] = scan_direction(k);
    return map;
}

inline ScanMap read_scanmap_csv(const std::string& path) {
    return scanmap_from_csv(detail::read_text(path), path);
}

// Sidecar carries the per-scan true center so synthetic drift can be audited.
inline std::string scanmap_meta_text(const ScanMap& map, uint64_t emitter_file_hash,
                                     const std::string& emitter_id) {
    std::ostringstream out;
    out << "[scan_meta]\n";
    out << "seed = " << map.seed << "\n";
    out << "mode = " << to_string(map.mode) << "\n";
    out << "emitter_hash = " << hash_hex(emitter_file_hash) << "\n";
    out << "emitter_id = " << emitter_id << "\n";
    out << "dwell_ms = " << detail::fmt_g(map.dwell_s / units::ms) << "\n";
    out << "res_power_nW = " << detail::fmt_g(map.res_power_w / units::nW) << "\n";
    out << "green_power_uW = " << detail::fmt_g(map.green_power_w / units::uW) << "\n";
    out << "n_scans = " << map.n_scans() << "\n";
    out << "n_points = " << map.n_points() << "\n";
    out << "\n[scan_centers_THz]\n";
    for (size_t k = 0; k < map.n_scans(); ++k)
        out << "scan" << k << " = " << detail::fmt_g(map.emitter_center_hz[k] / units::THz)
            << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Fit reports

inline nlohmann::ordered_json fit_to_json(const FitResult& fit) {
    nlohmann::ordered_json j;
    j["parameters"] = nlohmann::ordered_json::array();
    for (const auto& p : fit.params)
        j["parameters"].push_back({{"name", p.name}, {"value", p.value},
                                   {"std_error", p.std_error}});
    j["residual_rms"] = fit.residual_rms;
    j["converged"] = fit.converged;
    j["degenerate"] = fit.degenerate;
    j["n_points"] = fit.n_points;
    j["message"] = fit.message;
    return j;
}

inline std::string fit_report_text(const FitResult& fit) {
    std::ostringstream out;
    for (const auto& p : fit.params)
        out << p.name << " = " << detail::fmt_g(p.value) << " +/- "
            << detail::fmt_g(p.std_error) << "\n";
    out << "residual_rms = " << detail::fmt_g(fit.residual_rms) << "\n";
    out << "converged = " << (fit.converged ? "true" : "false") << "\n";
    if (fit.degenerate) out << "degenerate = true\n";
    if (!fit.message.empty()) out << "message = " << fit.message << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Run manifest

struct ManifestEntry {
    std::string role;
    std::string path;
    uint64_t hash = 0;
};

inline std::string manifest_text(const std::string& command, uint64_t seed,
                                 const std::vector<ManifestEntry>& inputs,
                                 const std::vector<ManifestEntry>& outputs) {
    std::ostringstream out;
    out << "[manifest]\n";
    out << "command = " << command << "\n";
    out << "seed = " << seed << "\n";
    out << "\n[inputs]\n";
    for (const auto& e : inputs)
        out << e.role << " = " << e.path << "\n"
            << e.role << "_hash = " << hash_hex(e.hash) << "\n";
    out << "\n[outputs]\n";
    for (const auto& e : outputs)
        out << e.role << " = " << e.path << "\n"
            << e.role << "_hash = " << hash_hex(e.hash) << "\n";
    return out.str();
}

// Gnuplot-ready view of a trace or scan, kept dependency-free.
inline std::string trace_plot_script(const std::string& csv_path) {
    std::ostringstream out;
    out << "set datafile separator ','\n";
    out << "set xlabel 'time (s)'\n";
    out << "set ylabel 'counts per bin'\n";
    out << "plot '" << csv_path << "' using 1:3 skip 1 with steps title 'trace'\n";
    return out.str();
}

inline std::string scanmap_plot_script(const std::string& csv_path) {
    std::ostringstream out;
    out << "set datafile separator ','\n";
    out << "set xlabel 'detuning (MHz)'\n";
    out << "set ylabel 'scan index'\n";
    out << "set view map\n";
    out << "splot '" << csv_path << "' using 2:1:3 skip 1 with points pt 5 palette title ''\n";
    return out.str();
}

}  // namespace snvsim
