// snvsim - command-line front end
//
// Subcommands: simulate, sweep, ple, calibrate, verify, fit.  Every command
// is driven by a key/value config file; --seed / --reps-override / --threads
// override the config, --out (or SNVSIM_OUT_DIR) picks the output directory.
// Exit codes: 0 ok, 2 config error, 3 runtime error, 4 calibration
// inconsistency.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <snvsim/snvsim.hpp>

namespace fs = std::filesystem;
using namespace snvsim;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out_dir;
    std::optional<uint64_t> reps_override;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "config file (key/value text)");
    if (config_required) opt->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--reps-override", args.reps_override,
                    "override sequence repetition count");
    cmd->add_option("--threads", args.threads, "worker threads for ensemble simulation");
}

fs::path resolve_out_dir(const CommonArgs& args) {
    std::string dir = args.out_dir;
    if (dir.empty()) {
        const char* env = std::getenv("SNVSIM_OUT_DIR");
        dir = env ? env : ".";
    }
    fs::create_directories(dir);
    return dir;
}

const KvSection& require_section(const KvDocument& doc, const std::string& name) {
    const KvSection* sec = doc.find(name);
    if (!sec) throw ConfigError(doc.origin + ": missing [" + name + "] section");
    return *sec;
}

double section_double(const KvSection& sec, const std::string& key, double fallback,
                      const std::string& origin) {
    const KvEntry* e = sec.find(key);
    return e ? kv_double(*e, origin) : fallback;
}

std::string section_string(const KvSection& sec, const std::string& key,
                           const std::string& fallback) {
    const KvEntry* e = sec.find(key);
    return e ? e->value : fallback;
}

uint64_t pick_seed(const CommonArgs& args, const KvSection& run, const std::string& origin) {
    if (args.seed) return *args.seed;
    if (const KvEntry* e = run.find("seed"))
        return static_cast<uint64_t>(kv_int(*e, origin));
    return 0;
}

int pick_threads(const CommonArgs& args, const KvSection& run, const std::string& origin) {
    if (args.threads) return *args.threads;
    if (const KvEntry* e = run.find("threads"))
        return static_cast<int>(kv_int(*e, origin));
    return 1;
}

ParamMap overrides_from(const KvDocument& doc) {
    std::map<std::string, double> vals;
    if (const KvSection* sec = doc.find("overrides"))
        for (const auto& e : sec->entries) vals[e.key] = kv_double(e, doc.origin);
    return ParamMap(vals);
}

std::vector<double> parse_value_list(const std::string& text, const std::string& origin) {
    std::vector<double> vals;
    std::string cur;
    auto flush = [&]() {
        std::string t = kv_trim(cur);
        cur.clear();
        if (t.empty()) return;
        char* end = nullptr;
        double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0')
            throw ConfigError(origin + ": bad number in value list: '" + t + "'");
        vals.push_back(v);
    };
    for (char c : text) {
        if (c == ',')
            flush();
        else
            cur += c;
    }
    flush();
    if (vals.empty()) throw ConfigError(origin + ": empty value list");
    return vals;
}

struct LoadedEmitter {
    NamedEmitter emitter;
    std::string path;
    uint64_t hash = 0;
};

LoadedEmitter load_emitter_input(const KvSection& run, const std::string& origin) {
    std::string path = section_string(run, "emitter", "");
    if (path.empty()) throw ConfigError(origin + ": [run] needs 'emitter = <file>'");
    LoadedEmitter le;
    le.emitter = load_emitter(path);
    le.path = path;
    le.hash = file_hash(path);
    return le;
}

void write_manifest_file(const fs::path& out_dir, const std::string& name,
                         const std::string& command, uint64_t seed,
                         std::vector<ManifestEntry> inputs,
                         std::vector<ManifestEntry> outputs) {
    for (auto& e : outputs) e.hash = file_hash(e.path);
    detail::write_text((out_dir / (name + "_manifest.txt")).string(),
                       manifest_text(command, seed, inputs, outputs));
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonArgs& args) {
    KvDocument doc = KvDocument::load(args.config_path);
    const KvSection& run = require_section(doc, "run");
    std::string name = section_string(run, "name", "run");
    uint64_t seed = pick_seed(args, run, doc.origin);
    int threads = pick_threads(args, run, doc.origin);
    LoadedEmitter le = load_emitter_input(run, doc.origin);

    std::string seq_path = section_string(run, "sequence", "");
    std::string canonical = section_string(run, "canonical", "");
    if (seq_path.empty() == canonical.empty())
        throw ConfigError(doc.origin +
                          ": [run] needs exactly one of 'sequence' or 'canonical'");
    PulseSequence seq;
    std::vector<ManifestEntry> inputs = {
        {"config", args.config_path, file_hash(args.config_path)},
        {"emitter", le.path, le.hash}};
    if (!seq_path.empty()) {
        seq = load_sequence(seq_path);
        inputs.push_back({"sequence", seq_path, file_hash(seq_path)});
    } else {
        seq = build_canonical_sequence(canonical, overrides_from(doc));
    }
    if (args.reps_override) seq.repetitions = *args.reps_override;

    BinnedTrace trace = simulate_ensemble(le.emitter.params, seq, seed, threads);

    fs::path out_dir = resolve_out_dir(args);
    fs::path csv = out_dir / (name + "_trace.csv");
    fs::path meta = out_dir / (name + "_trace.meta");
    write_trace_csv(trace, csv.string());
    write_trace_meta(trace, le.hash, le.emitter.id, seq.label, meta.string());
    std::vector<ManifestEntry> outputs = {{"trace", csv.string(), 0},
                                          {"trace_meta", meta.string(), 0}};
    if (section_string(run, "plot", "false") == "true") {
        fs::path gp = out_dir / (name + ".gp");
        detail::write_text(gp.string(), trace_plot_script(csv.filename().string()));
        outputs.push_back({"plot_script", gp.string(), 0});
    }
    write_manifest_file(out_dir, name, "simulate", seed, inputs, outputs);
    std::cout << name << ": " << trace.n_bins() << " bins, " << trace.n_reps << " reps -> "
              << csv.string() << "\n";
    return 0;
}

// Per-segment block sums for recovery traces: bins are laid on the recording
// clock, so readout b covers [b*readout_s, (b+1)*readout_s).
std::vector<double> block_sums(const BinnedTrace& trace, double block_s, int n_blocks) {
    std::vector<double> sums(n_blocks, 0.0);
    for (size_t i = 0; i < trace.n_bins(); ++i) {
        int b = static_cast<int>(trace.bin_center(i) / block_s);
        if (b >= 0 && b < n_blocks) sums[b] += static_cast<double>(trace.counts[i]);
    }
    return sums;
}

int cmd_sweep(const CommonArgs& args) {
    KvDocument doc = KvDocument::load(args.config_path);
    const KvSection& run = require_section(doc, "run");
    const KvSection& sw = require_section(doc, "sweep");
    std::string name = section_string(run, "name", "sweep");
    uint64_t seed = pick_seed(args, run, doc.origin);
    int threads = pick_threads(args, run, doc.origin);
    LoadedEmitter le = load_emitter_input(run, doc.origin);

    std::string kind = section_string(sw, "kind", "decay");
    std::string axis = section_string(sw, "axis", "");
    if (axis != "res_power_nW" && axis != "green_power_uW")
        throw ConfigError(doc.origin + ": [sweep] axis must be res_power_nW or green_power_uW");
    std::vector<double> values =
        parse_value_list(kv_require(sw, "values", doc.origin).value, doc.origin);
    std::string canonical = section_string(
        sw, "canonical", kind == "recovery" ? "recovery" : "simultaneous_decay");

    std::ostringstream table;
    table << "power, rate, rate_err\n";
    std::vector<double> xs, ys;
    for (size_t idx = 0; idx < values.size(); ++idx) {
        double v = values[idx];
        std::map<std::string, double> vals;
        if (const KvSection* ov = doc.find("overrides"))
            for (const auto& e : ov->entries) vals[e.key] = kv_double(e, doc.origin);
        vals[axis] = v;
        PulseSequence seq = build_canonical_sequence(canonical, ParamMap(vals));
        if (args.reps_override) seq.repetitions = *args.reps_override;
        // Offset the seed per point; a shared seed would correlate the noise
        // across the sweep and tilt the line fit.
        BinnedTrace trace = simulate_ensemble(le.emitter.params, seq, seed + idx, threads);

        double rate = 0.0, err = 0.0;
        if (kind == "decay") {
            std::vector<double> x(trace.n_bins()), y(trace.n_bins());
            for (size_t i = 0; i < trace.n_bins(); ++i) {
                x[i] = trace.bin_center(i);
                y[i] = static_cast<double>(trace.counts[i]);
            }
            FitResult fit = fit_exp_decay(x, y);
            rate = fit.value("rate");
            err = fit.std_error("rate");
        } else if (kind == "recovery") {
            ParamMap probe(vals);
            int blocks = static_cast<int>(probe.get("blocks", 16));
            double readout_s = probe.get("readout_ms", 1) * units::ms;
            double green_s = probe.get("green_ms", 5) * units::ms;
            std::vector<double> sums = block_sums(trace, readout_s, blocks);
            FitResult fit = fit_recovery_steps(sums);
            double q = fit.value("rate_per_pulse");
            rate = -std::log1p(-std::min(q, 1.0 - 1e-15)) / green_s;
            err = fit.std_error("rate_per_pulse") / ((1.0 - q) * green_s);
        } else {
            throw ConfigError(doc.origin + ": [sweep] kind must be decay or recovery");
        }
        table << detail::fmt_g(v) << ", " << detail::fmt_g(rate) << ", " << detail::fmt_g(err)
              << "\n";
        xs.push_back(v);
        ys.push_back(rate);
    }

    double fit_min = section_double(sw, "fit_min", -1e300, doc.origin);
    double fit_max = section_double(sw, "fit_max", 1e300, doc.origin);
    std::vector<double> lx, ly;
    for (size_t i = 0; i < xs.size(); ++i)
        if (xs[i] >= fit_min && xs[i] <= fit_max) {
            lx.push_back(xs[i]);
            ly.push_back(ys[i]);
        }
    nlohmann::ordered_json report;
    report["axis"] = axis;
    report["kind"] = kind;
    report["n_points_fit"] = lx.size();
    if (lx.size() >= 3) {
        FitResult lin = fit_linear(lx, ly);
        report["linear_fit"] = fit_to_json(lin);
        std::cout << name << ": slope " << lin.value("slope") << " +/- "
                  << lin.std_error("slope") << " per axis unit, intercept "
                  << lin.value("intercept") << " +/- " << lin.std_error("intercept")
                  << ", r^2 " << lin.value("r_squared") << "\n";
    } else {
        report["linear_fit"] = nullptr;
    }

    fs::path out_dir = resolve_out_dir(args);
    fs::path csv = out_dir / (name + "_sweep.csv");
    fs::path json_path = out_dir / (name + "_linear.json");
    detail::write_text(csv.string(), table.str());
    detail::write_text(json_path.string(), report.dump(2) + "\n");
    write_manifest_file(out_dir, name, "sweep", seed,
                        {{"config", args.config_path, file_hash(args.config_path)},
                         {"emitter", le.path, le.hash}},
                        {{"sweep_table", csv.string(), 0},
                         {"linear_report", json_path.string(), 0}});
    return 0;
}

int cmd_ple(const CommonArgs& args) {
    KvDocument doc = KvDocument::load(args.config_path);
    const KvSection& run = require_section(doc, "run");
    const KvSection& ple = require_section(doc, "ple");
    std::string name = section_string(run, "name", "ple");
    uint64_t seed = pick_seed(args, run, doc.origin);
    LoadedEmitter le = load_emitter_input(run, doc.origin);

    ScanProgram prog;
    prog.mode = scan_mode_from_string(section_string(ple, "mode", "resonant_only"));
    prog.grid.f_min_hz = section_double(ple, "f_min_MHz", -250, doc.origin) * units::MHz;
    prog.grid.f_max_hz = section_double(ple, "f_max_MHz", 250, doc.origin) * units::MHz;
    prog.grid.step_hz = section_double(ple, "step_MHz", 2, doc.origin) * units::MHz;
    prog.grid.dwell_s = section_double(ple, "dwell_ms", 10, doc.origin) * units::ms;
    prog.n_scans = static_cast<int>(section_double(ple, "n_scans", 1, doc.origin));
    prog.res_power_w = section_double(ple, "res_power_nW", 1, doc.origin) * units::nW;
    prog.green_power_w = section_double(ple, "green_power_uW", 20, doc.origin) * units::uW;
    prog.init_green_power_w =
        section_double(ple, "init_green_uW", 20, doc.origin) * units::uW;
    prog.init_duration_s = section_double(ple, "init_ms", 50, doc.origin) * units::ms;

    GatingRules gating;
    if (const KvSection* g = doc.find("gating")) {
        gating.min_linewidth_hz =
            section_double(*g, "min_linewidth_MHz", 0, doc.origin) * units::MHz;
        gating.min_peak_to_bg = section_double(*g, "min_peak_to_bg", 0, doc.origin);
        gating.max_fit_rms = section_double(*g, "max_fit_rms",
                                            std::numeric_limits<double>::infinity(),
                                            doc.origin);
    }

    ScanMap map = generate_ple(le.emitter.params, prog, seed);
    ScanStatistics stats = scan_statistics(map, gating);
    std::vector<size_t> recovered = select_terminated_then_complete(map, stats);

    nlohmann::ordered_json j;
    j["mode"] = to_string(map.mode);
    j["n_scans"] = map.n_scans();
    j["included"] = stats.included;
    j["centers_MHz"] = nlohmann::ordered_json::array();
    for (double c : stats.centers_hz) j["centers_MHz"].push_back(c / units::MHz);
    j["linewidths_MHz"] = nlohmann::ordered_json::array();
    for (double w : stats.linewidths_hz) j["linewidths_MHz"].push_back(w / units::MHz);
    if (stats.centers_hz.size() >= 10) {
        j["center_hist_fwhm_MHz"] = hist_fwhm(stats.centers_hz) / units::MHz;
        j["linewidth_hist_fwhm_MHz"] = hist_fwhm(stats.linewidths_hz) / units::MHz;
    }
    j["excluded"] = nlohmann::ordered_json::array();
    for (const auto& e : stats.excluded)
        j["excluded"].push_back({{"scan", e.scan_index}, {"reason", e.reason}});
    if (stats.empty()) j["empty_reason"] = stats.empty_reason;
    j["terminated_then_complete"] = recovered;
    {
        std::vector<double> mean = scan_mean(map);
        try {
            FitResult mf = fit_lorentzian(map.detuning_grid_hz, mean);
            nlohmann::ordered_json m = fit_to_json(mf);
            m["center_MHz"] = mf.value("center") / units::MHz;
            m["fwhm_MHz"] = std::abs(mf.value("fwhm")) / units::MHz;
            j["mean_spectrum_fit"] = m;
        } catch (const PeakNotFound& e) {
            j["mean_spectrum_fit"] = nullptr;
            j["mean_spectrum_error"] = e.what();
        }
    }

    fs::path out_dir = resolve_out_dir(args);
    fs::path csv = out_dir / (name + "_scans.csv");
    fs::path meta = out_dir / (name + "_scans.meta");
    fs::path stats_path = out_dir / (name + "_stats.json");
    write_scanmap_csv(map, csv.string());
    detail::write_text(meta.string(), scanmap_meta_text(map, le.hash, le.emitter.id));
    detail::write_text(stats_path.string(), j.dump(2) + "\n");
    std::vector<ManifestEntry> outputs = {{"scan_map", csv.string(), 0},
                                          {"scan_meta", meta.string(), 0},
                                          {"statistics", stats_path.string(), 0}};
    if (section_string(run, "plot", "false") == "true") {
        fs::path gp = out_dir / (name + ".gp");
        detail::write_text(gp.string(), scanmap_plot_script(csv.filename().string()));
        outputs.push_back({"plot_script", gp.string(), 0});
    }
    write_manifest_file(out_dir, name, "ple", seed,
                        {{"config", args.config_path, file_hash(args.config_path)},
                         {"emitter", le.path, le.hash}},
                        outputs);
    std::cout << name << ": " << map.n_scans() << " scans, " << stats.included.size()
              << " usable -> " << csv.string() << "\n";
    return 0;
}

int cmd_calibrate(const CommonArgs& args) {
    KvDocument doc = KvDocument::load(args.config_path);
    const KvSection& run = require_section(doc, "run");
    std::string name = section_string(run, "name", "calibration");
    std::string targets_path = section_string(run, "targets", "");
    if (targets_path.empty())
        throw ConfigError(doc.origin + ": [run] needs 'targets = <file>'");

    TargetSet set = load_targets(targets_path);
    CalibrationOutcome outcome = calibrate(set);

    fs::path out_dir = resolve_out_dir(args);
    std::string emit_name =
        section_string(run, "out_emitter", set.emitter_id + ".emit");
    fs::path emit_path = out_dir / emit_name;
    std::vector<std::string> comments = {"calibrated emitter fixture"};
    for (const auto& line : outcome.provenance) comments.push_back(line);
    save_emitter(outcome.params, set.emitter_id, emit_path.string(), comments);

    nlohmann::ordered_json j;
    j["emitter_id"] = set.emitter_id;
    j["provenance"] = outcome.provenance;
    j["verification"] = nlohmann::ordered_json::array();
    for (const auto& e : outcome.verification.entries)
        j["verification"].push_back({{"label", e.target.label},
                                     {"observable", to_string(e.target.observable)},
                                     {"model", e.model_value},
                                     {"target", e.target.value},
                                     {"tolerance", e.target.tolerance},
                                     {"pass", e.pass}});
    j["all_pass"] = outcome.verification.all_pass;
    fs::path report = out_dir / (name + "_report.json");
    detail::write_text(report.string(), j.dump(2) + "\n");
    write_manifest_file(out_dir, name, "calibrate", 0,
                        {{"config", args.config_path, file_hash(args.config_path)},
                         {"targets", targets_path, file_hash(targets_path)}},
                        {{"emitter", emit_path.string(), 0},
                         {"report", report.string(), 0}});
    std::cout << name << ": calibrated " << set.emitter_id << " -> " << emit_path.string()
              << "\n";
    for (const auto& line : outcome.provenance) std::cout << "  " << line << "\n";
    return 0;
}

int cmd_verify(const CommonArgs& args) {
    KvDocument doc = KvDocument::load(args.config_path);
    const KvSection& run = require_section(doc, "run");
    LoadedEmitter le = load_emitter_input(run, doc.origin);
    std::string targets_path = section_string(run, "targets", "");
    if (targets_path.empty())
        throw ConfigError(doc.origin + ": [run] needs 'targets = <file>'");
    TargetSet set = load_targets(targets_path);
    if (!set.emitter_id.empty() && !le.emitter.id.empty() && set.emitter_id != le.emitter.id)
        throw CalibrationError("emitter id mismatch: fixture '" + le.emitter.id +
                               "' vs targets '" + set.emitter_id + "'");

    VerifyReport rep = verify(le.emitter.params, set.targets);
    for (const auto& e : rep.entries)
        std::cout << (e.pass ? "pass" : "FAIL") << "  " << e.target.label << " ("
                  << to_string(e.target.observable) << "): model " << e.model_value
                  << " vs target " << e.target.value << " +/- " << e.target.tolerance << "\n";
    if (!rep.all_pass) {
        std::cout << "verification failed\n";
        return 4;
    }
    std::cout << "all targets satisfied\n";
    return 0;
}

int cmd_fit(const CommonArgs& args) {
    KvDocument doc = KvDocument::load(args.config_path);
    const KvSection& run = require_section(doc, "run");
    std::string name = section_string(run, "name", "fit");
    std::string input = section_string(run, "input", "");
    std::string model = section_string(run, "model", "");
    if (input.empty() || model.empty())
        throw ConfigError(doc.origin + ": [run] needs 'input = <csv>' and 'model = <name>'");

    std::vector<double> x, y;
    std::string text = detail::read_text(input);
    bool is_trace = text.rfind("bin_start_s", 0) == 0;
    if (is_trace) {
        BinnedTrace trace = trace_from_csv(text, input);
        for (size_t i = 0; i < trace.n_bins(); ++i) {
            x.push_back(trace.bin_center(i));
            y.push_back(static_cast<double>(trace.counts[i]));
        }
    } else {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (kv_trim(line).empty()) continue;
            auto cells = detail::split_csv_line(line);
            if (cells.size() < 2) throw ParseError(input, lineno, "need at least 2 columns");
            char* end = nullptr;
            double xv = std::strtod(cells[0].c_str(), &end);
            if (end == cells[0].c_str()) continue;  // header row
            x.push_back(xv);
            y.push_back(detail::parse_double(cells[1], input, lineno));
        }
    }

    FitResult fit;
    if (model == "exp_decay") {
        fit = fit_exp_decay(x, y);
    } else if (model == "lorentzian") {
        fit = fit_lorentzian(x, y);
    } else if (model == "linear") {
        fit = fit_linear(x, y);
    } else if (model == "recovery") {
        fit = fit_recovery_steps(y);
    } else {
        throw ConfigError(doc.origin + ": unknown model '" + model + "'");
    }

    std::cout << fit_report_text(fit);
    fs::path out_dir = resolve_out_dir(args);
    fs::path json_path = out_dir / (name + "_fit.json");
    detail::write_text(json_path.string(), fit_to_json(fit).dump(2) + "\n");
    write_manifest_file(out_dir, name, "fit", 0,
                        {{"config", args.config_path, file_hash(args.config_path)},
                         {"input", input, file_hash(input)}},
                        {{"fit_report", json_path.string(), 0}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stochastic charge-state and optical dynamics simulator"};
    app.require_subcommand(1);

    CommonArgs sim_args, sweep_args, ple_args, cal_args, ver_args, fit_args;
    CLI::App* sim = app.add_subcommand("simulate", "run a pulse sequence, write a trace");
    add_common(sim, sim_args);
    CLI::App* sweep = app.add_subcommand("sweep", "rate vs power sweep with linear fit");
    add_common(sweep, sweep_args);
    CLI::App* ple = app.add_subcommand("ple", "synthesize a frequency scan map");
    add_common(ple, ple_args);
    CLI::App* cal = app.add_subcommand("calibrate", "solve emitter coefficients from targets");
    add_common(cal, cal_args);
    CLI::App* ver = app.add_subcommand("verify", "check an emitter fixture against targets");
    add_common(ver, ver_args);
    CLI::App* fit = app.add_subcommand("fit", "fit a model to an existing CSV");
    add_common(fit, fit_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args);
        if (ple->parsed()) return cmd_ple(ple_args);
        if (cal->parsed()) return cmd_calibrate(cal_args);
        if (ver->parsed()) return cmd_verify(ver_args);
        if (fit->parsed()) return cmd_fit(fit_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CalibrationError& e) {
        std::cerr << "calibration error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
