// End-to-end tests of the command line tool: exit codes, output files,
// determinism of reruns.  The binary path and the shipped config directory
// come in through compile definitions.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include <snvsim/snvsim.hpp>

namespace fs = std::filesystem;
using namespace snvsim;

namespace {

const std::string kCli = SNVSIM_CLI;
const std::string kConfigDir = SNVSIM_CONFIG_DIR;

fs::path scratch_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() /
                     ("snvsim_cli_" + std::to_string(::getpid()));
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = scratch_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args) {
    std::string cmd = kCli + " " + args;
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
}

int run_cli_capture(const std::string& args, const fs::path& log) {
    return run_cli(args + " > " + log.string() + " 2>&1");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    REQUIRE(out.good());
}

// Calibrated emitter 12 fixture, produced once through the real calibrate
// command so later tests consume the tool's own output.
fs::path emitter12_fixture() {
    static fs::path fixture = [] {
        fs::path dir = fresh_dir("fixture");
        fs::path cfg = dir / "cal.cfg";
        spit(cfg, "[run]\nname = cal12\ntargets = " + kConfigDir +
                      "/targets/emitter_12.targets\n");
        REQUIRE(run_cli("calibrate --config " + cfg.string() + " --out " +
                        dir.string()) == 0);
        return dir / "emitter_12.emit";
    }();
    return fixture;
}

fs::path write_simulate_cfg(const fs::path& dir, const std::string& name,
                            uint64_t seed, const std::string& extra = "") {
    fs::path cfg = dir / (name + ".cfg");
    spit(cfg, "[run]\nname = " + name + "\nemitter = " +
                  emitter12_fixture().string() +
                  "\ncanonical = simultaneous_decay\nseed = " +
                  std::to_string(seed) +
                  "\n\n[overrides]\nrepetitions = 200\npulse_ms = 1\n" + extra);
    return cfg;
}

}  // namespace

TEST_CASE("bad invocations exit with the config error code") {
    CHECK(run_cli("> /dev/null 2>&1") == 2);
    CHECK(run_cli("--help > /dev/null 2>&1") == 0);
    CHECK(run_cli("simulate > /dev/null 2>&1") == 2);
    CHECK(run_cli("simulate --config /nonexistent/xx.cfg > /dev/null 2>&1") == 2);
}

TEST_CASE("malformed config and unknown model are config errors") {
    fs::path dir = fresh_dir("badcfg");
    fs::path cfg = dir / "bad.cfg";
    spit(cfg, "[run]\nname\n");
    CHECK(run_cli("simulate --config " + cfg.string() + " > /dev/null 2>&1") == 2);

    fs::path data = dir / "d.csv";
    spit(data, "0, 1\n1, 2\n2, 3\n3, 4\n");
    fs::path fitcfg = dir / "fit.cfg";
    spit(fitcfg, "[run]\ninput = " + data.string() + "\nmodel = parabola\n");
    CHECK(run_cli("fit --config " + fitcfg.string() + " > /dev/null 2>&1") == 2);
}

TEST_CASE("calibrate writes a fixture that verifies cleanly") {
    fs::path fixture = emitter12_fixture();
    REQUIRE(fs::exists(fixture));

    NamedEmitter ne = load_emitter(fixture.string());
    CHECK(ne.id == "emitter_12");
    CHECK(ne.params.ion_coeff_res_hz_per_w * units::nW == Catch::Approx(7.8).epsilon(1e-9));
    CHECK(ne.params.ion_coeff_green_hz_per_w * units::uW ==
          Catch::Approx(4014.0).epsilon(1e-9));

    fs::path report = fixture.parent_path() / "cal12_report.json";
    auto j = nlohmann::json::parse(slurp(report));
    CHECK(j["all_pass"].get<bool>());
    CHECK(j["emitter_id"] == "emitter_12");

    fs::path dir = fresh_dir("verify_ok");
    fs::path cfg = dir / "verify.cfg";
    spit(cfg, "[run]\nemitter = " + fixture.string() + "\ntargets = " + kConfigDir +
                  "/targets/emitter_12.targets\n");
    fs::path log = dir / "log.txt";
    CHECK(run_cli_capture("verify --config " + cfg.string(), log) == 0);
    std::string out = slurp(log);
    CHECK(out.find("all targets satisfied") != std::string::npos);
    CHECK(out.find("FAIL") == std::string::npos);
}

TEST_CASE("verify flags a perturbed coefficient and a wrong emitter id") {
    fs::path dir = fresh_dir("verify_bad");
    NamedEmitter ne = load_emitter(emitter12_fixture().string());

    EmitterParams bent = ne.params;
    bent.ion_coeff_green_hz_per_w *= 1.2;
    fs::path bent_path = dir / "bent.emit";
    save_emitter(bent, ne.id, bent_path.string());
    fs::path cfg = dir / "verify.cfg";
    spit(cfg, "[run]\nemitter = " + bent_path.string() + "\ntargets = " + kConfigDir +
                  "/targets/emitter_12.targets\n");
    fs::path log = dir / "log.txt";
    CHECK(run_cli_capture("verify --config " + cfg.string(), log) == 4);
    CHECK(slurp(log).find("FAIL") != std::string::npos);

    fs::path alias_path = dir / "alias.emit";
    save_emitter(ne.params, "emitter_99", alias_path.string());
    fs::path cfg2 = dir / "verify2.cfg";
    spit(cfg2, "[run]\nemitter = " + alias_path.string() + "\ntargets = " + kConfigDir +
                   "/targets/emitter_12.targets\n");
    CHECK(run_cli("verify --config " + cfg2.string() + " > /dev/null 2>&1") == 4);
}

TEST_CASE("simulate reruns are byte identical, across thread counts too") {
    fs::path dir = fresh_dir("sim_det");
    fs::path cfg = write_simulate_cfg(dir, "det", 5);

    fs::path a = dir / "a";
    fs::path b = dir / "b";
    fs::path c = dir / "c";
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --out " + a.string() +
                    " > /dev/null") == 0);
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --out " + b.string() +
                    " > /dev/null") == 0);
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --threads 3 --out " +
                    c.string() + " > /dev/null") == 0);

    CHECK(slurp(a / "det_trace.csv") == slurp(b / "det_trace.csv"));
    CHECK(slurp(a / "det_trace.csv") == slurp(c / "det_trace.csv"));
    CHECK(slurp(a / "det_trace.meta") == slurp(b / "det_trace.meta"));
    CHECK(slurp(a / "det_trace.meta") == slurp(c / "det_trace.meta"));

    fs::path d = dir / "d";
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --seed 123 --out " +
                    d.string() + " > /dev/null") == 0);
    CHECK(slurp(a / "det_trace.csv") != slurp(d / "det_trace.csv"));
}

TEST_CASE("reps override trims the ensemble and shows up in the trace") {
    fs::path dir = fresh_dir("reps");
    fs::path cfg = write_simulate_cfg(dir, "short", 5);
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --reps-override 50 --out " +
                    dir.string() + " > /dev/null") == 0);
    BinnedTrace t = read_trace_csv((dir / "short_trace.csv").string());
    CHECK(t.n_reps == 50);
    CHECK(t.n_bins() == 50);
}

TEST_CASE("simulate from a sequence file and plot script output") {
    fs::path dir = fresh_dir("seqfile");
    fs::path cfg = dir / "run.cfg";
    spit(cfg, "[run]\nname = seqrun\nemitter = " + emitter12_fixture().string() +
                  "\nsequence = " + kConfigDir +
                  "/sequences/pulsed_decay.seq\nseed = 2\nplot = true\n");
    fs::path log = dir / "log.txt";
    REQUIRE(run_cli_capture("simulate --config " + cfg.string() + " --reps-override 100 --out " +
                                dir.string(),
                            log) == 0);
    CHECK(slurp(log).find("seqrun: 100 bins, 100 reps") != std::string::npos);
    CHECK(fs::exists(dir / "seqrun.gp"));
    CHECK(fs::exists(dir / "seqrun_manifest.txt"));
    std::string manifest = slurp(dir / "seqrun_manifest.txt");
    CHECK(manifest.find("command = simulate") != std::string::npos);
    CHECK(manifest.find("pulsed_decay.seq") != std::string::npos);
}

TEST_CASE("decay sweep writes a table and a linear fit report") {
    fs::path dir = fresh_dir("sweep");
    fs::path cfg = dir / "sweep.cfg";
    spit(cfg, "[run]\nname = sw\nemitter = " + emitter12_fixture().string() +
                  "\nseed = 9\n\n[sweep]\nkind = decay\naxis = res_power_nW\n"
                  "values = 2, 4, 6\n\n[overrides]\nrepetitions = 2000\n"
                  "pulse_ms = 2\nbin_width_us = 40\ngreen_power_uW = 11.5\n");
    fs::path log = dir / "log.txt";
    REQUIRE(run_cli_capture("sweep --config " + cfg.string() + " --out " + dir.string(),
                            log) == 0);

    std::string table = slurp(dir / "sw_sweep.csv");
    CHECK(table.rfind("power, rate, rate_err\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);

    auto j = nlohmann::json::parse(slurp(dir / "sw_linear.json"));
    CHECK(j["axis"] == "res_power_nW");
    CHECK(j["n_points_fit"] == 3);
    double slope = 0.0;
    for (const auto& p : j["linear_fit"]["parameters"])
        if (p["name"] == "slope") slope = p["value"].get<double>();
    CHECK(slope > 0.0);
    CHECK(slurp(log).find("slope") != std::string::npos);
}

TEST_CASE("recovery sweep runs the pulsed recovery analysis") {
    fs::path dir = fresh_dir("recsweep");
    fs::path cfg = dir / "rec.cfg";
    spit(cfg, "[run]\nname = rec\nemitter = " + emitter12_fixture().string() +
                  "\nseed = 13\n\n[sweep]\nkind = recovery\naxis = green_power_uW\n"
                  "values = 20, 30\n\n[overrides]\nrepetitions = 100\n");
    REQUIRE(run_cli("sweep --config " + cfg.string() + " --out " + dir.string() +
                    " > /dev/null") == 0);
    std::string table = slurp(dir / "rec_sweep.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
    auto j = nlohmann::json::parse(slurp(dir / "rec_linear.json"));
    CHECK(j["kind"] == "recovery");
    CHECK(j["linear_fit"].is_null());
}

TEST_CASE("ple writes scan map, meta and statistics") {
    fs::path dir = fresh_dir("ple");
    fs::path cfg = dir / "ple.cfg";
    spit(cfg, "[run]\nname = lines\nemitter = " + emitter12_fixture().string() +
                  "\nseed = 3\n\n[ple]\nmode = init_then_scan\nf_min_MHz = -60\n"
                  "f_max_MHz = 60\nstep_MHz = 4\ndwell_ms = 5\nn_scans = 6\n"
                  "res_power_nW = 2\ninit_ms = 100\n\n[gating]\nmin_peak_to_bg = 1.5\n");
    fs::path log = dir / "log.txt";
    REQUIRE(run_cli_capture("ple --config " + cfg.string() + " --out " + dir.string(),
                            log) == 0);

    ScanMap map = read_scanmap_csv((dir / "lines_scans.csv").string());
    CHECK(map.n_scans() == 6);
    CHECK(map.n_points() == 31);
    auto j = nlohmann::json::parse(slurp(dir / "lines_stats.json"));
    CHECK(j["n_scans"] == 6);
    CHECK(j["mode"] == "init_then_scan");
    REQUIRE(j.contains("mean_spectrum_fit"));
    CHECK(slurp(dir / "lines_scans.meta").find("mode = init_then_scan") !=
          std::string::npos);
    CHECK(slurp(log).find("6 scans") != std::string::npos);
}

TEST_CASE("fit command handles trace csv and plain two-column input") {
    fs::path dir = fresh_dir("fit");
    fs::path simcfg = write_simulate_cfg(dir, "src", 5);
    REQUIRE(run_cli("simulate --config " + simcfg.string() + " --out " + dir.string() +
                    " > /dev/null") == 0);

    fs::path cfg = dir / "fit.cfg";
    spit(cfg, "[run]\nname = refit\ninput = " + (dir / "src_trace.csv").string() +
                  "\nmodel = exp_decay\n");
    fs::path log = dir / "log.txt";
    REQUIRE(run_cli_capture("fit --config " + cfg.string() + " --out " + dir.string(),
                            log) == 0);
    auto j = nlohmann::json::parse(slurp(dir / "refit_fit.json"));
    bool has_rate = false;
    for (const auto& p : j["parameters"])
        if (p["name"] == "rate") has_rate = true;
    CHECK(has_rate);
    CHECK(slurp(log).find("rate") != std::string::npos);

    fs::path data = dir / "clean.csv";
    std::ostringstream csv;
    csv << "x, y\n";
    for (int i = 0; i < 8; ++i)
        csv << 0.5 * i << ", " << 100.0 * std::exp(-1.3 * 0.5 * i) + 7.0 << "\n";
    spit(data, csv.str());
    fs::path cfg2 = dir / "fit2.cfg";
    spit(cfg2, "[run]\nname = clean\ninput = " + data.string() + "\nmodel = exp_decay\n");
    REQUIRE(run_cli("fit --config " + cfg2.string() + " --out " + dir.string() +
                    " > /dev/null") == 0);
    auto j2 = nlohmann::json::parse(slurp(dir / "clean_fit.json"));
    for (const auto& p : j2["parameters"])
        if (p["name"] == "rate")
            CHECK(p["value"].get<double>() == Catch::Approx(1.3).epsilon(1e-6));
}
