#define DOCTEST_CONFIG_IMPLEMENT
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "dflab/experiments.hpp"
#include "doctest.h"

using namespace dflab;
namespace fs = std::filesystem;

namespace {

std::string bin_dir;

int run_cmd(const std::string& cmd) {
    int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(static_cast<unsigned>(rc));
}

Json strip_timestamp(Json j) {
    j.erase("timestamp");
    return j;
}

Json sample_manifest() {
    Json m;
    m["kind"] = "sample";
    m["n"] = 5;
    m["d"] = 1;
    m["master_seed"] = 7;
    return m;
}

// coarse grid and zero budget against a tight Monte Carlo estimate: the
// systematic discretization error is several times the statistical window,
// so this manifest must fail its own assertion
Json rigged_kolmogorov() {
    Json m;
    m["kind"] = "kolmogorov";
    m["eps"] = 0.3;
    m["n_g"] = 8;
    m["dt_pde"] = 1e-4;
    m["dt_mc"] = 1e-3;
    m["T"] = 0.01;
    m["n_paths"] = 100000;
    m["master_seed"] = 99;
    m["init"]["weights"] = {0.62, 0.38};
    m["init"]["atoms"] = {{0.125}, {0.625}};
    return m;
}

fs::path fresh_dir(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / leaf;
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("manifest hash is stable and sensitive") {
    Json m = sample_manifest();
    std::string h = manifest_hash(m);
    CHECK(h.size() == 16);
    CHECK(h == manifest_hash(sample_manifest()));
    Json other = sample_manifest();
    other["n"] = 6;
    CHECK(h != manifest_hash(other));
}

TEST_CASE("sample kind emits serialized measures deterministically") {
    Json m = sample_manifest();
    RunOutcome a = run_manifest(m);
    RunOutcome b = run_manifest(m);
    CHECK(a.exit_code == 0);
    CHECK(a.results.at("schema") == "dflab.results.v1");
    CHECK(a.results.at("pass") == true);
    CHECK(a.results.at("manifest") == m);
    CHECK(a.results.at("manifest_hash") == manifest_hash(m));
    CHECK(a.results.contains("timestamp"));

    const Json& measures = a.results.at("report").at("measures");
    REQUIRE(measures.size() == 5);
    for (const Json& mu : measures) {
        const Json& w = mu.at("weights");
        REQUIRE(w.size() >= 1);
        double sum = mu.at("tail").get<double>();
        double prev = 2.0;
        for (const Json& wi : w) {
            double x = wi.get<double>();
            CHECK(x > 0.0);
            CHECK(x <= prev);
            prev = x;
            sum += x;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        REQUIRE(mu.at("atoms").size() == w.size());
        for (const Json& atom : mu.at("atoms")) {
            REQUIRE(atom.size() == 1);
            double x = atom[0].get<double>();
            CHECK(x >= 0.0);
            CHECK(x < 1.0);
        }
    }

    CHECK(strip_timestamp(a.results).dump() == strip_timestamp(b.results).dump());
}

TEST_CASE("worker count never changes the numbers") {
    Json m;
    m["kind"] = "girsanov";
    m["n_paths"] = 500;
    m["T"] = 0.02;
    m["dt"] = 1e-3;
    m["master_seed"] = 11;
    Json m3 = m;
    m3["workers"] = 3;

    RunOutcome a = run_manifest(m);
    RunOutcome b = run_manifest(m3);
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);
    CHECK(a.results.at("report").dump() == b.results.at("report").dump());
}

TEST_CASE("configuration errors name the offending field") {
    auto field_of = [](const Json& m) {
        RunOutcome out = run_manifest(m);
        REQUIRE(out.exit_code == 1);
        REQUIRE(out.results.at("pass") == false);
        return out.results.at("error").at("field").get<std::string>();
    };

    CHECK(field_of(Json::object()) == "kind");

    Json unknown;
    unknown["kind"] = "frobnicate";
    CHECK(field_of(unknown) == "kind");

    Json bad_n = sample_manifest();
    bad_n["n"] = 0;
    CHECK(field_of(bad_n) == "n");

    Json mismatched = rigged_kolmogorov();
    mismatched["drift"]["name"] = "mean_attraction";
    mismatched["drift"]["amp"] = 0.3;
    mismatched["drift"]["compat_eps"] = 0.2;  // reads below the 0.3 truncation
    CHECK(field_of(mismatched) == "drift.compat_eps");

    Json no_init;
    no_init["kind"] = "kolmogorov";
    no_init["eps"] = 0.3;
    CHECK(field_of(no_init) == "init");

    Json bad_g = rigged_kolmogorov();
    bad_g["g"]["outer"]["name"] = "linear";
    bad_g["g"]["outer"]["a"] = {1.0};
    bad_g["g"]["inner"] = {{{"name", "smooth_mode"}, {"eps", 0.1}}};
    CHECK(field_of(bad_g) == "g");

    Json bad_ladder;
    bad_ladder["kind"] = "stability-ladder";
    bad_ladder["eps_ladder"] = {0.2, 0.3};
    CHECK(field_of(bad_ladder) == "eps_ladder");

    Json bad_cfl;
    bad_cfl["kind"] = "control-verify";
    bad_cfl["eps"] = 0.3;
    bad_cfl["n_g"] = 16;
    bad_cfl["dt_pde"] = 0.08;  // h = 1/16 and Lip_p = 1 force dt <= 0.0625
    bad_cfl["init"]["weights"] = {0.62, 0.38};
    bad_cfl["init"]["atoms"] = {{0.125}, {0.625}};
    bad_cfl["lagrangian"]["name"] = "quadratic_ball";
    bad_cfl["lagrangian"]["radius"] = 1.0;
    bad_cfl["G"]["outer"]["name"] = "linear";
    bad_cfl["G"]["outer"]["a"] = {1.0};
    bad_cfl["G"]["inner"] = {{{"name", "smooth_mode"}, {"eps", 0.3}}};
    CHECK(field_of(bad_cfl) == "dt_pde");
}

TEST_CASE("violated identity exits 2 with the report attached") {
    RunOutcome out = run_manifest(rigged_kolmogorov());
    CHECK(out.exit_code == 2);
    CHECK(out.results.at("pass") == false);
    CHECK(out.error.find("kolmogorov") == 0);
    const Json& rep = out.results.at("report");
    CHECK(rep.at("pass") == false);
    CHECK(rep.at("diff").get<double>() > rep.at("tol").get<double>());
    CHECK(rep.at("budget").at("value").get<double>() == 0.0);
}

TEST_CASE("run files persist the manifest verbatim and replay byte-identically") {
    Json m;
    m["kind"] = "mecke";
    m["n"] = 2000;
    m["master_seed"] = 21;
    fs::path dir = fresh_dir("dflab_cli_files");

    RunOutcome a = run_manifest(m);
    CHECK(a.exit_code == 0);
    std::string results_path = write_run_files(a, dir.string());
    CHECK(fs::exists(dir / "results.json"));
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "tables.csv"));
    CHECK(results_path == (dir / "results.json").string());

    std::ifstream mf(dir / "manifest.json");
    Json persisted = Json::parse(mf);
    CHECK(persisted == m);
    CHECK(persisted.dump() == m.dump());

    std::ifstream rf(dir / "results.json");
    Json stored = Json::parse(rf);
    CHECK(stored.at("manifest_hash") == manifest_hash(persisted));

    // replay from the persisted manifest
    RunOutcome b = run_manifest(persisted);
    CHECK(strip_timestamp(b.results).dump() == strip_timestamp(stored).dump());
    CHECK(b.csv == a.csv);
    fs::remove_all(dir);
}

TEST_CASE("seed override changes the stream, same seed restores it") {
    Json m = sample_manifest();
    RunOutcome base = run_manifest(m);
    m["master_seed"] = 8;
    RunOutcome other = run_manifest(m);
    CHECK(strip_timestamp(base.results).at("report").dump() !=
          strip_timestamp(other.results).at("report").dump());
    m["master_seed"] = 7;
    RunOutcome again = run_manifest(m);
    CHECK(strip_timestamp(base.results).dump() == strip_timestamp(again.results).dump());
}

TEST_CASE("command line front end: exit codes and artifacts") {
    std::string exe = bin_dir + "/dflab";
    REQUIRE(fs::exists(exe));

    fs::path work = fresh_dir("dflab_cli_proc");
    fs::create_directories(work);

    CHECK(run_cmd(exe + " run --manifest '" + (work / "missing.json").string() + "'") == 1);

    {
        std::ofstream f(work / "sample.json");
        f << sample_manifest().dump(2) << '\n';
    }
    fs::path out1 = work / "out1";
    CHECK(run_cmd(exe + " run --manifest '" + (work / "sample.json").string() + "' --out '" +
                  out1.string() + "'") == 0);
    CHECK(fs::exists(out1 / "results.json"));
    CHECK(fs::exists(out1 / "manifest.json"));

    {
        std::ofstream f(work / "rigged.json");
        f << rigged_kolmogorov().dump(2) << '\n';
    }
    fs::path out2 = work / "out2";
    CHECK(run_cmd(exe + " run --manifest '" + (work / "rigged.json").string() + "' --out '" +
                  out2.string() + "'") == 2);
    CHECK(fs::exists(out2 / "results.json"));

    // --seed override lands in the persisted manifest
    fs::path out3 = work / "out3";
    CHECK(run_cmd(exe + " run --manifest '" + (work / "sample.json").string() +
                  "' --seed 12 --out '" + out3.string() + "'") == 0);
    std::ifstream mf(out3 / "manifest.json");
    Json persisted = Json::parse(mf);
    CHECK(persisted.at("master_seed").get<std::uint64_t>() == 12);

    CHECK(run_cmd(exe + " acceptance no-such-criterion") == 1);
    CHECK(run_cmd(exe + " acceptance tail-mass") == 0);

    fs::remove_all(work);
}

int main(int argc, char** argv) {
    bin_dir = fs::path(argv[0]).parent_path().string();
    return doctest::Context(argc, argv).run();
}
