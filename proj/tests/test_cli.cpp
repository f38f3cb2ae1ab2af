#include <doctest.h>

#include <atomic>
#include <fstream>
#include <map>
#include <sstream>

#include <stdlib.h>
#include <unistd.h>

#include "cli.hpp"

using namespace unmix_gmm;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const fs::path p = fs::temp_directory_path() /
                       ("unmix_gmm_cli_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    }
    return files;
}

const char* small_config = R"({
  "seed": 3,
  "library": {"synthetic": {"spectra_per_class": 40, "bands": 20}},
  "projection": {"dimension": 5},
  "selection": {"repeats": 2, "candidates": [1, 2]},
  "scenes": {"images": 2, "rows": 6, "cols": 5, "spectra_per_class": 8},
  "merge": [{"name": "soft", "classes": ["turfgrass", "npv"]}, {"name": "hard", "classes": ["paved", "roof"]}],
  "compare_gmm1": true
})";

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run({"--help"}).code == 0);
    for (const char* sub : {"pca", "select", "fit", "unmix", "synth", "eval", "pipeline"}) {
        CHECK(run({sub, "--help"}).code == 0);
    }
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"pca", "--library", "/nonexistent/lib.csv", "--out", "x.json"}).code == 1);
    CHECK(run({"pca", "--bogus"}).code == 1);
}

TEST_CASE("sha256 of known strings") {
    CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("pipeline writes stamped outputs and is reproducible across thread counts") {
    const fs::path dir = fresh_dir("pipeline");
    write(dir / "config.json", small_config);
    const auto a = run({"--threads", "1", "pipeline", "--config", (dir / "config.json").string(), "--out",
                        (dir / "a").string()});
    REQUIRE_MESSAGE(a.code == 0, a.err);
    CHECK(a.err.find("config sha256:") != std::string::npos);
    CHECK(a.err.find("seeds") != std::string::npos);
    const auto b = run({"--threads", "4", "pipeline", "--config", (dir / "config.json").string(), "--out",
                        (dir / "b").string()});
    REQUIRE(b.code == 0);
    const auto ta = tree(dir / "a");
    CHECK(ta == tree(dir / "b"));
    CHECK(!fs::exists(dir / "a.partial"));

    for (const char* f : {"report.json", "bundle.json", "bundle_gmm1.json", "projection.json", "selection.json",
                          "images/image_000.shape.json", "images/image_001.picks.json",
                          "estimates/gmm/image_001.diagnostics.json"}) {
        INFO(f);
        REQUIRE(ta.count(f) == 1);
        const json j = json::parse(ta.at(f));
        CHECK(j.at("tool").at("version") == version());
        CHECK(j.at("inputs").contains("config.json"));
    }
    for (const auto& [name, contents] : ta) {
        if (name.ends_with(".csv")) {
            INFO(name);
            CHECK(contents.starts_with("# unmix-gmm "));
        }
    }
    const json report = json::parse(ta.at("report.json"));
    CHECK(report.at("gmm").at("individual").at("mad").size() == 4);
    CHECK(report.at("gmm").at("merged").at("classes") == json({"soft", "hard"}));
    CHECK(report.at("gmm1").at("individual").at("average_mad").get<double>() >= 0.0);

    // The saved products load back through the library readers.
    const auto bundle = load_bundle(dir / "a" / "bundle.json");
    CHECK(bundle.class_names() == std::vector<std::string>{"turfgrass", "npv", "paved", "roof"});
    const auto px = load_pixels(dir / "a" / "images" / "image_000.csv", dir / "a" / "images" / "image_000.shape.json");
    CHECK(px.pixel_count() == 30);

    // A non-empty output directory is refused and left alone.
    const auto c = run({"pipeline", "--config", (dir / "config.json").string(), "--out", (dir / "a").string()});
    CHECK(c.code == 1);
    CHECK(tree(dir / "a") == ta);
    fs::remove_all(dir);
}

TEST_CASE("pipeline config is strict") {
    const fs::path dir = fresh_dir("strict");
    write(dir / "config.json", R"({"seed": 1, "scenes": {"imgs": 3}})");
    const auto r = run({"pipeline", "--config", (dir / "config.json").string(), "--out", (dir / "o").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("imgs") != std::string::npos);
    CHECK(!fs::exists(dir / "o"));
    write(dir / "config.json", R"({"seed": 1, "force_k": 1, "selection": {"repeats": 2}})");
    CHECK(run({"pipeline", "--config", (dir / "config.json").string(), "--out", (dir / "o").string()}).code == 1);
    fs::remove_all(dir);
}

TEST_CASE("shipped reproduction config parses") {
    const fs::path p = fs::path(UNMIX_GMM_REPRO_DIR) / "synthetic.json";
    const auto cfg = cli::parse_pipeline_config(load_json(p), p.parent_path());
    CHECK(cfg.images == 10);
    CHECK(cfg.shape == ImageShape{64, 64});
    CHECK(cfg.synthetic_library.spectra_per_class == 200);
    CHECK(cfg.synthetic_library.class_names.size() == 4);
    CHECK(cfg.max_active == 3);
    CHECK(cfg.compare_gmm1);
    // Canonical form round-trips.
    const auto again = cli::parse_pipeline_config(cfg.to_json(), p.parent_path());
    CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("subcommands chain from library to evaluation") {
    const fs::path dir = fresh_dir("chain");
    write(dir / "config.json", small_config);
    REQUIRE(run({"pipeline", "--config", (dir / "config.json").string(), "--out", (dir / "p").string()}).code == 0);
    const std::string lib = (dir / "p" / "library.csv").string();
    const auto s = [&](const char* f) { return (dir / f).string(); };

    REQUIRE(run({"pca", "--library", lib, "--dim", "5", "--out", s("proj.json")}).code == 0);
    REQUIRE(run({"select", "--library", lib, "--projection", s("proj.json"), "--repeats", "2", "--candidates", "1,2",
                 "--out", s("sel.json")})
                .code == 0);
    const json sel = load_json(dir / "sel.json");
    CHECK(sel.at("repeats").size() == 2);
    REQUIRE(run({"fit", "--library", lib, "--projection", s("proj.json"), "--selection", s("sel.json"), "--out",
                 s("bundle.json")})
                .code == 0);
    REQUIRE(run({"fit", "--library", lib, "--projection", s("proj.json"), "--force-k", "1", "--out",
                 s("bundle1.json")})
                .code == 0);
    CHECK(load_bundle(dir / "bundle1.json").component_counts() == std::vector<int>{1, 1, 1, 1});
    CHECK(run({"fit", "--library", lib, "--projection", s("proj.json"), "--k", "1,2", "--out", s("bad.json")}).code ==
          1);
    CHECK(!fs::exists(dir / "bad.json"));

    write(dir / "spec.json", R"({"count_per_class": 5, "rows": 4, "cols": 3, "seed": 9, "abundance": {"mode": "dirichlet", "concentration": 0.5}})");
    REQUIRE(run({"synth", "--library", lib, "--spec", s("spec.json"), "--out-pixels", s("img.csv"), "--out-truth",
                 s("truth.csv"), "--out-picks", s("picks.json"), "--out-shape", s("img.shape.json")})
                .code == 0);
    const auto truth = load_abundances(dir / "truth.csv");
    CHECK(truth.abundances.rows() == 12);
    const json picks = load_json(dir / "picks.json");
    CHECK(picks.at("picks").size() == 12);

    fs::create_directories(dir / "est");
    fs::create_directories(dir / "tru");
    REQUIRE(run({"unmix", "--bundle", s("bundle.json"), "--pixels", s("img.csv"), "--shape", s("img.shape.json"),
                 "--out", s("est/img.csv"), "--diagnostics", s("diag.json")})
                .code == 0);
    const json diag = load_json(dir / "diag.json");
    const auto trace = diag.at("objective_trace").get<std::vector<double>>();
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-10 * std::abs(trace[i - 1]));

    // Truth with permuted columns: eval matches classes by name.
    const auto t = truth.abundances.values();
    std::ostringstream permuted;
    permuted << "roof,paved,npv,turfgrass\n";
    for (Index n = 0; n < t.rows(); ++n) {
        permuted << format_double(t(n, 3)) << "," << format_double(t(n, 2)) << "," << format_double(t(n, 1)) << ","
                 << format_double(t(n, 0)) << "\n";
    }
    write(dir / "tru" / "img.csv", permuted.str());
    fs::copy_file(dir / "truth.csv", dir / "est" / "self.csv");
    fs::copy_file(dir / "truth.csv", dir / "tru" / "self.csv");
    write(dir / "merge.json", R"([{"name": "a", "classes": ["turfgrass", "npv", "paved"]}, {"name": "b", "classes": ["roof"]}])");
    REQUIRE(run({"eval", "--est", s("est"), "--truth", s("tru"), "--merge", s("merge.json"), "--out", s("report.json"),
                 "--points", s("points.csv")})
                .code == 0);
    const json report = load_json(dir / "report.json");
    CHECK(report.at("images") == json({"img", "self"}));
    CHECK(report.at("individual").at("classes") == json({"roof", "paved", "npv", "turfgrass"}));
    CHECK(report.at("merged").at("classes") == json({"a", "b"}));
    for (double m : report.at("individual").at("mad").get<std::vector<double>>()) CHECK(m < 0.2);
    const std::string points = read_file(dir / "points.csv");
    CHECK(points.find("level,category,image,truth,difference") != std::string::npos);
    CHECK(points.find("merged,b,self,") != std::string::npos);

    // Estimates missing for a truth image is an error.
    write(dir / "tru" / "extra.csv", permuted.str());
    CHECK(run({"eval", "--est", s("est"), "--truth", s("tru"), "--out", s("r2.json")}).code == 1);
    fs::remove_all(dir);
}

TEST_CASE("thread count falls back to the environment") {
    const fs::path dir = fresh_dir("env");
    write(dir / "config.json", small_config);
    ::setenv("UNMIX_GMM_THREADS", "zero", 1);
    CHECK(run({"pipeline", "--config", (dir / "config.json").string(), "--out", (dir / "o").string()}).code == 1);
    ::setenv("UNMIX_GMM_THREADS", "2", 1);
    CHECK(run({"pipeline", "--config", (dir / "config.json").string(), "--out", (dir / "o").string()}).code == 0);
    ::unsetenv("UNMIX_GMM_THREADS");
    fs::remove_all(dir);
}

TEST_CASE("a bundle that fails validation exits 1") {
    const fs::path dir = fresh_dir("badbundle");
    write(dir / "bundle.json", R"({"format_version": 1})");
    write(dir / "px.csv", "band_0\n0.1\n");
    CHECK(run({"unmix", "--bundle", (dir / "bundle.json").string(), "--pixels", (dir / "px.csv").string(), "--out",
               (dir / "o.csv").string()})
              .code == 1);
    CHECK(!fs::exists(dir / "o.csv"));
    fs::remove_all(dir);
}
