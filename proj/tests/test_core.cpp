#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "unmix_gmm/core.hpp"
#include "unmix_gmm/io.hpp"

using namespace unmix_gmm;

namespace {

struct CapturedWarnings {
    std::vector<std::string> messages;
    WarningHandler previous;
    CapturedWarnings() {
        previous = set_warning_handler([this](const std::string& m) { messages.push_back(m); });
    }
    ~CapturedWarnings() { set_warning_handler(previous); }
};

GmmBundle tiny_bundle() {
    Matrix basis = Matrix::Zero(3, 2);
    basis(0, 0) = 1.0;
    basis(1, 1) = 1.0;
    ProjectionModel proj(Vector::Constant(3, 0.25), basis);
    std::vector<GaussianComponent> a{{0.3, Vector::Constant(2, 0.1), Matrix::Identity(2, 2) * 0.02},
                                     {0.7, Vector::Constant(2, -0.4), Matrix::Identity(2, 2) * 0.05}};
    Matrix c(2, 2);
    c << 0.04, 0.01, 0.01, 0.03;
    std::vector<GaussianComponent> b{{1.0, Vector::Constant(2, 1.0 / 3.0), c}};
    return GmmBundle({"grass", "roof"}, {a, b}, Matrix::Identity(2, 2) * default_noise_variance, proj);
}

}  // namespace

TEST_CASE("library CSV groups rows by class in order of first appearance") {
    std::istringstream in(
        "class,band_0,band_1,band_2,band_3\n"
        "A,0.1,0.2,0.3,0.4\n"
        "A,0.2,0.2,0.3,0.4\n"
        "B,0.5,0.5,0.5,0.5\n");
    const auto lib = parse_library_csv(in);
    CHECK(lib.class_count() == 2);
    CHECK(lib.band_count() == 4);
    CHECK(lib[0].name == "A");
    CHECK(lib[0].spectra.rows() == 2);
    CHECK(lib[1].spectra.rows() == 1);
    CHECK(lib.total_spectra() == 3);
}

TEST_CASE("library CSV accepts the class column anywhere and skips comments") {
    std::istringstream in(
        "# exported by hand\n"
        "band_0,class,band_1\n"
        "0.1,roof,0.2\n"
        "0.3,grass,0.4\n"
        "0.5,roof,0.6\n");
    const auto lib = parse_library_csv(in);
    REQUIRE(lib.class_names() == std::vector<std::string>{"roof", "grass"});
    CHECK(lib[0].spectra(1, 0) == 0.5);
    CHECK(lib[1].spectra(0, 1) == 0.4);
}

TEST_CASE("library CSV errors carry line numbers") {
    std::istringstream ragged("class,band_0,band_1\nA,0.1,0.2\nA,0.1\n");
    try {
        parse_library_csv(ragged);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream bad("class,band_0\nA,abc\n");
    CHECK_THROWS_AS(parse_library_csv(bad), ParseError);
    std::istringstream empty("");
    CHECK_THROWS_WITH_AS(parse_library_csv(empty), doctest::Contains("empty input"), ParseError);
    std::istringstream unlabeled("class,band_0\n,0.1\n");
    CHECK_THROWS_AS(parse_library_csv(unlabeled), ParseError);
}

TEST_CASE("reflectance outside [0,1] is a warning, not an error") {
    CapturedWarnings w;
    std::istringstream in("class,band_0,band_1\nA,1.02,0.5\nA,-0.01,0.5\n");
    const auto lib = parse_library_csv(in);
    CHECK(lib.total_spectra() == 2);
    CHECK(w.messages.size() == 1);
}

TEST_CASE("library invariants") {
    CHECK_THROWS_AS(SpectralLibrary({}), ValidationError);
    CHECK_THROWS_AS(SpectralLibrary({{"a", Matrix::Zero(1, 3)}, {"a", Matrix::Zero(1, 3)}}), ValidationError);
    CHECK_THROWS_AS(SpectralLibrary({{"a", Matrix::Zero(1, 3)}, {"b", Matrix::Zero(1, 2)}}), ValidationError);
    CHECK_THROWS_AS(SpectralLibrary({{"a", Matrix::Zero(0, 3)}}), ValidationError);
    Matrix nan = Matrix::Zero(1, 2);
    nan(0, 1) = std::nan("");
    CHECK_THROWS_AS(SpectralLibrary({{"a", nan}}), ValidationError);
}

TEST_CASE("pixel block shape must match pixel count") {
    CHECK_NOTHROW(PixelBlock(Matrix::Zero(6, 2), ImageShape{2, 3}));
    CHECK_THROWS_AS(PixelBlock(Matrix::Zero(6, 2), ImageShape{2, 2}), ValidationError);
}

TEST_CASE("projection requires orthonormal columns") {
    Matrix basis = Matrix::Identity(3, 2);
    CHECK_NOTHROW(ProjectionModel(Vector::Zero(3), basis));
    basis(0, 1) = 1e-6;
    CHECK_THROWS_AS(ProjectionModel(Vector::Zero(3), basis), ValidationError);
    CHECK_THROWS_AS(ProjectionModel(Vector::Zero(2), Matrix::Identity(3, 2)), ValidationError);
}

TEST_CASE("bundle validation") {
    const auto ok = tiny_bundle();
    CHECK(ok.component_counts() == std::vector<int>{2, 1});

    const auto proj = ProjectionModel::identity(2);
    const Matrix D = Matrix::Identity(2, 2) * 1e-6;
    // Weights must sum to one; the error names the sum.
    std::vector<GaussianComponent> off{{0.5, Vector::Zero(2), Matrix::Identity(2, 2)},
                                       {0.4, Vector::Zero(2), Matrix::Identity(2, 2)}};
    CHECK_THROWS_WITH_AS(GmmBundle({"a"}, {off}, D, proj), doctest::Contains("0.9"), ValidationError);

    std::vector<GaussianComponent> singular{{1.0, Vector::Zero(2), Matrix::Zero(2, 2)}};
    CHECK_THROWS_AS(GmmBundle({"a"}, {singular}, D, proj), ValidationError);

    Matrix asym = Matrix::Identity(2, 2);
    asym(0, 1) = 0.1;
    std::vector<GaussianComponent> nonsym{{1.0, Vector::Zero(2), asym}};
    CHECK_THROWS_AS(GmmBundle({"a"}, {nonsym}, D, proj), ValidationError);

    std::vector<GaussianComponent> wrong_dim{{1.0, Vector::Zero(3), Matrix::Identity(3, 3)}};
    CHECK_THROWS_AS(GmmBundle({"a"}, {wrong_dim}, D, proj), ValidationError);

    std::vector<GaussianComponent> good{{1.0, Vector::Zero(2), Matrix::Identity(2, 2)}};
    CHECK_THROWS_AS(GmmBundle({"a"}, {good}, Matrix::Zero(2, 2), proj), ValidationError);
}

TEST_CASE("abundance rows must lie on the simplex") {
    Matrix a(2, 2);
    a << 0.25, 0.75, 1.0, 0.0;
    CHECK_NOTHROW(AbundanceMatrix{a});
    a(0, 0) = 0.3;
    CHECK_THROWS_AS(AbundanceMatrix{a}, ValidationError);
    a << -0.1, 1.1, 1.0, 0.0;
    CHECK_THROWS_AS(AbundanceMatrix{a}, ValidationError);
}

TEST_CASE("bundle JSON round trip is bit exact") {
    const auto bundle = tiny_bundle();
    const auto text = dump_json(bundle_to_json(bundle));
    const auto back = bundle_from_json(json::parse(text));
    CHECK(back == bundle);
    CHECK(dump_json(bundle_to_json(back)) == text);
}

TEST_CASE("bundle JSON rejects unknown versions and malformed fields") {
    auto j = bundle_to_json(tiny_bundle());
    auto bad_version = j;
    bad_version["format_version"] = 99;
    CHECK_THROWS_AS(bundle_from_json(bad_version), ValidationError);
    auto bad_matrix = j;
    bad_matrix["noise_covariance"]["data"] = json::array({1.0});
    CHECK_THROWS_AS(bundle_from_json(bad_matrix), ValidationError);
    auto missing = j;
    missing.erase("classes");
    CHECK_THROWS_AS(bundle_from_json(missing), ValidationError);
}

TEST_CASE("shortest round-trip doubles") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int i = 0; i < 1000; ++i) {
        const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        CHECK(std::stod(format_double(x)) == x);
    }
    CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("pixel and abundance CSV round trips") {
    Matrix y(2, 3);
    y << 0.1, 0.2, 1.0 / 3.0, 0.4, 0.5, 0.6;
    std::ostringstream out;
    write_pixels_csv(out, PixelBlock(y));
    std::istringstream in(out.str());
    CHECK(parse_pixels_csv(in).pixels() == y);

    Matrix a(2, 2);
    a << 0.25, 0.75, 1.0 / 3.0, 2.0 / 3.0;
    std::ostringstream aout;
    write_abundance_csv(aout, AbundanceMatrix(a), {"grass", "roof"});
    std::istringstream ain(aout.str());
    const auto back = parse_abundance_csv(ain);
    CHECK(back.class_names == std::vector<std::string>{"grass", "roof"});
    CHECK(back.abundances.values() == a);

    std::ostringstream lout;
    const SpectralLibrary lib({{"x", y}, {"z", y.topRows(1)}});
    write_library_csv(lout, lib);
    std::istringstream lin(lout.str());
    const auto lib2 = parse_library_csv(lin);
    CHECK(lib2[0].spectra == y);
    CHECK(lib2[1].spectra == y.topRows(1));
}

TEST_CASE("atomic writes leave no temporary files") {
    const auto dir = std::filesystem::temp_directory_path() / "unmix_gmm_core_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto path = dir / "bundle.json";
    save_bundle(tiny_bundle(), path);
    CHECK(load_bundle(path) == tiny_bundle());
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
    CHECK(files == 1);
    CHECK_THROWS_AS(load_bundle(dir / "missing.json"), ValidationError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("loaders name the file and line") {
    const auto dir = std::filesystem::temp_directory_path() / "unmix_gmm_core_test2";
    std::filesystem::create_directories(dir);
    const auto path = dir / "lib.csv";
    write_file_atomic(path, "class,band_0\nA,0.1\nA,0.1,0.2\n");
    try {
        load_library(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("lib.csv") != std::string::npos);
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("line 3", msg.find("line 3") + 1) == std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
