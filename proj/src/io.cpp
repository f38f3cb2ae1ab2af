#include "unmix_gmm/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <system_error>

namespace unmix_gmm {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(trim(line.substr(start)));
            break;
        }
        fields.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

double parse_number(std::string_view field, std::size_t line_no) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (field.empty() || ec != std::errc() || ptr != last) {
        throw ParseError("non-numeric value '" + std::string(field) + "'", line_no);
    }
    if (!std::isfinite(value)) {
        throw ParseError("non-finite value '" + std::string(field) + "'", line_no);
    }
    return value;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string_view>> rows;  // views into `storage`
    std::vector<std::size_t> line_numbers;
    std::vector<std::string> storage;
};

// Reads a header line and all data lines, rejecting ragged rows.
CsvTable read_csv(std::istream& in) {
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::vector<std::pair<std::string, std::size_t>> lines;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (!have_header) {
            for (auto f : split_fields(t)) table.header.emplace_back(f);
            have_header = true;
            continue;
        }
        lines.emplace_back(std::string(t), line_no);
    }
    if (!have_header) {
        throw ParseError("empty input: no header row", 0);
    }
    table.storage.reserve(lines.size());
    for (auto& [text, no] : lines) {
        table.storage.push_back(std::move(text));
        auto fields = split_fields(table.storage.back());
        if (fields.size() != table.header.size()) {
            throw ParseError("expected " + std::to_string(table.header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             no);
        }
        table.rows.push_back(std::move(fields));
        table.line_numbers.push_back(no);
    }
    return table;
}

void warn_overshoot(const Matrix& values, const std::string& source) {
    const auto outside = ((values.array() < 0.0) || (values.array() > 1.0)).count();
    if (outside > 0) {
        warn(source + ": " + std::to_string(outside) +
             " reflectance value(s) outside [0, 1] accepted");
    }
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + path.string() + "'");
    }
    return in;
}

void write_row(std::ostream& out, const auto& row) {
    for (Index b = 0; b < row.size(); ++b) {
        if (b) out << ',';
        out << format_double(row(b));
    }
    out << '\n';
}

}  // namespace

std::string format_double(double value) {
    std::array<char, 32> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc()) {
        throw NumericError("cannot format number");
    }
    return std::string(buf.data(), ptr);
}

// ---------------------------------------------------------------------------

SpectralLibrary parse_library_csv(std::istream& in) {
    CsvTable table = read_csv(in);
    std::size_t class_col = table.header.size();
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (table.header[c] == "class") {
            if (class_col != table.header.size()) {
                throw ParseError("header has more than one 'class' column", 0);
            }
            class_col = c;
        }
    }
    if (class_col == table.header.size()) {
        throw ParseError("header has no 'class' column", 0);
    }
    const Index bands = static_cast<Index>(table.header.size()) - 1;
    if (bands < 1) {
        throw ParseError("header names no bands", 0);
    }
    if (table.rows.empty()) {
        throw ParseError("library has no spectra", 0);
    }

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const std::string name(table.rows[r][class_col]);
        if (name.empty()) {
            throw ParseError("empty class label", table.line_numbers[r]);
        }
        auto [it, inserted] = members.try_emplace(name);
        if (inserted) order.push_back(name);
        it->second.push_back(r);
    }

    std::vector<EndmemberClass> classes;
    classes.reserve(order.size());
    for (const auto& name : order) {
        const auto& rows = members.at(name);
        Matrix spectra(static_cast<Index>(rows.size()), bands);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& fields = table.rows[rows[i]];
            Index b = 0;
            for (std::size_t c = 0; c < fields.size(); ++c) {
                if (c == class_col) continue;
                spectra(static_cast<Index>(i), b++) =
                    parse_number(fields[c], table.line_numbers[rows[i]]);
            }
        }
        classes.push_back({name, std::move(spectra)});
    }
    SpectralLibrary library(std::move(classes));
    warn_overshoot(library.stacked(), "library");
    return library;
}

SpectralLibrary load_library(const fs::path& path) {
    auto in = open_input(path);
    try {
        return parse_library_csv(in);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.line());
    }
}

void write_library_csv(std::ostream& out, const SpectralLibrary& library) {
    out << "class";
    for (Index b = 0; b < library.band_count(); ++b) out << ",band_" << b;
    out << '\n';
    for (const auto& c : library.classes()) {
        for (Index i = 0; i < c.spectra.rows(); ++i) {
            out << c.name << ',';
            write_row(out, c.spectra.row(i));
        }
    }
}

// ---------------------------------------------------------------------------

PixelBlock parse_pixels_csv(std::istream& in, std::optional<ImageShape> shape) {
    CsvTable table = read_csv(in);
    const auto bands = static_cast<Index>(table.header.size());
    Matrix pixels(static_cast<Index>(table.rows.size()), bands);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        for (Index b = 0; b < bands; ++b) {
            pixels(static_cast<Index>(r), b) =
                parse_number(table.rows[r][static_cast<std::size_t>(b)], table.line_numbers[r]);
        }
    }
    warn_overshoot(pixels, "pixels");
    return PixelBlock(std::move(pixels), shape);
}

PixelBlock load_pixels(const fs::path& path, const std::optional<fs::path>& shape_path) {
    std::optional<ImageShape> shape;
    if (shape_path) shape = load_shape(*shape_path);
    auto in = open_input(path);
    try {
        return parse_pixels_csv(in, shape);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.line());
    }
}

void write_pixels_csv(std::ostream& out, const PixelBlock& pixels) {
    for (Index b = 0; b < pixels.band_count(); ++b) {
        if (b) out << ',';
        out << "band_" << b;
    }
    out << '\n';
    for (Index n = 0; n < pixels.pixel_count(); ++n) write_row(out, pixels.pixels().row(n));
}

ImageShape load_shape(const fs::path& path) {
    const json j = load_json(path);
    try {
        return ImageShape{j.at("rows").get<Index>(), j.at("cols").get<Index>()};
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": invalid shape sidecar: " + e.what());
    }
}

json shape_to_json(const ImageShape& shape) {
    return json{{"rows", shape.rows}, {"cols", shape.cols}};
}

// ---------------------------------------------------------------------------

LabeledAbundances parse_abundance_csv(std::istream& in) {
    CsvTable table = read_csv(in);
    const auto classes = static_cast<Index>(table.header.size());
    Matrix values(static_cast<Index>(table.rows.size()), classes);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        for (Index j = 0; j < classes; ++j) {
            values(static_cast<Index>(r), j) =
                parse_number(table.rows[r][static_cast<std::size_t>(j)], table.line_numbers[r]);
        }
    }
    return {table.header, AbundanceMatrix(std::move(values))};
}

LabeledAbundances load_abundances(const fs::path& path) {
    auto in = open_input(path);
    try {
        return parse_abundance_csv(in);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.detail(), e.line());
    }
}

void write_abundance_csv(std::ostream& out, const AbundanceMatrix& abundances,
                         const std::vector<std::string>& class_names) {
    if (static_cast<Index>(class_names.size()) != abundances.cols()) {
        throw ValidationError("abundance column count does not match class names");
    }
    for (std::size_t j = 0; j < class_names.size(); ++j) {
        if (j) out << ',';
        out << class_names[j];
    }
    out << '\n';
    for (Index n = 0; n < abundances.rows(); ++n) write_row(out, abundances.values().row(n));
}

// ---------------------------------------------------------------------------

json matrix_to_json(const Matrix& m) {
    json data = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j, const std::string& what) {
    try {
        const auto rows = j.at("rows").get<Index>();
        const auto cols = j.at("cols").get<Index>();
        const auto& data = j.at("data");
        if (rows < 0 || cols < 0 || !data.is_array() ||
            data.size() != static_cast<std::size_t>(rows * cols)) {
            throw ValidationError(what + ": data length does not match rows x cols");
        }
        Matrix m(rows, cols);
        std::size_t i = 0;
        for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
        }
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(what + ": " + e.what());
    }
}

json vector_to_json(const Vector& v) {
    json data = json::array();
    for (Index i = 0; i < v.size(); ++i) data.push_back(v(i));
    return data;
}

Vector vector_from_json(const json& j, const std::string& what) {
    try {
        if (!j.is_array()) throw ValidationError(what + ": expected an array");
        Vector v(static_cast<Index>(j.size()));
        for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
        return v;
    } catch (const json::exception& e) {
        throw ValidationError(what + ": " + e.what());
    }
}

json projection_to_json(const ProjectionModel& projection) {
    return json{{"band_count", projection.band_count()},
                {"dimension", projection.dimension()},
                {"center", vector_to_json(projection.center())},
                {"basis", matrix_to_json(projection.basis())}};
}

ProjectionModel projection_from_json(const json& j) {
    try {
        ProjectionModel p(vector_from_json(j.at("center"), "projection center"),
                          matrix_from_json(j.at("basis"), "projection basis"));
        if (j.contains("band_count") && j.at("band_count").get<Index>() != p.band_count()) {
            throw ValidationError("projection band_count does not match basis");
        }
        if (j.contains("dimension") && j.at("dimension").get<Index>() != p.dimension()) {
            throw ValidationError("projection dimension does not match basis");
        }
        return p;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("projection: ") + e.what());
    }
}

json bundle_to_json(const GmmBundle& bundle) {
    json classes = json::array();
    for (std::size_t j = 0; j < bundle.class_count(); ++j) {
        json comps = json::array();
        for (const auto& c : bundle.components(j)) {
            comps.push_back(json{{"weight", c.weight},
                                 {"mean", vector_to_json(c.mean)},
                                 {"covariance", matrix_to_json(c.covariance)}});
        }
        classes.push_back(json{{"name", bundle.class_names()[j]}, {"components", std::move(comps)}});
    }
    return json{{"format_version", bundle_format_version},
                {"dimension", bundle.dimension()},
                {"projection", projection_to_json(bundle.projection())},
                {"noise_covariance", matrix_to_json(bundle.noise_covariance())},
                {"classes", std::move(classes)}};
}

GmmBundle bundle_from_json(const json& j) {
    try {
        if (j.at("format_version").get<int>() != bundle_format_version) {
            throw ValidationError("unsupported bundle format_version " +
                                  j.at("format_version").dump());
        }
        std::vector<std::string> names;
        std::vector<std::vector<GaussianComponent>> per_class;
        for (const auto& cls : j.at("classes")) {
            names.push_back(cls.at("name").get<std::string>());
            std::vector<GaussianComponent> comps;
            std::size_t k = 0;
            for (const auto& c : cls.at("components")) {
                const std::string what = "class '" + names.back() + "' component " + std::to_string(k++);
                comps.push_back({c.at("weight").get<double>(),
                                 vector_from_json(c.at("mean"), what + " mean"),
                                 matrix_from_json(c.at("covariance"), what + " covariance")});
            }
            per_class.push_back(std::move(comps));
        }
        GmmBundle bundle(std::move(names), std::move(per_class),
                         matrix_from_json(j.at("noise_covariance"), "noise covariance"),
                         projection_from_json(j.at("projection")));
        if (j.contains("dimension") && j.at("dimension").get<Index>() != bundle.dimension()) {
            throw ValidationError("bundle dimension does not match projection");
        }
        return bundle;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bundle: ") + e.what());
    }
}

void save_bundle(const GmmBundle& bundle, const fs::path& path) {
    write_file_atomic(path, dump_json(bundle_to_json(bundle)));
}

GmmBundle load_bundle(const fs::path& path) {
    try {
        return bundle_from_json(load_json(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

json load_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

std::string read_file(const fs::path& path) {
    auto in = open_input(path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
    std::random_device rd;
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw ValidationError("cannot write '" + tmp.string() + "'");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw ValidationError("failed writing '" + path.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw ValidationError("cannot rename into '" + path.string() + "'");
    }
}

}  // namespace unmix_gmm
