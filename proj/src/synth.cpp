#include "unmix_gmm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "unmix_gmm/parallel.hpp"

namespace unmix_gmm {

namespace {

// Stream families; each pixel gets its own stream within a family.
enum class Stream : std::uint64_t { sets = 1, picks = 2, noise = 3, dirichlet = 4, library = 5 };

std::uint64_t family_seed(std::uint64_t seed, Stream s) {
    return seed ^ (static_cast<std::uint64_t>(s) * 0x9E3779B97F4A7C15ull);
}

}  // namespace

void SynthSpec::validate(std::size_t class_count) const {
    if (counts.size() != class_count) {
        throw ValidationError("synth spec lists " + std::to_string(counts.size()) +
                              " counts for " + std::to_string(class_count) + " classes");
    }
    for (auto c : counts) {
        if (c < 1) throw ValidationError("synth counts must be at least 1");
    }
    if (max_active < 1) throw ValidationError("max_active must be at least 1");
    if (!(noise_sd >= 0.0)) throw ValidationError("noise_sd must be non-negative");
    if (const auto* d = std::get_if<DirichletAbundances>(&abundance)) {
        if (!(d->concentration > 0.0)) throw ValidationError("Dirichlet concentration must be positive");
        if (shape.rows < 1 || shape.cols < 1) throw ValidationError("image shape must be positive");
    }
}

SpectralLibrary sample_endmember_sets(const SpectralLibrary& library, const SynthSpec& spec) {
    if (spec.counts.size() != library.class_count()) {
        throw ValidationError("synth spec lists " + std::to_string(spec.counts.size()) +
                              " counts for " + std::to_string(library.class_count()) + " classes");
    }
    std::vector<EndmemberClass> sets;
    for (std::size_t j = 0; j < library.class_count(); ++j) {
        const auto& c = library[j];
        const auto available = static_cast<std::size_t>(c.spectra.rows());
        if (spec.counts[j] > available) {
            throw ValidationError("cannot sample " + std::to_string(spec.counts[j]) +
                                  " spectra from class '" + c.name + "' with " +
                                  std::to_string(available));
        }
        auto rng = make_rng(family_seed(spec.seed, Stream::sets), j);
        const auto rows = sample_without_replacement(available, spec.counts[j], rng);
        Matrix picked(static_cast<Index>(rows.size()), library.band_count());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            picked.row(static_cast<Index>(i)) = c.spectra.row(static_cast<Index>(rows[i]));
        }
        sets.push_back({c.name, std::move(picked)});
    }
    return SpectralLibrary(std::move(sets));
}

Vector nnls(const Matrix& A, const Vector& b) {
    const Index n = A.cols();
    Vector x = Vector::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() * A.cwiseAbs().colwise().sum().maxCoeff() *
                       static_cast<double>(std::max(A.rows(), n));

    auto solve_passive = [&](Vector& z) {
        std::vector<Index> idx;
        for (Index i = 0; i < n; ++i) {
            if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
        }
        z.setZero(n);
        const Matrix Ap = A(Eigen::all, idx);
        const Vector zp = Ap.colPivHouseholderQr().solve(b);
        for (std::size_t i = 0; i < idx.size(); ++i) z(idx[i]) = zp(static_cast<Index>(i));
    };

    Vector w = A.transpose() * (b - A * x);
    Vector z(n);
    for (Index outer = 0; outer < 3 * n + 10; ++outer) {
        Index best = -1;
        double best_w = tol;
        for (Index i = 0; i < n; ++i) {
            if (!passive[static_cast<std::size_t>(i)] && w(i) > best_w) {
                best_w = w(i);
                best = i;
            }
        }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = true;

        for (Index inner = 0; inner < 3 * n + 10; ++inner) {
            solve_passive(z);
            double step = 1.0;
            bool feasible = true;
            for (Index i = 0; i < n; ++i) {
                if (passive[static_cast<std::size_t>(i)] && z(i) <= 0.0) {
                    feasible = false;
                    const double denom = x(i) - z(i);
                    if (denom > 0.0) step = std::min(step, x(i) / denom);
                }
            }
            if (feasible) {
                x = z;
                break;
            }
            x += step * (z - x);
            for (Index i = 0; i < n; ++i) {
                if (passive[static_cast<std::size_t>(i)] && x(i) <= tol) {
                    passive[static_cast<std::size_t>(i)] = false;
                    x(i) = 0.0;
                }
            }
        }
        w = A.transpose() * (b - A * x);
    }
    return x;
}

Vector fcls(const Matrix& endmembers, const Vector& y) {
    if (endmembers.rows() != y.size()) {
        throw ValidationError("FCLS endmember band count does not match the pixel");
    }
    // Sum-to-one enforced as a heavily weighted extra equation.
    const double weight = 1e4 * (1.0 + endmembers.cwiseAbs().maxCoeff());
    Matrix A(endmembers.rows() + 1, endmembers.cols());
    A.topRows(endmembers.rows()) = endmembers;
    A.bottomRows(1).setConstant(weight);
    Vector b(y.size() + 1);
    b.head(y.size()) = y;
    b(y.size()) = weight;
    Vector x = nnls(A, b);
    const double total = x.sum();
    if (!(total > 0.0)) {
        throw NumericError("FCLS produced an all-zero solution");
    }
    return x / total;
}

Vector keep_largest(const Vector& totals, std::size_t max_active) {
    const Index M = totals.size();
    std::vector<Index> order(static_cast<std::size_t>(M));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return totals(a) > totals(b); });
    Vector out = Vector::Zero(M);
    const auto keep = std::min<std::size_t>(max_active, static_cast<std::size_t>(M));
    for (std::size_t i = 0; i < keep; ++i) out(order[i]) = std::max(0.0, totals(order[i]));
    const double total = out.sum();
    if (!(total > 0.0)) {
        out.setZero();
        out(order.front()) = 1.0;
        return out;
    }
    return out / total;
}

AbundanceMatrix sparse_abundances_from_template(const PixelBlock& templ, const SpectralLibrary& sets,
                                                std::size_t max_active) {
    if (templ.band_count() != sets.band_count()) {
        throw ValidationError("template has " + std::to_string(templ.band_count()) +
                              " bands, endmember sets have " + std::to_string(sets.band_count()));
    }
    const Matrix endmembers = sets.stacked().transpose();  // B x P
    std::vector<Index> class_of;
    for (std::size_t j = 0; j < sets.class_count(); ++j) {
        class_of.insert(class_of.end(), static_cast<std::size_t>(sets[j].spectra.rows()),
                        static_cast<Index>(j));
    }
    const auto M = static_cast<Index>(sets.class_count());
    Matrix A(templ.pixel_count(), M);
    parallel_for(static_cast<std::size_t>(templ.pixel_count()), [&](std::size_t begin, std::size_t end) {
        Vector totals(M);
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            const Vector coef = fcls(endmembers, templ.pixels().row(n).transpose());
            totals.setZero();
            for (Index p = 0; p < coef.size(); ++p) totals(class_of[static_cast<std::size_t>(p)]) += coef(p);
            A.row(n) = keep_largest(totals, max_active).transpose();
        }
    });
    return AbundanceMatrix(std::move(A));
}

AbundanceMatrix dirichlet_abundances(Index pixels, Index classes, double concentration,
                                     std::size_t max_active, std::uint64_t seed) {
    if (!(concentration > 0.0)) throw ValidationError("Dirichlet concentration must be positive");
    Matrix A(pixels, classes);
    const auto base = family_seed(seed, Stream::dirichlet);
    parallel_for(static_cast<std::size_t>(pixels), [&](std::size_t begin, std::size_t end) {
        Vector draw(classes);
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            auto rng = make_rng(base, static_cast<std::uint64_t>(n));
            std::gamma_distribution<double> gamma(concentration, 1.0);
            for (Index j = 0; j < classes; ++j) draw(j) = gamma(rng);
            if (!(draw.sum() > 0.0)) {
                // Every draw underflowed; fall back to a uniformly chosen vertex.
                std::uniform_int_distribution<Index> pick(0, classes - 1);
                draw.setZero();
                draw(pick(rng)) = 1.0;
            }
            A.row(n) = keep_largest(draw / draw.sum(), max_active).transpose();
        }
    });
    return AbundanceMatrix(std::move(A));
}

EndmemberPicks draw_picks(Index pixels, const SpectralLibrary& sets, std::uint64_t seed) {
    const auto M = static_cast<Index>(sets.class_count());
    EndmemberPicks picks(pixels, M);
    const auto base = family_seed(seed, Stream::picks);
    for (Index n = 0; n < pixels; ++n) {
        auto rng = make_rng(base, static_cast<std::uint64_t>(n));
        for (Index j = 0; j < M; ++j) {
            std::uniform_int_distribution<Index> pick(0, sets[static_cast<std::size_t>(j)].spectra.rows() - 1);
            picks(n, j) = pick(rng);
        }
    }
    return picks;
}

PixelBlock mix_pixels(const AbundanceMatrix& abundances, const EndmemberPicks& picks,
                      const SpectralLibrary& sets, double noise_sd, std::uint64_t seed,
                      std::optional<ImageShape> shape) {
    const Index N = abundances.rows();
    const auto M = static_cast<Index>(sets.class_count());
    if (abundances.cols() != M || picks.rows() != N || picks.cols() != M) {
        throw ValidationError("abundances, picks and endmember sets disagree in size");
    }
    if (!(noise_sd >= 0.0)) throw ValidationError("noise_sd must be non-negative");
    Matrix Y = Matrix::Zero(N, sets.band_count());
    const auto base = family_seed(seed, Stream::noise);
    for (Index n = 0; n < N; ++n) {
        for (Index j = 0; j < M; ++j) {
            const auto& spectra = sets[static_cast<std::size_t>(j)].spectra;
            const Index p = picks(n, j);
            if (p < 0 || p >= spectra.rows()) {
                throw ValidationError("endmember pick out of range at pixel " + std::to_string(n));
            }
            const double a = abundances.values()(n, j);
            if (a != 0.0) Y.row(n) += a * spectra.row(p);
        }
        if (noise_sd > 0.0) {
            auto rng = make_rng(base, static_cast<std::uint64_t>(n));
            std::normal_distribution<double> noise(0.0, noise_sd);
            for (Index b = 0; b < Y.cols(); ++b) Y(n, b) += noise(rng);
        }
    }
    return PixelBlock(std::move(Y), shape);
}

SyntheticImage generate(const SynthSpec& spec, const SpectralLibrary& library, const PixelBlock* templ) {
    spec.validate(library.class_count());
    SpectralLibrary sets = sample_endmember_sets(library, spec);
    std::optional<AbundanceMatrix> truth;
    std::optional<ImageShape> shape;
    if (std::holds_alternative<TemplateAbundances>(spec.abundance)) {
        if (templ == nullptr) {
            throw ValidationError("template abundance mode needs a template image");
        }
        truth.emplace(sparse_abundances_from_template(*templ, sets, spec.max_active));
        shape = templ->shape();
    } else {
        const auto& d = std::get<DirichletAbundances>(spec.abundance);
        truth.emplace(dirichlet_abundances(spec.shape.rows * spec.shape.cols,
                                           static_cast<Index>(library.class_count()), d.concentration,
                                           spec.max_active, spec.seed));
        shape = spec.shape;
    }
    EndmemberPicks picks = draw_picks(truth->rows(), sets, spec.seed);
    PixelBlock pixels = mix_pixels(*truth, picks, sets, spec.noise_sd, spec.seed, shape);
    return {std::move(pixels), std::move(*truth), std::move(picks), std::move(sets)};
}

namespace {

// Sum of a few random Gaussian bumps over normalized wavelength t in [0, 1].
Vector smooth_curve(const Vector& t, double amplitude, Rng& rng) {
    std::normal_distribution<double> amp(0.0, amplitude);
    std::uniform_real_distribution<double> centre(0.0, 1.0);
    std::uniform_real_distribution<double> width(0.08, 0.2);
    Vector out = Vector::Zero(t.size());
    for (int i = 0; i < 4; ++i) {
        const double a = amp(rng);
        const double c = centre(rng);
        const double w = width(rng);
        out.array() += a * (-(t.array() - c).square() / (2.0 * w * w)).exp();
    }
    return out;
}

}  // namespace

SpectralLibrary make_synthetic_library(const SyntheticLibrarySpec& spec) {
    if (spec.class_names.empty() || spec.bands < 2 || spec.spectra_per_class < 1 ||
        spec.modes_per_class < 1) {
        throw ValidationError("synthetic library needs classes, >= 2 bands, spectra and modes");
    }
    const Vector t = Vector::LinSpaced(spec.bands, 0.0, 1.0);
    std::vector<EndmemberClass> classes;
    for (std::size_t j = 0; j < spec.class_names.size(); ++j) {
        auto rng = make_rng(family_seed(spec.seed, Stream::library), j);
        std::uniform_real_distribution<double> level(0.1, 0.4);
        std::uniform_real_distribution<double> slope(-0.2, 0.3);
        const Vector base = (level(rng) + slope(rng) * t.array()).matrix() + smooth_curve(t, 0.12, rng);
        std::vector<Vector> modes;
        for (int m = 0; m < spec.modes_per_class; ++m) {
            modes.push_back(base + smooth_curve(t, spec.mode_separation, rng));
        }
        Matrix spectra(static_cast<Index>(spec.spectra_per_class), spec.bands);
        std::uniform_int_distribution<int> which(0, spec.modes_per_class - 1);
        std::normal_distribution<double> bright(1.0, spec.brightness_sd);
        std::normal_distribution<double> white(0.0, 0.1 * spec.within_mode_sd);
        for (Index i = 0; i < spectra.rows(); ++i) {
            const Vector& mode = modes[static_cast<std::size_t>(which(rng))];
            Vector s = bright(rng) * mode + smooth_curve(t, spec.within_mode_sd, rng);
            for (Index b = 0; b < s.size(); ++b) s(b) += white(rng);
            spectra.row(i) = s.cwiseMax(0.001).transpose();
        }
        classes.push_back({spec.class_names[j], std::move(spectra)});
    }
    return SpectralLibrary(std::move(classes));
}

}  // namespace unmix_gmm
