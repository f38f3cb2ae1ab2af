"""Supervised hyperspectral unmixing with per-class Gaussian mixture endmembers."""

from ._core import (
    GaussianComponent,
    GmmBundle,
    NumericError,
    ProjectionModel,
    SpectralLibrary,
    ValidationError,
    __version__,
    evaluate_totals,
    fit_bundle,
    fit_library_projection,
    fit_pca,
    generate,
    project_simplex,
    select_components,
    set_thread_count,
    synthetic_library,
    thread_count,
    unmix,
)

__all__ = [
    "GaussianComponent",
    "GmmBundle",
    "NumericError",
    "ProjectionModel",
    "SpectralLibrary",
    "ValidationError",
    "__version__",
    "evaluate_totals",
    "fit_bundle",
    "fit_library_projection",
    "fit_pca",
    "generate",
    "project_simplex",
    "select_components",
    "set_thread_count",
    "synthetic_library",
    "thread_count",
    "unmix",
]
