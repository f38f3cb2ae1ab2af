// Deterministic data parallelism and seeded random streams.

#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <vector>

namespace unmix_gmm {

/// Worker count used by parallel_for. 0 restores the default
/// (std::thread::hardware_concurrency()).
void set_thread_count(int threads);
int thread_count();

/// Calls `body(begin, end)` on contiguous chunks covering [0, n). Work is
/// split by index only, so any per-index computation gives identical results
/// regardless of the worker count. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); streams give per-item
/// reproducibility that does not depend on processing order.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// k distinct indices from [0, n), returned in ascending order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

}  // namespace unmix_gmm
