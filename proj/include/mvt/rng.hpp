// Seeded random streams.
//
// Every random quantity in the toolkit is drawn from a std::mt19937_64 engine.
// Independent streams (worker preferences, per-item rendering, shuffling, ...)
// are separated by mixing the user seed with a stream tag through one round of
// SplitMix64, so that changing one consumer never shifts another's draws.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mvt {

using Engine = std::mt19937_64;

/// One SplitMix64 finalization step.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
	x += 0x9E3779B97F4A7C15ULL;
	x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
	x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
	return x ^ (x >> 31);
}

/// Seed for the sub-stream `tag` of the user seed `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
	return splitmix64(seed ^ splitmix64(tag));
}

/// Stream tags. Values are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t network_init = 1;
inline constexpr std::uint64_t worker_prefs = 2;
inline constexpr std::uint64_t render = 3;
inline constexpr std::uint64_t triplets = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t kmeans = 6;
inline constexpr std::uint64_t anchors = 7;
inline constexpr std::uint64_t tasks = 8;
} // namespace stream

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Engine& engine) {
	return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform(Engine& engine, double lo, double hi) {
	return lo + (hi - lo) * uniform01(engine);
}

/// Uniform integer in [0, n). Rejection sampling, exactly uniform.
inline std::uint64_t uniform_index(Engine& engine, std::uint64_t n) {
	const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
	std::uint64_t x;
	do {
		x = engine();
	} while (x >= limit);
	return x % n;
}

/// Standard normal via Box-Muller (two uniform draws per call).
inline double standard_normal(Engine& engine) {
	double u1 = uniform01(engine);
	while (u1 <= 0.0)
		u1 = uniform01(engine);
	const double u2 = uniform01(engine);
	return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Fisher-Yates shuffle driven by uniform_index.
template <typename Container>
void shuffle(Container& c, Engine& engine) {
	for (std::size_t i = c.size(); i > 1; --i) {
		const std::size_t j = uniform_index(engine, i);
		using std::swap;
		swap(c[i - 1], c[j]);
	}
}

} // namespace mvt
