#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mbt {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
	z += 0x9e3779b97f4a7c15ULL;
	z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
	z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
	return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a key path.
/// Streams keyed by different paths do not interact, so consuming more
/// numbers from one never shifts another.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) noexcept {
	std::uint64_t h = mix64(base);
	for (std::uint64_t k : keys)
		h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
	return h;
}

/// Stable 64-bit tag for naming RNG streams ("init", "shuffle", ...).
constexpr std::uint64_t stream_tag(const char* s) noexcept {
	std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
	for (; *s; ++s)
		h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ULL;
	return h;
}

}  // namespace mbt
