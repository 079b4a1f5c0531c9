#pragma once

// Synthetic source families standing in for speech, noise and music corpora.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include "mbt/error.hpp"
#include "mbt/rng.hpp"
#include "mbt/signal.hpp"

namespace mbt::dsp {

enum class Family : std::uint8_t { SpeechLikeA, SpeechLikeB, Noise, MusicLike };

inline constexpr double kSourcePeak = 0.5;

inline std::string_view family_name(Family f) {
	switch (f) {
	case Family::SpeechLikeA: return "speech_a";
	case Family::SpeechLikeB: return "speech_b";
	case Family::Noise: return "noise";
	case Family::MusicLike: return "music";
	}
	throw ConfigError("unknown source family " + std::to_string(static_cast<int>(f)));
}

inline Family parse_family(std::string_view s) {
	for (Family f : {Family::SpeechLikeA, Family::SpeechLikeB, Family::Noise, Family::MusicLike})
		if (family_name(f) == s)
			return f;
	throw ConfigError("unknown source family '" + std::string(s) + "' (expected speech_a, speech_b, noise, music)");
}

struct Range {
	double lo = 0.0;
	double hi = 0.0;
	bool overlaps(const Range& o) const noexcept { return lo < o.hi && o.lo < hi; }
};

/// Harmonic-stack parameters of the speech-like families. A and B use
/// disjoint fundamental and modulation-rate ranges.
struct SpeechFamilyParams {
	Range fundamental_hz;
	Range modulation_hz;
};

inline SpeechFamilyParams speech_family_params(Family f) {
	switch (f) {
	case Family::SpeechLikeA: return {{100.0, 180.0}, {2.0, 4.5}};
	case Family::SpeechLikeB: return {{200.0, 300.0}, {5.0, 8.0}};
	default: throw ConfigError("family " + std::string(family_name(f)) + " is not speech-like");
	}
}

/// What the generator drew for one source.
struct SourceInfo {
	Family family = Family::SpeechLikeA;
	double fundamental_hz = 0.0;  ///< speech: f0; music: chord root
	double modulation_hz = 0.0;   ///< speech: AM rate; music: vibrato rate
	double tilt = 0.0;            ///< noise: one-pole coefficient
};

namespace detail {

inline void normalize_peak(std::vector<double>& x, double target) {
	const double p = peak(x);
	if (p > 0.0)
		for (double& v : x)
			v *= target / p;
}

inline std::vector<double> speech_like(const SpeechFamilyParams& fp, std::size_t n, double rate, Rng& rng,
		SourceInfo& info) {
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	const double f0 = fp.fundamental_hz.lo + (fp.fundamental_hz.hi - fp.fundamental_hz.lo) * unit(rng);
	const double fm = fp.modulation_hz.lo + (fp.modulation_hz.hi - fp.modulation_hz.lo) * unit(rng);
	const double env_phase = 2.0 * std::numbers::pi * unit(rng);
	info.fundamental_hz = f0;
	info.modulation_hz = fm;

	const double top = std::min(3400.0, 0.45 * rate);
	const int harmonics = std::max(1, static_cast<int>(top / f0));
	std::vector<double> phases(static_cast<std::size_t>(harmonics));
	for (double& p : phases)
		p = 2.0 * std::numbers::pi * unit(rng);

	std::vector<double> x(n, 0.0);
	for (std::size_t i = 0; i < n; ++i) {
		const double t = static_cast<double>(i) / rate;
		double v = 0.0;
		for (int k = 1; k <= harmonics; ++k)
			v += std::sin(2.0 * std::numbers::pi * k * f0 * t + phases[static_cast<std::size_t>(k - 1)]) / k;
		const double env = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * fm * t + env_phase);
		x[i] = v * std::pow(env, 1.5);
	}
	return x;
}

inline std::vector<double> tilted_noise(std::size_t n, Rng& rng, SourceInfo& info) {
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	std::normal_distribution<double> gauss(0.0, 1.0);
	const double a = 0.3 + 0.6 * unit(rng);
	info.tilt = a;
	std::vector<double> x(n);
	double state = 0.0;
	for (std::size_t i = 0; i < n; ++i) {
		state = a * state + (1.0 - a) * gauss(rng);
		x[i] = state;
	}
	return x;
}

inline std::vector<double> music_like(std::size_t n, double rate, Rng& rng, SourceInfo& info) {
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	std::uniform_int_distribution<int> root_dist(45, 64);
	const int root = root_dist(rng);
	const bool minor = unit(rng) < 0.5;
	const std::array<int, 3> notes{root, root + (minor ? 3 : 4), root + 7};
	const double vib_rate = 0.5 + unit(rng);
	const double vib_depth = 0.004;
	info.fundamental_hz = 440.0 * std::pow(2.0, (root - 69) / 12.0);
	info.modulation_hz = vib_rate;

	std::vector<double> x(n, 0.0);
	const double attack = 0.05 * rate;
	for (int note : notes) {
		const double f = 440.0 * std::pow(2.0, (note - 69) / 12.0);
		const double vib_phase = 2.0 * std::numbers::pi * unit(rng);
		std::array<double, 5> phase{};
		for (double& p : phase)
			p = 2.0 * std::numbers::pi * unit(rng);
		for (std::size_t i = 0; i < n; ++i) {
			const double t = static_cast<double>(i) / rate;
			// Instantaneous phase of f * (1 + depth * sin(2 pi r t + phi)), integrated in closed form.
			const double base = 2.0 * std::numbers::pi * f * t -
				f * vib_depth / vib_rate * (std::cos(2.0 * std::numbers::pi * vib_rate * t + vib_phase) - std::cos(vib_phase));
			double v = 0.0;
			for (std::size_t k = 1; k <= phase.size(); ++k) {
				if (k * f >= 0.45 * rate)
					break;
				v += std::sin(static_cast<double>(k) * base + phase[k - 1]) / static_cast<double>(k * k);
			}
			const double env = std::min(1.0, static_cast<double>(i) / attack) *
				(1.0 - 0.3 * static_cast<double>(i) / static_cast<double>(n));
			x[i] += env * v;
		}
	}
	return x;
}

}  // namespace detail

/// Deterministic source of `duration_s` seconds, peak-normalized to 0.5.
inline Signal synth_source(Family family, double duration_s, std::uint32_t sample_rate, std::uint64_t seed,
		SourceInfo* info_out = nullptr) {
	if (!(duration_s > 0.0))
		throw ConfigError("synth_source: duration must be positive");
	if (sample_rate == 0)
		throw ConfigError("synth_source: sample rate must be positive");
	const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
	if (n == 0)
		throw ConfigError("synth_source: duration shorter than one sample");
	Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(family)}));
	SourceInfo info;
	info.family = family;
	Signal sig;
	sig.sample_rate = sample_rate;
	const double rate = static_cast<double>(sample_rate);
	switch (family) {
	case Family::SpeechLikeA:
	case Family::SpeechLikeB:
		sig.samples = detail::speech_like(speech_family_params(family), n, rate, rng, info);
		break;
	case Family::Noise: sig.samples = detail::tilted_noise(n, rng, info); break;
	case Family::MusicLike: sig.samples = detail::music_like(n, rate, rng, info); break;
	default: throw ConfigError("synth_source: unknown family " + std::to_string(static_cast<int>(family)));
	}
	detail::normalize_peak(sig.samples, kSourcePeak);
	if (info_out)
		*info_out = info;
	return sig;
}

}  // namespace mbt::dsp
