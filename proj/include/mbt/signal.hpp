#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbt/error.hpp"

namespace mbt::dsp {

/// Mono audio: samples in nominal range [-1, 1] plus a sample rate.
struct Signal {
	std::vector<double> samples;
	std::uint32_t sample_rate = 8000;

	std::size_t size() const noexcept { return samples.size(); }
	bool empty() const noexcept { return samples.empty(); }
	std::span<const double> view() const noexcept { return samples; }

	friend bool operator==(const Signal&, const Signal&) = default;
};

/// Mixture with its ground-truth source pair. `source_e` is stored after
/// SNR scaling, so mixture[i] == source_s[i] + source_e[i].
struct LabeledExample {
	std::string id;
	Signal mixture;
	Signal source_s;
	Signal source_e;
	double snr_db = 0.0;
};

struct UnlabeledExample {
	std::string id;
	Signal mixture;
};

inline double energy(std::span<const double> x) noexcept {
	double e = 0.0;
	for (double v : x)
		e += v * v;
	return e;
}

inline double peak(std::span<const double> x) noexcept {
	double p = 0.0;
	for (double v : x)
		p = std::max(p, std::abs(v));
	return p;
}

inline bool all_finite(std::span<const double> x) noexcept {
	for (double v : x)
		if (!std::isfinite(v))
			return false;
	return true;
}

inline void validate(const Signal& s, const char* what) {
	if (s.empty())
		throw ShapeError(std::string(what) + ": empty signal");
	if (!all_finite(s.samples))
		throw DegenerateSourceError(std::string(what) + ": non-finite sample");
}

struct MixResult {
	Signal mixture;
	Signal scaled_e;
	double gain = 1.0;
};

/// Scales `e` so that 10 log10(|s|^2 / |g e|^2) == snr_db and adds it to `s`.
inline MixResult mix_at_snr(const Signal& s, const Signal& e, double snr_db) {
	if (s.size() != e.size())
		throw ShapeError("mix_at_snr: length mismatch " + std::to_string(s.size()) + " vs " +
				std::to_string(e.size()));
	if (s.sample_rate != e.sample_rate)
		throw ShapeError("mix_at_snr: sample rate mismatch");
	const double es = energy(s.samples);
	const double ee = energy(e.samples);
	if (!(ee > 0.0))
		throw DegenerateSourceError("mix_at_snr: interference has zero energy");
	const double gain = std::sqrt(es / (ee * std::pow(10.0, snr_db / 10.0)));
	MixResult r;
	r.gain = gain;
	r.scaled_e.sample_rate = r.mixture.sample_rate = s.sample_rate;
	r.scaled_e.samples.resize(e.size());
	r.mixture.samples.resize(e.size());
	for (std::size_t i = 0; i < e.size(); ++i) {
		r.scaled_e.samples[i] = gain * e.samples[i];
		r.mixture.samples[i] = s.samples[i] + r.scaled_e.samples[i];
	}
	return r;
}

/// 10 log10(|s|^2 / |e|^2).
inline double snr_db(std::span<const double> s, std::span<const double> e) {
	return 10.0 * std::log10(energy(s) / energy(e));
}

}  // namespace mbt::dsp
