#pragma once

// 16-bit PCM mono RIFF/WAVE reader and writer.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mbt/error.hpp"
#include "mbt/signal.hpp"

namespace mbt::dsp {

namespace detail {

inline void put_u16(std::vector<char>& b, std::uint16_t v) {
	b.push_back(static_cast<char>(v & 0xff));
	b.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::vector<char>& b, std::uint32_t v) {
	for (int i = 0; i < 4; ++i)
		b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

inline std::uint32_t get_u32(const unsigned char* p) {
	return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
		(static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Quantizes one sample to 16-bit PCM. Out-of-range input saturates.
inline std::int16_t to_pcm16(double v) noexcept {
	const double scaled = std::nearbyint(v * 32768.0);
	if (scaled > 32767.0)
		return 32767;
	if (scaled < -32768.0)
		return -32768;
	return static_cast<std::int16_t>(scaled);
}

inline double from_pcm16(std::int16_t v) noexcept { return static_cast<double>(v) / 32768.0; }

/// Writes `sig` and returns the number of samples that had to be clamped
/// into [-1, 1].
inline std::size_t wav_write(const Signal& sig, const std::filesystem::path& path) {
	std::size_t clamped = 0;
	std::vector<char> bytes;
	const auto data_bytes = static_cast<std::uint32_t>(sig.size() * 2);
	bytes.reserve(44 + data_bytes);
	bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
	detail::put_u32(bytes, 36 + data_bytes);
	bytes.insert(bytes.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
	detail::put_u32(bytes, 16);
	detail::put_u16(bytes, 1);  // PCM
	detail::put_u16(bytes, 1);  // mono
	detail::put_u32(bytes, sig.sample_rate);
	detail::put_u32(bytes, sig.sample_rate * 2);
	detail::put_u16(bytes, 2);
	detail::put_u16(bytes, 16);
	bytes.insert(bytes.end(), {'d', 'a', 't', 'a'});
	detail::put_u32(bytes, data_bytes);
	for (double v : sig.samples) {
		if (v > 1.0 || v < -1.0)
			++clamped;
		detail::put_u16(bytes, static_cast<std::uint16_t>(to_pcm16(v)));
	}
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw IoError("cannot open for writing: " + path.string());
	out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!out)
		throw IoError("write failed: " + path.string());
	return clamped;
}

inline Signal wav_read(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw IoError("cannot open for reading: " + path.string());
	std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
	const std::string where = " in " + path.string();
	if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
		throw FormatError("not a RIFF/WAVE file" + where);

	bool have_fmt = false;
	std::uint32_t rate = 0;
	std::size_t pos = 12;
	while (pos + 8 <= b.size()) {
		const unsigned char* chunk = b.data() + pos;
		const std::uint32_t len = detail::get_u32(chunk + 4);
		const std::size_t body = pos + 8;
		if (body + len > b.size())
			throw FormatError("truncated chunk" + where);
		if (std::memcmp(chunk, "fmt ", 4) == 0) {
			if (len < 16)
				throw FormatError("fmt chunk too short" + where);
			const std::uint16_t tag = detail::get_u16(b.data() + body);
			const std::uint16_t channels = detail::get_u16(b.data() + body + 2);
			rate = detail::get_u32(b.data() + body + 4);
			const std::uint16_t bits = detail::get_u16(b.data() + body + 14);
			if (tag != 1)
				throw FormatError("unsupported format tag " + std::to_string(tag) + " (need PCM = 1)" + where);
			if (channels != 1)
				throw FormatError("unsupported channel count " + std::to_string(channels) + " (need mono)" + where);
			if (bits != 16)
				throw FormatError("unsupported bit depth " + std::to_string(bits) + " (need 16)" + where);
			if (rate == 0)
				throw FormatError("zero sample rate" + where);
			have_fmt = true;
		} else if (std::memcmp(chunk, "data", 4) == 0) {
			if (!have_fmt)
				throw FormatError("data chunk before fmt chunk" + where);
			if (len % 2 != 0)
				throw FormatError("odd data length for 16-bit samples" + where);
			Signal sig;
			sig.sample_rate = rate;
			sig.samples.resize(len / 2);
			for (std::size_t i = 0; i < sig.samples.size(); ++i)
				sig.samples[i] = from_pcm16(static_cast<std::int16_t>(detail::get_u16(b.data() + body + 2 * i)));
			return sig;
		}
		pos = body + len + (len & 1);
	}
	throw FormatError("missing data chunk" + where);
}

}  // namespace mbt::dsp
