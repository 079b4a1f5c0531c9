#pragma once

// SNR-controlled corpus construction and loading.
//
// A corpus directory holds one WAV per signal plus manifest.csv. Example k
// draws all of its randomness from (spec.seed, k), so a corpus is a pure
// function of its CorpusSpec and any subset of examples can be regenerated
// independently.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mbt/error.hpp"
#include "mbt/rng.hpp"
#include "mbt/signal.hpp"
#include "mbt/synth.hpp"
#include "mbt/wav.hpp"

namespace mbt::dsp {

struct CorpusSpec {
	Family foreground_family = Family::SpeechLikeA;
	Family background_family = Family::SpeechLikeA;
	std::size_t count = 1;
	double duration_s = 1.0;
	std::uint32_t sample_rate = 8000;
	double snr_lo_db = 0.0;
	double snr_hi_db = 5.0;
	std::uint64_t seed = 0;
	bool labeled = true;

	void validate() const {
		if (count < 1)
			throw ConfigError("corpus count must be >= 1");
		if (!(snr_lo_db <= snr_hi_db))
			throw ConfigError("corpus snr range is empty: lo > hi");
		if (!(duration_s > 0.0))
			throw ConfigError("corpus duration must be positive");
		if (sample_rate == 0)
			throw ConfigError("corpus sample rate must be positive");
	}
};

struct ManifestRow {
	std::string id;
	std::string kind;  ///< "labeled" or "unlabeled"
	double snr_db = 0.0;
	std::uint64_t seed_fg = 0;
	std::uint64_t seed_bg = 0;
	std::string path_mix;
	std::string path_s;
	std::string path_e;
};

inline constexpr const char* kManifestHeader = "id,kind,snr_db,seed_fg,seed_bg,path_mix,path_s,path_e";
inline constexpr const char* kManifestFile = "manifest.csv";

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
	char buf[64];
	auto res = std::to_chars(buf, buf + sizeof(buf), v);
	return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& context) {
	double v = 0.0;
	auto res = std::from_chars(s.data(), s.data() + s.size(), v);
	if (res.ec != std::errc() || res.ptr != s.data() + s.size())
		throw FormatError("bad number '" + s + "' in " + context);
	return v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& context) {
	std::uint64_t v = 0;
	auto res = std::from_chars(s.data(), s.data() + s.size(), v);
	if (res.ec != std::errc() || res.ptr != s.data() + s.size())
		throw FormatError("bad integer '" + s + "' in " + context);
	return v;
}

struct GeneratedExample {
	LabeledExample example;
	std::uint64_t seed_fg = 0;
	std::uint64_t seed_bg = 0;
};

inline std::string example_id(std::size_t k) {
	std::string digits = std::to_string(k);
	return "ex" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

/// Synthesizes example k of the corpus in memory. Mixture peaks above 0.99
/// are avoided by scaling all three signals jointly, which preserves both
/// the SNR and exact additivity.
inline GeneratedExample generate_example(const CorpusSpec& spec, std::size_t k) {
	spec.validate();
	GeneratedExample g;
	g.seed_fg = derive_seed(spec.seed, {k, stream_tag("fg")});
	g.seed_bg = derive_seed(spec.seed, {k, stream_tag("bg")});
	Rng snr_rng(derive_seed(spec.seed, {k, stream_tag("snr")}));
	const double snr = std::uniform_real_distribution<double>(spec.snr_lo_db, spec.snr_hi_db)(snr_rng);

	Signal s = synth_source(spec.foreground_family, spec.duration_s, spec.sample_rate, g.seed_fg);
	Signal e = synth_source(spec.background_family, spec.duration_s, spec.sample_rate, g.seed_bg);
	MixResult m = mix_at_snr(s, e, snr);
	const double p = peak(m.mixture.samples);
	if (p > 0.99) {
		const double c = 0.99 / p;
		for (std::size_t i = 0; i < s.size(); ++i) {
			s.samples[i] *= c;
			m.scaled_e.samples[i] *= c;
			m.mixture.samples[i] = s.samples[i] + m.scaled_e.samples[i];
		}
	}
	g.example.id = example_id(k);
	g.example.snr_db = snr;
	g.example.mixture = std::move(m.mixture);
	g.example.source_s = std::move(s);
	g.example.source_e = std::move(m.scaled_e);
	return g;
}

inline void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows) {
	std::ofstream out(file, std::ios::trunc);
	if (!out)
		throw IoError("cannot open for writing: " + file.string());
	out << kManifestHeader << '\n';
	for (const auto& r : rows)
		out << r.id << ',' << r.kind << ',' << format_double(r.snr_db) << ',' << r.seed_fg << ',' << r.seed_bg << ','
			<< r.path_mix << ',' << r.path_s << ',' << r.path_e << '\n';
	if (!out)
		throw IoError("write failed: " + file.string());
}

/// Writes the corpus to `out_dir` and returns its manifest rows.
inline std::vector<ManifestRow> build_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir,
		std::size_t* clamped_samples = nullptr) {
	spec.validate();
	std::error_code ec;
	std::filesystem::create_directories(out_dir, ec);
	if (ec)
		throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

	std::vector<ManifestRow> rows;
	rows.reserve(spec.count);
	std::size_t clamped = 0;
	for (std::size_t k = 0; k < spec.count; ++k) {
		GeneratedExample g = generate_example(spec, k);
		ManifestRow row;
		row.id = g.example.id;
		row.kind = spec.labeled ? "labeled" : "unlabeled";
		row.snr_db = g.example.snr_db;
		row.seed_fg = g.seed_fg;
		row.seed_bg = g.seed_bg;
		row.path_mix = row.id + "_mix.wav";
		clamped += wav_write(g.example.mixture, out_dir / row.path_mix);
		if (spec.labeled) {
			row.path_s = row.id + "_s.wav";
			row.path_e = row.id + "_e.wav";
			clamped += wav_write(g.example.source_s, out_dir / row.path_s);
			clamped += wav_write(g.example.source_e, out_dir / row.path_e);
		}
		rows.push_back(std::move(row));
	}
	write_manifest(out_dir / kManifestFile, rows);
	if (clamped_samples)
		*clamped_samples = clamped;
	return rows;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
	std::vector<std::string> cells;
	std::string cell;
	std::istringstream is(line);
	while (std::getline(is, cell, ','))
		cells.push_back(cell);
	if (!line.empty() && line.back() == ',')
		cells.emplace_back();
	return cells;
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir) {
	const auto file = dir / kManifestFile;
	std::ifstream in(file);
	if (!in)
		throw IoError("cannot open manifest: " + file.string());
	std::string line;
	if (!std::getline(in, line) || line != kManifestHeader)
		throw FormatError("unexpected manifest header in " + file.string());
	std::vector<ManifestRow> rows;
	std::size_t lineno = 1;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty())
			continue;
		const std::string ctx = file.string() + ":" + std::to_string(lineno);
		auto c = split_csv_line(line);
		if (c.size() != 8)
			throw FormatError("expected 8 manifest columns at " + ctx);
		ManifestRow r;
		r.id = c[0];
		r.kind = c[1];
		if (r.kind != "labeled" && r.kind != "unlabeled")
			throw FormatError("unknown example kind '" + r.kind + "' at " + ctx);
		r.snr_db = parse_double(c[2], ctx);
		r.seed_fg = parse_u64(c[3], ctx);
		r.seed_bg = parse_u64(c[4], ctx);
		r.path_mix = c[5];
		r.path_s = c[6];
		r.path_e = c[7];
		if (r.kind == "labeled" && (r.path_s.empty() || r.path_e.empty()))
			throw FormatError("labeled row without source paths at " + ctx);
		rows.push_back(std::move(r));
	}
	return rows;
}

/// A loaded corpus. Labeled corpora fill both vectors (their mixtures double
/// as unlabeled data); unlabeled corpora fill only `unlabeled`.
struct Corpus {
	std::string name;
	bool labeled = false;
	std::vector<LabeledExample> examples;
	std::vector<UnlabeledExample> unlabeled;
};

inline Corpus load_corpus(const std::filesystem::path& dir) {
	Corpus c;
	c.name = dir.filename().string();
	if (c.name.empty())
		c.name = dir.parent_path().filename().string();
	const auto rows = read_manifest(dir);
	if (rows.empty())
		throw FormatError("empty corpus: " + dir.string());
	c.labeled = rows.front().kind == "labeled";
	for (const auto& r : rows) {
		if ((r.kind == "labeled") != c.labeled)
			throw FormatError("corpus mixes labeled and unlabeled rows: " + dir.string());
		Signal mix = wav_read(dir / r.path_mix);
		validate(mix, r.path_mix.c_str());
		if (c.labeled) {
			LabeledExample ex;
			ex.id = r.id;
			ex.snr_db = r.snr_db;
			ex.mixture = mix;
			ex.source_s = wav_read(dir / r.path_s);
			ex.source_e = wav_read(dir / r.path_e);
			if (ex.source_s.size() != mix.size() || ex.source_e.size() != mix.size())
				throw FormatError("source length differs from mixture for " + r.id + " in " + dir.string());
			c.examples.push_back(std::move(ex));
		}
		c.unlabeled.push_back(UnlabeledExample{r.id, std::move(mix)});
	}
	return c;
}

}  // namespace mbt::dsp
