#pragma once

// Binary checkpoint container.
//
//   "MBTCKPT1"
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f64 data
//   UTF-8 key=value trailer lines until end of file
//
// All integers and doubles are little-endian. Student tensors are stored
// under "student/<name>", teacher tensors under "teacher/<name>".

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mbt/corpus.hpp"
#include "mbt/error.hpp"
#include "mbt/separator.hpp"
#include "mbt/tensor.hpp"

namespace mbt::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'B', 'T', 'C', 'K', 'P', 'T', '1'};

struct HistoryRow {
	int epoch = 0;
	double dev_mean = 0.0;
	double dev_std = 0.0;
	double train_loss = 0.0;

	friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct Checkpoint {
	sep::SeparatorConfig separator;
	sep::SeparatorParams student;
	sep::SeparatorParams teacher;
	int epoch = 0;
	std::uint64_t seed = 0;
	std::string strategy;
	/// Free-form echo of the training configuration.
	std::map<std::string, std::string> config;
	std::vector<HistoryRow> history;

	friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
		return a.separator == b.separator && a.student == b.student && a.teacher == b.teacher &&
			a.epoch == b.epoch && a.seed == b.seed && a.strategy == b.strategy && a.config == b.config &&
			a.history == b.history;
	}
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
	char buf[sizeof(T)];
	std::memcpy(buf, &v, sizeof(T));
	out.append(buf, sizeof(T));
}

class Reader {
public:
	Reader(const std::string& bytes, std::string path) : b_(bytes), path_(std::move(path)) {}

	template <class T>
	T get(const char* what) {
		need(sizeof(T), what);
		T v;
		std::memcpy(&v, b_.data() + pos_, sizeof(T));
		pos_ += sizeof(T);
		return v;
	}

	std::string str(std::size_t n, const char* what) {
		need(n, what);
		std::string s = b_.substr(pos_, n);
		pos_ += n;
		return s;
	}

	std::string rest() { return b_.substr(pos_); }
	std::size_t remaining() const noexcept { return b_.size() - pos_; }

private:
	void need(std::size_t n, const char* what) {
		if (pos_ + n > b_.size())
			throw FormatError("truncated checkpoint while reading " + std::string(what) + " in " + path_);
	}

	const std::string& b_;
	std::string path_;
	std::size_t pos_ = 0;
};

inline void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
	if (name.size() > 0xffff || t.rank() > 0xff)
		throw FormatError("tensor " + name + " cannot be encoded");
	put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
	out += name;
	put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
	for (std::size_t d : t.shape())
		put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
	for (double v : t.data())
		put<double>(out, v);
}

inline void put_separator_config(std::map<std::string, std::string>& kv, const sep::SeparatorConfig& c) {
	kv["separator.n_filters"] = std::to_string(c.n_filters);
	kv["separator.kernel"] = std::to_string(c.kernel);
	kv["separator.stride"] = std::to_string(c.stride);
	kv["separator.block_channels"] = std::to_string(c.block_channels);
	kv["separator.n_blocks"] = std::to_string(c.n_blocks);
	kv["separator.n_repeats"] = std::to_string(c.n_repeats);
}

inline std::size_t take_size(std::map<std::string, std::string>& kv, const std::string& key, const std::string& path) {
	auto it = kv.find(key);
	if (it == kv.end())
		throw FormatError("checkpoint trailer lacks " + key + " in " + path);
	const auto v = static_cast<std::size_t>(dsp::parse_u64(it->second, path));
	kv.erase(it);
	return v;
}

/// Checks a loaded parameter set against the layout implied by `config`.
inline void require_layout(const sep::SeparatorParams& loaded, const sep::SeparatorConfig& config, const char* role) {
	const auto reference = sep::init_params(config, 0);
	if (loaded.tensors.size() != reference.tensors.size())
		throw ShapeError(std::string(role) + " tensor count " + std::to_string(loaded.tensors.size()) +
				" does not match separator config (" + std::to_string(reference.tensors.size()) + ")");
	for (std::size_t i = 0; i < loaded.tensors.size(); ++i) {
		const auto& got = loaded.tensors[i];
		const auto& want = reference.tensors[i];
		if (got.name != want.name)
			throw ShapeError(std::string(role) + " tensor " + got.name + " found where " + want.name + " expected");
		if (got.value.shape() != want.value.shape())
			throw ShapeError(std::string(role) + " tensor " + got.name + " has shape " +
					Tensor::shape_str(got.value.shape()) + ", separator config expects " +
					Tensor::shape_str(want.value.shape()));
	}
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
	std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
	detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.student.tensors.size() + c.teacher.tensors.size()));
	for (const auto& t : c.student.tensors)
		detail::put_tensor(out, "student/" + t.name, t.value);
	for (const auto& t : c.teacher.tensors)
		detail::put_tensor(out, "teacher/" + t.name, t.value);

	std::map<std::string, std::string> kv = c.config;
	kv["epoch"] = std::to_string(c.epoch);
	kv["seed"] = std::to_string(c.seed);
	kv["strategy"] = c.strategy;
	detail::put_separator_config(kv, c.separator);
	for (const auto& h : c.history) {
		char key[32];
		std::snprintf(key, sizeof(key), "history.%06d", h.epoch);
		kv[key] = dsp::format_double(h.dev_mean) + ";" + dsp::format_double(h.dev_std) + ";" +
			dsp::format_double(h.train_loss);
	}
	for (const auto& [k, v] : kv) {
		if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
			throw FormatError("checkpoint trailer entry cannot be encoded: " + k);
		out += k + "=" + v + "\n";
	}
	return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
	detail::Reader r(bytes, path);
	if (r.str(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
		throw FormatError("bad checkpoint magic in " + path);
	const auto count = r.get<std::uint32_t>("tensor count");
	Checkpoint c;
	for (std::uint32_t i = 0; i < count; ++i) {
		const auto name_len = r.get<std::uint16_t>("name length");
		std::string name = r.str(name_len, "tensor name");
		const auto rank = r.get<std::uint8_t>("rank");
		Tensor::Shape shape(rank);
		for (auto& d : shape)
			d = r.get<std::uint32_t>("dims");
		if (Tensor::count(shape) > r.remaining() / sizeof(double))
			throw FormatError("truncated checkpoint while reading data of " + name + " in " + path);
		std::vector<double> data(Tensor::count(shape));
		for (double& v : data)
			v = r.get<double>("tensor data");
		Tensor t(std::move(shape), std::move(data));
		if (name.rfind("student/", 0) == 0)
			c.student.tensors.push_back({name.substr(8), std::move(t), true});
		else if (name.rfind("teacher/", 0) == 0)
			c.teacher.tensors.push_back({name.substr(8), std::move(t), false});
		else
			throw FormatError("checkpoint tensor '" + name + "' has no student/ or teacher/ prefix in " + path);
	}

	std::map<std::string, std::string> kv;
	std::istringstream trailer(r.rest());
	std::string line;
	while (std::getline(trailer, line)) {
		if (line.empty())
			continue;
		const auto eq = line.find('=');
		if (eq == std::string::npos)
			throw FormatError("malformed checkpoint trailer line '" + line + "' in " + path);
		kv[line.substr(0, eq)] = line.substr(eq + 1);
	}
	auto take = [&](const std::string& key) {
		auto it = kv.find(key);
		if (it == kv.end())
			throw FormatError("checkpoint trailer lacks " + key + " in " + path);
		std::string v = it->second;
		kv.erase(it);
		return v;
	};
	c.epoch = static_cast<int>(dsp::parse_u64(take("epoch"), path));
	c.seed = dsp::parse_u64(take("seed"), path);
	c.strategy = take("strategy");
	c.separator.n_filters = detail::take_size(kv, "separator.n_filters", path);
	c.separator.kernel = detail::take_size(kv, "separator.kernel", path);
	c.separator.stride = detail::take_size(kv, "separator.stride", path);
	c.separator.block_channels = detail::take_size(kv, "separator.block_channels", path);
	c.separator.n_blocks = detail::take_size(kv, "separator.n_blocks", path);
	c.separator.n_repeats = detail::take_size(kv, "separator.n_repeats", path);
	for (auto it = kv.begin(); it != kv.end();) {
		if (it->first.rfind("history.", 0) == 0) {
			HistoryRow h;
			h.epoch = static_cast<int>(dsp::parse_u64(it->first.substr(8), path));
			std::istringstream is(it->second);
			std::string a, b, d;
			if (!std::getline(is, a, ';') || !std::getline(is, b, ';') || !std::getline(is, d))
				throw FormatError("malformed history entry " + it->first + " in " + path);
			h.dev_mean = dsp::parse_double(a, path);
			h.dev_std = dsp::parse_double(b, path);
			h.train_loss = dsp::parse_double(d, path);
			c.history.push_back(h);
			it = kv.erase(it);
		} else {
			++it;
		}
	}
	c.config = std::move(kv);
	c.separator.validate();
	detail::require_layout(c.student, c.separator, "student");
	detail::require_layout(c.teacher, c.separator, "teacher");
	return c;
}

inline void checkpoint_write(const Checkpoint& c, const std::filesystem::path& path) {
	const std::string bytes = encode_checkpoint(c);
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw IoError("cannot open for writing: " + path.string());
	out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!out)
		throw IoError("write failed: " + path.string());
}

inline Checkpoint checkpoint_read(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw IoError("cannot open checkpoint: " + path.string());
	std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
	return decode_checkpoint(bytes, path.string());
}

/// Reads a checkpoint that must match `expected`; a mismatch names the
/// first offending tensor.
inline Checkpoint checkpoint_read(const std::filesystem::path& path, const sep::SeparatorConfig& expected) {
	Checkpoint c = checkpoint_read(path);
	detail::require_layout(c.student, expected, "student");
	detail::require_layout(c.teacher, expected, "teacher");
	c.separator = expected;
	return c;
}

}  // namespace mbt::train
