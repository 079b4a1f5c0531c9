#pragma once

// Line-based `key = value` configuration with `#` comments.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mbt/error.hpp"

namespace mbt::cli {

class KeyValueConfig {
public:
	struct Entry {
		std::string value;
		int line = 0;
	};

	static KeyValueConfig parse(std::istream& in, std::string source) {
		KeyValueConfig cfg;
		cfg.source_ = std::move(source);
		std::string raw;
		int line_no = 0;
		while (std::getline(in, raw)) {
			++line_no;
			std::string_view line = raw;
			if (const auto hash = line.find('#'); hash != std::string_view::npos)
				line = line.substr(0, hash);
			line = trim(line);
			if (line.empty())
				continue;
			const auto eq = line.find('=');
			if (eq == std::string_view::npos)
				throw ConfigError(cfg.where(line_no) + ": expected 'key = value', got '" + std::string(line) + "'");
			const std::string key(trim(line.substr(0, eq)));
			const std::string value(trim(line.substr(eq + 1)));
			if (key.empty())
				throw ConfigError(cfg.where(line_no) + ": empty key");
			if (cfg.entries_.count(key))
				throw ConfigError(cfg.where(line_no) + ": duplicate key '" + key + "' (first set on line " +
						std::to_string(cfg.entries_.at(key).line) + ")");
			cfg.entries_[key] = {value, line_no};
		}
		return cfg;
	}

	static KeyValueConfig parse_string(const std::string& text, std::string source = "<string>") {
		std::istringstream in(text);
		return parse(in, std::move(source));
	}

	static KeyValueConfig load(const std::filesystem::path& path) {
		std::ifstream in(path);
		if (!in)
			throw IoError("cannot open config: " + path.string());
		return parse(in, path.string());
	}

	const std::string& source() const noexcept { return source_; }
	bool has(const std::string& key) const { return entries_.count(key) != 0; }
	const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

	/// Rejects any key outside `allowed`, naming the line.
	void require_known(const std::set<std::string>& allowed) const {
		for (const auto& [key, e] : entries_)
			if (!allowed.count(key))
				throw ConfigError(where(e.line) + ": unknown key '" + key + "'");
	}

	std::string get_string(const std::string& key) const { return entry(key).value; }
	std::string get_string(const std::string& key, const std::string& fallback) const {
		return has(key) ? get_string(key) : fallback;
	}

	double get_double(const std::string& key) const {
		const Entry& e = entry(key);
		double v = 0.0;
		if (!parse_number(e.value, v))
			throw ConfigError(where(e.line) + ": '" + key + "' expects a number, got '" + e.value + "'");
		return v;
	}
	double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

	std::int64_t get_int(const std::string& key) const {
		const Entry& e = entry(key);
		std::int64_t v = 0;
		if (!parse_number(e.value, v))
			throw ConfigError(where(e.line) + ": '" + key + "' expects an integer, got '" + e.value + "'");
		return v;
	}
	std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
		return has(key) ? get_int(key) : fallback;
	}

	std::uint64_t get_uint(const std::string& key) const {
		const Entry& e = entry(key);
		std::uint64_t v = 0;
		if (!parse_number(e.value, v))
			throw ConfigError(where(e.line) + ": '" + key + "' expects a non-negative integer, got '" + e.value + "'");
		return v;
	}
	std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
		return has(key) ? get_uint(key) : fallback;
	}

	bool get_bool(const std::string& key) const {
		const Entry& e = entry(key);
		if (e.value == "true" || e.value == "1" || e.value == "yes")
			return true;
		if (e.value == "false" || e.value == "0" || e.value == "no")
			return false;
		throw ConfigError(where(e.line) + ": '" + key + "' expects true or false, got '" + e.value + "'");
	}
	bool get_bool(const std::string& key, bool fallback) const { return has(key) ? get_bool(key) : fallback; }

	/// Comma-separated list with surrounding blanks removed.
	std::vector<std::string> get_list(const std::string& key) const {
		const Entry& e = entry(key);
		std::vector<std::string> out;
		std::string_view rest = e.value;
		while (true) {
			const auto comma = rest.find(',');
			const auto item = trim(rest.substr(0, comma));
			if (item.empty())
				throw ConfigError(where(e.line) + ": empty item in list '" + key + "'");
			out.emplace_back(item);
			if (comma == std::string_view::npos)
				break;
			rest = rest.substr(comma + 1);
		}
		return out;
	}

	/// Line number of `key`, or 0 when absent.
	int line_of(const std::string& key) const { return has(key) ? entries_.at(key).line : 0; }

	std::string where(int line) const { return source_ + ":" + std::to_string(line); }

private:
	const Entry& entry(const std::string& key) const {
		auto it = entries_.find(key);
		if (it == entries_.end())
			throw ConfigError(source_ + ": missing required key '" + key + "'");
		return it->second;
	}

	static std::string_view trim(std::string_view s) {
		const auto b = s.find_first_not_of(" \t\r");
		if (b == std::string_view::npos)
			return {};
		const auto e = s.find_last_not_of(" \t\r");
		return s.substr(b, e - b + 1);
	}

	template <class T>
	static bool parse_number(const std::string& s, T& out) {
		const char* end = s.data() + s.size();
		auto [ptr, ec] = std::from_chars(s.data(), end, out);
		return ec == std::errc() && ptr == end;
	}

	std::string source_;
	std::map<std::string, Entry> entries_;
};

}  // namespace mbt::cli
