#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mbt/error.hpp"

namespace mbt {

/// Dense row-major array of doubles with a dynamic shape.
class Tensor {
public:
	using Shape = std::vector<std::size_t>;

	Tensor() = default;

	explicit Tensor(Shape shape, double fill = 0.0)
		: shape_(std::move(shape)), data_(count(shape_), fill) {}

	Tensor(Shape shape, std::vector<double> data)
		: shape_(std::move(shape)), data_(std::move(data)) {
		if (data_.size() != count(shape_))
			throw ShapeError("tensor data size " + std::to_string(data_.size()) +
					" does not match shape " + shape_str(shape_));
	}

	/// Rank-2 row vector [1, n] holding a copy of `values`.
	static Tensor row(std::span<const double> values) {
		return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
	}

	const Shape& shape() const noexcept { return shape_; }
	std::size_t rank() const noexcept { return shape_.size(); }
	std::size_t dim(std::size_t i) const { return shape_.at(i); }
	std::size_t size() const noexcept { return data_.size(); }
	bool empty() const noexcept { return data_.empty(); }

	std::span<double> data() noexcept { return data_; }
	std::span<const double> data() const noexcept { return data_; }
	std::vector<double>& storage() noexcept { return data_; }
	const std::vector<double>& storage() const noexcept { return data_; }

	double& operator[](std::size_t i) noexcept { return data_[i]; }
	double operator[](std::size_t i) const noexcept { return data_[i]; }

	double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
	double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

	void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

	bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

	friend bool operator==(const Tensor& a, const Tensor& b) {
		return a.shape_ == b.shape_ && a.data_ == b.data_;
	}

	static std::size_t count(const Shape& s) {
		return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
	}

	static std::string shape_str(const Shape& s) {
		std::ostringstream os;
		os << '[';
		for (std::size_t i = 0; i < s.size(); ++i)
			os << (i ? ", " : "") << s[i];
		os << ']';
		return os.str();
	}

private:
	Shape shape_;
	std::vector<double> data_;
};

}  // namespace mbt
