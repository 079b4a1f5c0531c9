#pragma once

// Minimal reverse-mode differentiation over dense double tensors.
//
// A Tape records every node created while it is in recording mode, in
// creation order. Creation order is a topological order of the graph, so
// backward() simply replays the tape in reverse. A non-recording tape evaluates
// values only and keeps nothing alive beyond the Vars the caller holds.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mbt/error.hpp"
#include "mbt/tensor.hpp"

namespace mbt::ag {

struct Node {
	Tensor value;
	Tensor grad;
	bool requires_grad = false;
	std::function<void(const Tensor&)> backward;

	Tensor& grad_buffer() {
		if (grad.size() != value.size())
			grad = Tensor(value.shape());
		return grad;
	}
	bool has_grad() const noexcept { return grad.size() == value.size() && !value.empty(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy.
class Var {
public:
	Var() = default;

	const Tensor& value() const { return node_->value; }
	/// Accumulated gradient; zeros if nothing has flowed here.
	const Tensor& grad() const { return node_->grad_buffer(); }
	const Tensor::Shape& shape() const { return node_->value.shape(); }
	std::size_t size() const { return node_->value.size(); }
	double item() const { return node_->value[0]; }
	bool requires_grad() const { return node_->requires_grad; }
	bool valid() const noexcept { return static_cast<bool>(node_); }

	Tape& tape() const { return *tape_; }
	Node* node() const { return node_.get(); }

private:
	friend class Tape;
	Var(std::shared_ptr<Node> n, Tape* t) : node_(std::move(n)), tape_(t) {}

	std::shared_ptr<Node> node_;
	Tape* tape_ = nullptr;
};

class Tape {
public:
	explicit Tape(bool recording = true) : recording_(recording) {}
	Tape(const Tape&) = delete;
	Tape& operator=(const Tape&) = delete;

	bool recording() const noexcept { return recording_; }
	std::size_t size() const noexcept { return nodes_.size(); }

	/// Leaf tensor. Only trainable leaves on a recording tape accumulate gradients.
	Var leaf(Tensor value, bool trainable = true) {
		auto n = std::make_shared<Node>();
		n->value = std::move(value);
		n->requires_grad = recording_ && trainable;
		return keep(std::move(n));
	}

	Var constant(Tensor value) { return leaf(std::move(value), false); }

	/// Creates an op output. `backward` receives the output gradient and must
	/// push contributions into the parents that require them.
	Var emit(Tensor value, std::initializer_list<Var> parents,
			std::function<void(const Tensor&)> backward) {
		auto n = std::make_shared<Node>();
		n->value = std::move(value);
		bool needs = false;
		for (const Var& p : parents) {
			if (p.tape_ != this)
				throw Error("autograd: operands belong to different tapes");
			needs = needs || p.requires_grad();
		}
		if (recording_ && needs) {
			n->requires_grad = true;
			n->backward = std::move(backward);
		}
		return keep(std::move(n));
	}

	/// Reverse sweep from a scalar loss.
	void backward(const Var& loss) {
		if (!recording_)
			throw Error("autograd: backward() on a non-recording tape");
		if (loss.tape_ != this)
			throw Error("autograd: loss belongs to another tape");
		if (loss.size() != 1)
			throw ShapeError("autograd: backward() needs a scalar loss, got shape " +
					Tensor::shape_str(loss.shape()));
		if (!loss.requires_grad())
			return;
		loss.node_->grad_buffer()[0] += 1.0;
		for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
			Node& n = **it;
			if (n.requires_grad && n.backward && n.has_grad())
				n.backward(n.grad);
		}
	}

private:
	Var keep(std::shared_ptr<Node> n) {
		if (recording_)
			nodes_.push_back(n);
		return Var(std::move(n), this);
	}

	bool recording_;
	std::vector<std::shared_ptr<Node>> nodes_;
};

namespace detail {

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
	if (a.shape() != b.shape())
		throw ShapeError(std::string(op) + ": shape mismatch " + Tensor::shape_str(a.shape()) +
				" vs " + Tensor::shape_str(b.shape()));
}

inline void require_scalar(const char* op, const Var& s) {
	if (s.size() != 1)
		throw ShapeError(std::string(op) + ": expected a scalar, got " + Tensor::shape_str(s.shape()));
}

inline void require_rank2(const char* op, const Var& a) {
	if (a.shape().size() != 2)
		throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
				Tensor::shape_str(a.shape()));
}

template <class F>
Tensor map(const Tensor& x, F f) {
	Tensor out(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i)
		out[i] = f(x[i]);
	return out;
}

template <class F>
void accumulate(Node* n, const Tensor& g, F f) {
	if (!n->requires_grad)
		return;
	Tensor& dst = n->grad_buffer();
	for (std::size_t i = 0; i < g.size(); ++i)
		dst[i] += f(i, g[i]);
}

inline void accumulate(Node* n, const Tensor& g) {
	accumulate(n, g, [](std::size_t, double v) { return v; });
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
	detail::require_same_shape("add", a, b);
	Tensor out = a.value();
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] += b.value()[i];
	Node* pa = a.node();
	Node* pb = b.node();
	return a.tape().emit(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
		detail::accumulate(pa, g);
		detail::accumulate(pb, g);
	});
}

inline Var sub(const Var& a, const Var& b) {
	detail::require_same_shape("sub", a, b);
	Tensor out = a.value();
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] -= b.value()[i];
	Node* pa = a.node();
	Node* pb = b.node();
	return a.tape().emit(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
		detail::accumulate(pa, g);
		detail::accumulate(pb, g, [](std::size_t, double v) { return -v; });
	});
}

inline Var mul(const Var& a, const Var& b) {
	detail::require_same_shape("mul", a, b);
	Tensor out = a.value();
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] *= b.value()[i];
	Node* pa = a.node();
	Node* pb = b.node();
	return a.tape().emit(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
		detail::accumulate(pa, g, [pb](std::size_t i, double v) { return v * pb->value[i]; });
		detail::accumulate(pb, g, [pa](std::size_t i, double v) { return v * pa->value[i]; });
	});
}

inline Var div(const Var& a, const Var& b) {
	detail::require_same_shape("div", a, b);
	Tensor out = a.value();
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] /= b.value()[i];
	Node* pa = a.node();
	Node* pb = b.node();
	return a.tape().emit(std::move(out), {a, b}, [pa, pb](const Tensor& g) {
		detail::accumulate(pa, g, [pb](std::size_t i, double v) { return v / pb->value[i]; });
		detail::accumulate(pb, g, [pa, pb](std::size_t i, double v) {
			const double d = pb->value[i];
			return -v * pa->value[i] / (d * d);
		});
	});
}

/// Multiplication by a constant.
inline Var scale(const Var& a, double c) {
	Tensor out = detail::map(a.value(), [c](double v) { return c * v; });
	Node* pa = a.node();
	return a.tape().emit(std::move(out), {a}, [pa, c](const Tensor& g) {
		detail::accumulate(pa, g, [c](std::size_t, double v) { return c * v; });
	});
}

/// Broadcast multiplication of a tensor by a scalar node.
inline Var scale(const Var& a, const Var& s) {
	detail::require_scalar("scale", s);
	const double c = s.item();
	Tensor out = detail::map(a.value(), [c](double v) { return c * v; });
	Node* pa = a.node();
	Node* ps = s.node();
	return a.tape().emit(std::move(out), {a, s}, [pa, ps](const Tensor& g) {
		const double c = ps->value[0];
		detail::accumulate(pa, g, [c](std::size_t, double v) { return c * v; });
		if (ps->requires_grad) {
			double acc = 0.0;
			for (std::size_t i = 0; i < g.size(); ++i)
				acc += g[i] * pa->value[i];
			ps->grad_buffer()[0] += acc;
		}
	});
}

inline Var add_scalar(const Var& a, double c) {
	Tensor out = detail::map(a.value(), [c](double v) { return v + c; });
	Node* pa = a.node();
	return a.tape().emit(std::move(out), {a}, [pa](const Tensor& g) { detail::accumulate(pa, g); });
}

/// max(a, floor) elementwise; the gradient passes only where a > floor.
inline Var clamp_min(const Var& a, double floor) {
	Tensor out = detail::map(a.value(), [floor](double v) { return v > floor ? v : floor; });
	Node* pa = a.node();
	return a.tape().emit(std::move(out), {a}, [pa, floor](const Tensor& g) {
		detail::accumulate(pa, g, [pa, floor](std::size_t i, double v) {
			return pa->value[i] > floor ? v : 0.0;
		});
	});
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var relu(const Var& x) {
	Tensor out = detail::map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px](const Tensor& g) {
		detail::accumulate(px, g, [px](std::size_t i, double v) { return px->value[i] > 0.0 ? v : 0.0; });
	});
}

/// Parametric ReLU with one learned slope shared by every element.
inline Var prelu(const Var& x, const Var& slope) {
	detail::require_scalar("prelu", slope);
	const double a = slope.item();
	Tensor out = detail::map(x.value(), [a](double v) { return v > 0.0 ? v : a * v; });
	Node* px = x.node();
	Node* ps = slope.node();
	return x.tape().emit(std::move(out), {x, slope}, [px, ps](const Tensor& g) {
		const double a = ps->value[0];
		detail::accumulate(px, g, [px, a](std::size_t i, double v) { return px->value[i] > 0.0 ? v : a * v; });
		if (ps->requires_grad) {
			double acc = 0.0;
			for (std::size_t i = 0; i < g.size(); ++i)
				if (!(px->value[i] > 0.0))
					acc += g[i] * px->value[i];
			ps->grad_buffer()[0] += acc;
		}
	});
}

inline double stable_sigmoid(double v) {
	if (v >= 0.0)
		return 1.0 / (1.0 + std::exp(-v));
	const double e = std::exp(v);
	return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
	Tensor out = detail::map(x.value(), stable_sigmoid);
	Node* px = x.node();
	auto self = std::make_shared<Tensor>(out);
	return x.tape().emit(std::move(out), {x}, [px, self](const Tensor& g) {
		detail::accumulate(px, g, [&y = *self](std::size_t i, double v) { return v * y[i] * (1.0 - y[i]); });
	});
}

inline Var square(const Var& x) {
	Tensor out = detail::map(x.value(), [](double v) { return v * v; });
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px](const Tensor& g) {
		detail::accumulate(px, g, [px](std::size_t i, double v) { return 2.0 * px->value[i] * v; });
	});
}

inline Var sqrt(const Var& x) {
	Tensor out = detail::map(x.value(), [](double v) { return std::sqrt(v); });
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px](const Tensor& g) {
		detail::accumulate(px, g, [px](std::size_t i, double v) { return v / (2.0 * std::sqrt(px->value[i])); });
	});
}

inline Var log10(const Var& x) {
	Tensor out = detail::map(x.value(), [](double v) { return std::log10(v); });
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px](const Tensor& g) {
		detail::accumulate(px, g, [px](std::size_t i, double v) {
			return v / (px->value[i] * std::numbers::ln10);
		});
	});
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& x) {
	double acc = 0.0;
	for (double v : x.value().data())
		acc += v;
	Node* px = x.node();
	return x.tape().emit(Tensor({1}, acc), {x}, [px](const Tensor& g) {
		const double gv = g[0];
		if (!px->requires_grad)
			return;
		for (double& d : px->grad_buffer().data())
			d += gv;
	});
}

inline Var mean(const Var& x) {
	return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

inline Var dot(const Var& a, const Var& b) {
	if (a.size() != b.size())
		throw ShapeError("dot: shape mismatch " + Tensor::shape_str(a.shape()) + " vs " +
				Tensor::shape_str(b.shape()));
	double acc = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i)
		acc += a.value()[i] * b.value()[i];
	Node* pa = a.node();
	Node* pb = b.node();
	return a.tape().emit(Tensor({1}, acc), {a, b}, [pa, pb](const Tensor& g) {
		const double gv = g[0];
		detail::accumulate(pa, pb->value, [gv](std::size_t, double v) { return gv * v; });
		detail::accumulate(pb, pa->value, [gv](std::size_t, double v) { return gv * v; });
	});
}

/// Gradient-blocking copy: same value, no parents.
inline Var detach(const Var& x) { return x.tape().constant(x.value()); }

// ---------------------------------------------------------------------------
// Rank-2 [channels, time] layout helpers

/// Zero-pads the time axis of a [C, T] tensor.
inline Var pad_cols(const Var& x, std::size_t left, std::size_t right) {
	detail::require_rank2("pad_cols", x);
	const std::size_t rows = x.shape()[0], cols = x.shape()[1], out_cols = cols + left + right;
	Tensor out({rows, out_cols});
	for (std::size_t r = 0; r < rows; ++r)
		std::copy_n(x.value().data().begin() + r * cols, cols, out.data().begin() + r * out_cols + left);
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px, rows, cols, out_cols, left](const Tensor& g) {
		if (!px->requires_grad)
			return;
		Tensor& d = px->grad_buffer();
		for (std::size_t r = 0; r < rows; ++r)
			for (std::size_t c = 0; c < cols; ++c)
				d[r * cols + c] += g[r * out_cols + left + c];
	});
}

inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
	detail::require_rank2("slice_cols", x);
	const std::size_t rows = x.shape()[0], cols = x.shape()[1];
	if (begin + count > cols)
		throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
				std::to_string(begin + count) + ") exceeds " + Tensor::shape_str(x.shape()));
	Tensor out({rows, count});
	for (std::size_t r = 0; r < rows; ++r)
		std::copy_n(x.value().data().begin() + r * cols + begin, count, out.data().begin() + r * count);
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px, rows, cols, begin, count](const Tensor& g) {
		if (!px->requires_grad)
			return;
		Tensor& d = px->grad_buffer();
		for (std::size_t r = 0; r < rows; ++r)
			for (std::size_t c = 0; c < count; ++c)
				d[r * cols + begin + c] += g[r * count + c];
	});
}

inline Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
	detail::require_rank2("slice_rows", x);
	const std::size_t rows = x.shape()[0], cols = x.shape()[1];
	if (begin + count > rows)
		throw ShapeError("slice_rows: range exceeds " + Tensor::shape_str(x.shape()));
	Tensor out({count, cols});
	std::copy_n(x.value().data().begin() + begin * cols, count * cols, out.data().begin());
	Node* px = x.node();
	return x.tape().emit(std::move(out), {x}, [px, begin, cols](const Tensor& g) {
		if (!px->requires_grad)
			return;
		Tensor& d = px->grad_buffer();
		for (std::size_t i = 0; i < g.size(); ++i)
			d[begin * cols + i] += g[i];
	});
}

// ---------------------------------------------------------------------------
// Convolutions

struct ConvOptions {
	std::size_t stride = 1;
	std::size_t dilation = 1;
	std::size_t padding = 0;  ///< zeros added on both ends of the time axis
	std::size_t groups = 1;
};

inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, const ConvOptions& o) {
	if (o.stride == 0 || o.dilation == 0 || kernel == 0)
		throw ShapeError("conv1d: stride, dilation and kernel must be positive");
	const std::size_t span = o.dilation * (kernel - 1) + 1;
	if (length + 2 * o.padding < span)
		throw ShapeError("conv1d: input length " + std::to_string(length) +
				" shorter than receptive field " + std::to_string(span));
	return (length + 2 * o.padding - span) / o.stride + 1;
}

namespace detail {

// cols[(c * K + k), t] = x[c0 + c, t * stride + k * dilation - padding]
inline void im2col(const Tensor& x, std::size_t c0, std::size_t channels, std::size_t kernel,
		std::size_t out_len, const ConvOptions& o, RowMat& cols) {
	const std::size_t len = x.shape()[1];
	cols.setZero(static_cast<Eigen::Index>(channels * kernel), static_cast<Eigen::Index>(out_len));
	for (std::size_t c = 0; c < channels; ++c) {
		const double* row = x.data().data() + (c0 + c) * len;
		for (std::size_t k = 0; k < kernel; ++k) {
			double* dst = cols.data() + (c * kernel + k) * out_len;
			const long offset = static_cast<long>(k * o.dilation) - static_cast<long>(o.padding);
			for (std::size_t t = 0; t < out_len; ++t) {
				const long src = static_cast<long>(t * o.stride) + offset;
				if (src >= 0 && src < static_cast<long>(len))
					dst[t] = row[src];
			}
		}
	}
}

inline void col2im_add(const RowMat& cols, std::size_t c0, std::size_t channels, std::size_t kernel,
		std::size_t out_len, const ConvOptions& o, Tensor& dx) {
	const std::size_t len = dx.shape()[1];
	for (std::size_t c = 0; c < channels; ++c) {
		double* row = dx.data().data() + (c0 + c) * len;
		for (std::size_t k = 0; k < kernel; ++k) {
			const double* src = cols.data() + (c * kernel + k) * out_len;
			const long offset = static_cast<long>(k * o.dilation) - static_cast<long>(o.padding);
			for (std::size_t t = 0; t < out_len; ++t) {
				const long dst = static_cast<long>(t * o.stride) + offset;
				if (dst >= 0 && dst < static_cast<long>(len))
					row[dst] += src[t];
			}
		}
	}
}

inline bool is_pointwise(std::size_t kernel, const ConvOptions& o) {
	return kernel == 1 && o.stride == 1 && o.padding == 0;
}

}  // namespace detail

/// 1-D convolution. x: [C_in, T], weight: [C_out, C_in / groups, K], bias: [C_out].
inline Var conv1d(const Var& x, const Var& weight, const std::optional<Var>& bias, const ConvOptions& o) {
	detail::require_rank2("conv1d", x);
	const auto& ws = weight.shape();
	if (ws.size() != 3)
		throw ShapeError("conv1d: weight must be [C_out, C_in/groups, K], got " + Tensor::shape_str(ws));
	const std::size_t cin = x.shape()[0], len = x.shape()[1];
	const std::size_t cout = ws[0], cin_g = ws[1], kernel = ws[2], groups = o.groups;
	if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g)
		throw ShapeError("conv1d: input " + Tensor::shape_str(x.shape()) + " incompatible with weight " +
				Tensor::shape_str(ws) + " for groups=" + std::to_string(groups));
	if (bias && bias->size() != cout)
		throw ShapeError("conv1d: bias shape " + Tensor::shape_str(bias->shape()) + " vs C_out " +
				std::to_string(cout));
	const std::size_t out_len = conv1d_output_length(len, kernel, o);
	const std::size_t cout_g = cout / groups;
	const bool depthwise = cin_g == 1 && cout_g == 1;

	Tensor out({cout, out_len});
	const double* w = weight.value().data().data();
	if (depthwise) {
		const double* xv = x.value().data().data();
		for (std::size_t c = 0; c < cout; ++c) {
			double* dst = out.data().data() + c * out_len;
			for (std::size_t k = 0; k < kernel; ++k) {
				const double wk = w[c * kernel + k];
				const long offset = static_cast<long>(k * o.dilation) - static_cast<long>(o.padding);
				for (std::size_t t = 0; t < out_len; ++t) {
					const long src = static_cast<long>(t * o.stride) + offset;
					if (src >= 0 && src < static_cast<long>(len))
						dst[t] += wk * xv[c * len + src];
				}
			}
		}
	} else {
		detail::RowMat cols;
		for (std::size_t g = 0; g < groups; ++g) {
			detail::ConstMapMat wg(w + g * cout_g * cin_g * kernel, cout_g, cin_g * kernel);
			detail::MapMat og(out.data().data() + g * cout_g * out_len, cout_g, out_len);
			if (detail::is_pointwise(kernel, o)) {
				og.noalias() = wg * detail::ConstMapMat(x.value().data().data() + g * cin_g * len, cin_g, len);
			} else {
				detail::im2col(x.value(), g * cin_g, cin_g, kernel, out_len, o, cols);
				og.noalias() = wg * cols;
			}
		}
	}
	if (bias) {
		for (std::size_t c = 0; c < cout; ++c) {
			const double b = bias->value()[c];
			for (std::size_t t = 0; t < out_len; ++t)
				out[c * out_len + t] += b;
		}
	}

	Node* px = x.node();
	Node* pw = weight.node();
	Node* pb = bias ? bias->node() : nullptr;
	auto backward = [px, pw, pb, o, cin_g, cout_g, kernel, groups, out_len, len, depthwise](const Tensor& g) {
		const std::size_t cout = cout_g * groups;
		if (pb && pb->requires_grad) {
			Tensor& db = pb->grad_buffer();
			for (std::size_t c = 0; c < cout; ++c) {
				double acc = 0.0;
				for (std::size_t t = 0; t < out_len; ++t)
					acc += g[c * out_len + t];
				db[c] += acc;
			}
		}
		const double* w = pw->value.data().data();
		if (depthwise) {
			const double* xv = px->value.data().data();
			double* dw = pw->requires_grad ? pw->grad_buffer().data().data() : nullptr;
			double* dx = px->requires_grad ? px->grad_buffer().data().data() : nullptr;
			for (std::size_t c = 0; c < cout; ++c) {
				const double* gc = g.data().data() + c * out_len;
				for (std::size_t k = 0; k < kernel; ++k) {
					const long offset = static_cast<long>(k * o.dilation) - static_cast<long>(o.padding);
					double acc = 0.0;
					const double wk = w[c * kernel + k];
					for (std::size_t t = 0; t < out_len; ++t) {
						const long src = static_cast<long>(t * o.stride) + offset;
						if (src >= 0 && src < static_cast<long>(len)) {
							acc += gc[t] * xv[c * len + src];
							if (dx)
								dx[c * len + src] += wk * gc[t];
						}
					}
					if (dw)
						dw[c * kernel + k] += acc;
				}
			}
			return;
		}
		detail::RowMat cols;
		for (std::size_t gi = 0; gi < groups; ++gi) {
			detail::ConstMapMat gg(g.data().data() + gi * cout_g * out_len, cout_g, out_len);
			detail::ConstMapMat wg(w + gi * cout_g * cin_g * kernel, cout_g, cin_g * kernel);
			const bool pointwise = detail::is_pointwise(kernel, o);
			if (pw->requires_grad) {
				detail::MapMat dwg(pw->grad_buffer().data().data() + gi * cout_g * cin_g * kernel, cout_g,
						cin_g * kernel);
				if (pointwise) {
					dwg.noalias() += gg * detail::ConstMapMat(px->value.data().data() + gi * cin_g * len, cin_g, len)
											.transpose();
				} else {
					detail::im2col(px->value, gi * cin_g, cin_g, kernel, out_len, o, cols);
					dwg.noalias() += gg * cols.transpose();
				}
			}
			if (px->requires_grad) {
				if (pointwise) {
					detail::MapMat dxg(px->grad_buffer().data().data() + gi * cin_g * len, cin_g, len);
					dxg.noalias() += wg.transpose() * gg;
				} else {
					detail::RowMat dcols = wg.transpose() * gg;
					detail::col2im_add(dcols, gi * cin_g, cin_g, kernel, out_len, o, px->grad_buffer());
				}
			}
		}
	};
	if (bias)
		return x.tape().emit(std::move(out), {x, weight, *bias}, std::move(backward));
	return x.tape().emit(std::move(out), {x, weight}, std::move(backward));
}

inline Var conv1d(const Var& x, const Var& weight, const ConvOptions& o = {}) {
	return conv1d(x, weight, std::nullopt, o);
}

/// Transposed 1-D convolution (overlap-add synthesis).
/// x: [C_in, F], weight: [C_in, C_out, K]; output [C_out, (F - 1) * stride + K].
inline Var conv_transpose1d(const Var& x, const Var& weight, std::size_t stride) {
	detail::require_rank2("conv_transpose1d", x);
	const auto& ws = weight.shape();
	if (ws.size() != 3 || ws[0] != x.shape()[0])
		throw ShapeError("conv_transpose1d: input " + Tensor::shape_str(x.shape()) +
				" incompatible with weight " + Tensor::shape_str(ws));
	if (stride == 0)
		throw ShapeError("conv_transpose1d: stride must be positive");
	const std::size_t cin = ws[0], cout = ws[1], kernel = ws[2], frames = x.shape()[1];
	const std::size_t out_len = (frames - 1) * stride + kernel;
	const ConvOptions o{stride, 1, 0, 1};

	detail::ConstMapMat wm(weight.value().data().data(), cin, cout * kernel);
	detail::ConstMapMat xm(x.value().data().data(), cin, frames);
	detail::RowMat cols = wm.transpose() * xm;
	Tensor out({cout, out_len});
	detail::col2im_add(cols, 0, cout, kernel, frames, o, out);

	Node* px = x.node();
	Node* pw = weight.node();
	return x.tape().emit(std::move(out), {x, weight}, [px, pw, cin, cout, kernel, frames, o](const Tensor& g) {
		detail::RowMat dcols;
		detail::im2col(g, 0, cout, kernel, frames, o, dcols);
		if (px->requires_grad) {
			detail::ConstMapMat wm(pw->value.data().data(), cin, cout * kernel);
			detail::MapMat dx(px->grad_buffer().data().data(), cin, frames);
			dx.noalias() += wm * dcols;
		}
		if (pw->requires_grad) {
			detail::ConstMapMat xm(px->value.data().data(), cin, frames);
			detail::MapMat dw(pw->grad_buffer().data().data(), cin, cout * kernel);
			dw.noalias() += xm * dcols.transpose();
		}
	});
}

// ---------------------------------------------------------------------------
// Normalization

/// Global layer normalization of a [C, T] tensor: statistics over all of
/// C x T, then a per-channel affine map gamma[c] * xhat + beta[c].
inline Var global_layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-8) {
	detail::require_rank2("global_layer_norm", x);
	const std::size_t channels = x.shape()[0], len = x.shape()[1], n = channels * len;
	if (gamma.size() != channels || beta.size() != channels)
		throw ShapeError("global_layer_norm: affine shapes " + Tensor::shape_str(gamma.shape()) + ", " +
				Tensor::shape_str(beta.shape()) + " vs input " + Tensor::shape_str(x.shape()));
	const auto& xv = x.value();
	double mu = 0.0;
	for (double v : xv.data())
		mu += v;
	mu /= static_cast<double>(n);
	double var = 0.0;
	for (double v : xv.data())
		var += (v - mu) * (v - mu);
	var /= static_cast<double>(n);
	const double inv_std = 1.0 / std::sqrt(var + eps);

	auto xhat = std::make_shared<Tensor>(xv.shape());
	Tensor out(xv.shape());
	for (std::size_t c = 0; c < channels; ++c) {
		const double gc = gamma.value()[c], bc = beta.value()[c];
		for (std::size_t t = 0; t < len; ++t) {
			const std::size_t i = c * len + t;
			(*xhat)[i] = (xv[i] - mu) * inv_std;
			out[i] = gc * (*xhat)[i] + bc;
		}
	}
	Node* px = x.node();
	Node* pg = gamma.node();
	Node* pb = beta.node();
	return x.tape().emit(std::move(out), {x, gamma, beta},
			[px, pg, pb, xhat, inv_std, channels, len, n](const Tensor& g) {
				const Tensor& xh = *xhat;
				if (pg->requires_grad || pb->requires_grad) {
					for (std::size_t c = 0; c < channels; ++c) {
						double sg = 0.0, sgx = 0.0;
						for (std::size_t t = 0; t < len; ++t) {
							sg += g[c * len + t];
							sgx += g[c * len + t] * xh[c * len + t];
						}
						if (pb->requires_grad)
							pb->grad_buffer()[c] += sg;
						if (pg->requires_grad)
							pg->grad_buffer()[c] += sgx;
					}
				}
				if (!px->requires_grad)
					return;
				double mean_d = 0.0, mean_dx = 0.0;
				for (std::size_t c = 0; c < channels; ++c) {
					const double gc = pg->value[c];
					for (std::size_t t = 0; t < len; ++t) {
						const double d = g[c * len + t] * gc;
						mean_d += d;
						mean_dx += d * xh[c * len + t];
					}
				}
				mean_d /= static_cast<double>(n);
				mean_dx /= static_cast<double>(n);
				Tensor& dx = px->grad_buffer();
				for (std::size_t c = 0; c < channels; ++c) {
					const double gc = pg->value[c];
					for (std::size_t t = 0; t < len; ++t) {
						const std::size_t i = c * len + t;
						dx[i] += inv_std * (g[i] * gc - mean_d - xh[i] * mean_dx);
					}
				}
			});
}

}  // namespace mbt::ag
