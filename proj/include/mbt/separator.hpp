#pragma once

// Miniature time-domain masking separator:
//   encoder (strided conv + ReLU)
//   -> gLN + bottleneck
//   -> repeats x blocks of [1x1 conv, PReLU, gLN, dilated depthwise conv, PReLU, gLN, 1x1 conv] + residual
//   -> PReLU + 1x1 mask head + sigmoid (one mask per source)
//   -> masked encoder features -> transposed-conv decoder.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbt/autograd.hpp"
#include "mbt/error.hpp"
#include "mbt/rng.hpp"
#include "mbt/tensor.hpp"

namespace mbt::sep {

inline constexpr std::size_t kSources = 2;
inline constexpr std::size_t kDepthwiseKernel = 3;

struct SeparatorConfig {
	std::size_t n_filters = 64;
	std::size_t kernel = 16;
	std::size_t stride = 8;
	std::size_t block_channels = 64;
	std::size_t n_blocks = 4;   ///< dilations 1, 2, 4, ... per repeat
	std::size_t n_repeats = 2;

	void validate() const {
		if (n_filters == 0 || kernel == 0 || stride == 0 || block_channels == 0 || n_blocks == 0 || n_repeats == 0)
			throw ConfigError("separator config: all sizes must be positive");
		if (kernel % stride != 0)
			throw ConfigError("separator config: stride " + std::to_string(stride) + " must divide kernel " +
					std::to_string(kernel));
	}

	std::size_t dilation(std::size_t block) const { return std::size_t{1} << block; }

	friend bool operator==(const SeparatorConfig&, const SeparatorConfig&) = default;
};

struct NamedTensor {
	std::string name;
	Tensor value;
	bool trainable = true;
};

/// Ordered, named parameter set of one separator (student or teacher).
struct SeparatorParams {
	std::vector<NamedTensor> tensors;

	std::size_t parameter_count() const {
		std::size_t n = 0;
		for (const auto& t : tensors)
			n += t.value.size();
		return n;
	}

	const NamedTensor& get(const std::string& name) const {
		for (const auto& t : tensors)
			if (t.name == name)
				return t;
		throw ConfigError("no parameter named " + name);
	}

	void set_trainable(bool on) {
		for (auto& t : tensors)
			t.trainable = on;
	}

	/// Throws ShapeError naming the first tensor that differs in name or shape.
	void require_compatible(const SeparatorParams& o) const {
		if (tensors.size() != o.tensors.size())
			throw ShapeError("parameter sets differ in tensor count: " + std::to_string(tensors.size()) + " vs " +
					std::to_string(o.tensors.size()));
		for (std::size_t i = 0; i < tensors.size(); ++i) {
			if (tensors[i].name != o.tensors[i].name)
				throw ShapeError("parameter name mismatch at index " + std::to_string(i) + ": " + tensors[i].name +
						" vs " + o.tensors[i].name);
			if (tensors[i].value.shape() != o.tensors[i].value.shape())
				throw ShapeError("shape mismatch for tensor " + tensors[i].name + ": " +
						Tensor::shape_str(tensors[i].value.shape()) + " vs " +
						Tensor::shape_str(o.tensors[i].value.shape()));
		}
	}

	bool all_finite() const {
		for (const auto& t : tensors)
			for (double v : t.value.data())
				if (!std::isfinite(v))
					return false;
		return true;
	}

	friend bool operator==(const SeparatorParams& a, const SeparatorParams& b) {
		if (a.tensors.size() != b.tensors.size())
			return false;
		for (std::size_t i = 0; i < a.tensors.size(); ++i)
			if (a.tensors[i].name != b.tensors[i].name || !(a.tensors[i].value == b.tensors[i].value))
				return false;
		return true;
	}
};

namespace detail {

enum class Init { Conv, Zero, One, Slope };

struct Spec {
	std::string name;
	Tensor::Shape shape;
	Init init;
};

inline std::vector<Spec> layout(const SeparatorConfig& c) {
	const std::size_t n = c.n_filters, b = c.block_channels, k = c.kernel;
	std::vector<Spec> s;
	s.push_back({"encoder.weight", {n, 1, k}, Init::Conv});
	s.push_back({"bottleneck.norm.gamma", {n}, Init::One});
	s.push_back({"bottleneck.norm.beta", {n}, Init::Zero});
	s.push_back({"bottleneck.weight", {b, n, 1}, Init::Conv});
	s.push_back({"bottleneck.bias", {b}, Init::Zero});
	for (std::size_t r = 0; r < c.n_repeats; ++r) {
		for (std::size_t x = 0; x < c.n_blocks; ++x) {
			const std::string p = "blocks." + std::to_string(r * c.n_blocks + x) + ".";
			s.push_back({p + "in.weight", {b, b, 1}, Init::Conv});
			s.push_back({p + "in.bias", {b}, Init::Zero});
			s.push_back({p + "prelu1", {1}, Init::Slope});
			s.push_back({p + "norm1.gamma", {b}, Init::One});
			s.push_back({p + "norm1.beta", {b}, Init::Zero});
			s.push_back({p + "dw.weight", {b, 1, kDepthwiseKernel}, Init::Conv});
			s.push_back({p + "dw.bias", {b}, Init::Zero});
			s.push_back({p + "prelu2", {1}, Init::Slope});
			s.push_back({p + "norm2.gamma", {b}, Init::One});
			s.push_back({p + "norm2.beta", {b}, Init::Zero});
			s.push_back({p + "out.weight", {b, b, 1}, Init::Conv});
			s.push_back({p + "out.bias", {b}, Init::Zero});
		}
	}
	s.push_back({"mask.prelu", {1}, Init::Slope});
	s.push_back({"mask.weight", {kSources * n, b, 1}, Init::Conv});
	s.push_back({"mask.bias", {kSources * n}, Init::Zero});
	s.push_back({"decoder.weight", {n, 1, k}, Init::Conv});
	return s;
}

}  // namespace detail

/// Deterministic initialization: conv weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases and norm offsets 0, norm scales 1, PReLU slopes 0.25.
inline SeparatorParams init_params(const SeparatorConfig& config, std::uint64_t seed) {
	config.validate();
	SeparatorParams p;
	Rng rng(derive_seed(seed, {stream_tag("separator-init")}));
	for (auto& spec : detail::layout(config)) {
		Tensor t(spec.shape);
		switch (spec.init) {
		case detail::Init::Conv: {
			// fan_in of a [out, in, k] conv weight is in * k; the decoder's
			// weight is [in, out, k] and sees n_filters inputs per output sample.
			const bool decoder = spec.name == "decoder.weight";
			const double fan_in = decoder ? static_cast<double>(spec.shape[0] * spec.shape[2] / config.stride)
										  : static_cast<double>(spec.shape[1] * spec.shape[2]);
			const double bound = 1.0 / std::sqrt(fan_in);
			std::uniform_real_distribution<double> dist(-bound, bound);
			for (double& v : t.data())
				v = dist(rng);
			break;
		}
		case detail::Init::Zero: break;
		case detail::Init::One: t.fill(1.0); break;
		case detail::Init::Slope: t.fill(0.25); break;
		}
		p.tensors.push_back({spec.name, std::move(t), true});
	}
	return p;
}

/// Symmetric zero padding that aligns `length` to the encoder frame grid.
struct Padding {
	std::size_t left = 0;
	std::size_t right = 0;
};

inline Padding frame_padding(std::size_t length, const SeparatorConfig& c) {
	if (length < c.kernel)
		throw ShapeError("separator: input length " + std::to_string(length) + " shorter than encoder kernel " +
				std::to_string(c.kernel));
	const std::size_t total = (c.stride - (length - c.kernel) % c.stride) % c.stride;
	return {total / 2, total - total / 2};
}

struct SeparatorOutput {
	ag::Var est_s;
	ag::Var est_e;
	ag::Var masks;  ///< [2 * n_filters, frames], sigmoid outputs
};

/// Parameters bound to leaves of one tape.
class BoundSeparator {
public:
	BoundSeparator(const SeparatorConfig& config, const SeparatorParams& params, ag::Tape& tape)
		: config_(config) {
		config_.validate();
		const auto specs = detail::layout(config_);
		if (specs.size() != params.tensors.size())
			throw ShapeError("separator: parameter set does not match config (" +
					std::to_string(params.tensors.size()) + " tensors, expected " + std::to_string(specs.size()) + ")");
		vars_.reserve(specs.size());
		for (std::size_t i = 0; i < specs.size(); ++i) {
			const auto& t = params.tensors[i];
			if (t.name != specs[i].name || t.value.shape() != specs[i].shape)
				throw ShapeError("separator: tensor " + t.name + " " + Tensor::shape_str(t.value.shape()) +
						" does not match expected " + specs[i].name + " " + Tensor::shape_str(specs[i].shape));
			vars_.push_back(tape.leaf(t.value, t.trainable));
		}
	}

	/// Binds caller-owned leaves, one per parameter tensor in layout order.
	BoundSeparator(const SeparatorConfig& config, std::vector<ag::Var> leaves) : config_(config) {
		config_.validate();
		const auto specs = detail::layout(config_);
		if (specs.size() != leaves.size())
			throw ShapeError("separator: " + std::to_string(leaves.size()) + " leaves for " +
					std::to_string(specs.size()) + " parameter tensors");
		for (std::size_t i = 0; i < specs.size(); ++i)
			if (leaves[i].shape() != specs[i].shape)
				throw ShapeError("separator: leaf for " + specs[i].name + " has shape " +
						Tensor::shape_str(leaves[i].shape()) + ", expected " + Tensor::shape_str(specs[i].shape));
		vars_ = std::move(leaves);
	}

	const std::vector<ag::Var>& leaves() const noexcept { return vars_; }
	const SeparatorConfig& config() const noexcept { return config_; }

	/// mixture: [1, T] on the same tape. Both estimates are [1, T].
	SeparatorOutput forward(const ag::Var& mixture) const {
		using namespace ag;
		if (mixture.shape().size() != 2 || mixture.shape()[0] != 1)
			throw ShapeError("separator: mixture must be [1, T], got " + Tensor::shape_str(mixture.shape()));
		const std::size_t length = mixture.shape()[1];
		const Padding pad = frame_padding(length, config_);
		std::size_t i = 0;
		auto next = [&]() -> const Var& { return vars_[i++]; };

		Var x = (pad.left || pad.right) ? pad_cols(mixture, pad.left, pad.right) : mixture;
		const Var& enc_w = next();
		Var enc = relu(conv1d(x, enc_w, {config_.stride, 1, 0, 1}));

		const Var& bn_g = next();
		const Var& bn_b = next();
		const Var& bn_w = next();
		const Var& bn_bias = next();
		Var y = conv1d(global_layer_norm(enc, bn_g, bn_b), bn_w, bn_bias, {});

		for (std::size_t r = 0; r < config_.n_repeats; ++r) {
			for (std::size_t blk = 0; blk < config_.n_blocks; ++blk) {
				const Var& in_w = next();
				const Var& in_b = next();
				const Var& a1 = next();
				const Var& g1 = next();
				const Var& b1 = next();
				const Var& dw_w = next();
				const Var& dw_b = next();
				const Var& a2 = next();
				const Var& g2 = next();
				const Var& b2 = next();
				const Var& out_w = next();
				const Var& out_b = next();
				const std::size_t d = config_.dilation(blk);
				Var h = global_layer_norm(prelu(conv1d(y, in_w, in_b, {}), a1), g1, b1);
				h = conv1d(h, dw_w, dw_b, {1, d, d * (kDepthwiseKernel - 1) / 2, config_.block_channels});
				h = global_layer_norm(prelu(h, a2), g2, b2);
				y = add(y, conv1d(h, out_w, out_b, {}));
			}
		}
		const Var& m_a = next();
		const Var& m_w = next();
		const Var& m_b = next();
		const Var& dec_w = next();
		Var masks = sigmoid(conv1d(prelu(y, m_a), m_w, m_b, {}));

		const std::size_t n = config_.n_filters;
		auto decode = [&](std::size_t src) {
			Var masked = mul(enc, slice_rows(masks, src * n, n));
			return slice_cols(conv_transpose1d(masked, dec_w, config_.stride), pad.left, length);
		};
		return {decode(0), decode(1), masks};
	}

	/// Parameter gradients after backward(), in parameter order.
	std::vector<Tensor> gradients() const {
		std::vector<Tensor> g;
		g.reserve(vars_.size());
		for (const auto& v : vars_)
			g.push_back(v.grad());
		return g;
	}

private:
	SeparatorConfig config_;
	std::vector<ag::Var> vars_;
};

/// Inference without a recorded graph.
inline std::pair<std::vector<double>, std::vector<double>> separate(const SeparatorConfig& config,
		const SeparatorParams& params, std::span<const double> mixture) {
	ag::Tape tape(false);
	BoundSeparator net(config, params, tape);
	auto out = net.forward(tape.constant(Tensor::row(mixture)));
	return {out.est_s.value().storage(), out.est_e.value().storage()};
}

/// teacher <- gamma * teacher + (1 - gamma) * student, element-wise.
inline void ema_update(SeparatorParams& teacher, const SeparatorParams& student, double gamma) {
	if (!(gamma >= 0.0 && gamma < 1.0))
		throw ConfigError("ema_update: gamma must lie in [0, 1), got " + std::to_string(gamma));
	teacher.require_compatible(student);
	for (std::size_t i = 0; i < teacher.tensors.size(); ++i) {
		auto t = teacher.tensors[i].value.data();
		auto s = student.tensors[i].value.data();
		for (std::size_t j = 0; j < t.size(); ++j)
			t[j] = gamma == 0.0 ? s[j] : t[j] + (1.0 - gamma) * (s[j] - t[j]);
		teacher.tensors[i].trainable = false;
	}
}

}  // namespace mbt::sep
