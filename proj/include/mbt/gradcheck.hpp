#pragma once

// Central finite-difference checks of every autograd primitive and of the
// separator + PIT SI-SNR composition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mbt/autograd.hpp"
#include "mbt/losses.hpp"
#include "mbt/rng.hpp"
#include "mbt/separator.hpp"
#include "mbt/tensor.hpp"

namespace mbt::gradcheck {

/// Builds a scalar loss from leaves bound to `inputs` (same order).
using LossFn = std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>&)>;

struct Case {
	std::string name;
	std::vector<Tensor> inputs;
	LossFn loss;
};

struct CaseReport {
	std::string name;
	double max_rel_error = 0.0;
	std::size_t checked = 0;
	bool passed = false;
};

struct Options {
	double step = 1e-5;
	double tolerance = 1e-4;
	/// Added to the denominator so exactly-zero gradients do not divide by zero.
	double floor = 1e-8;
	/// Upper bound on coordinates probed per case (0 = all).
	std::size_t max_coords = 0;
	std::uint64_t seed = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
	return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + floor);
}

inline CaseReport run_case(const Case& c, const Options& opt) {
	std::vector<Tensor> inputs = c.inputs;
	auto evaluate = [&](bool record, std::vector<Tensor>* grads) {
		ag::Tape tape(record);
		std::vector<ag::Var> leaves;
		for (const auto& t : inputs)
			leaves.push_back(tape.leaf(t));
		ag::Var loss = c.loss(tape, leaves);
		if (record) {
			tape.backward(loss);
			grads->clear();
			for (const auto& l : leaves)
				grads->push_back(l.grad());
		}
		return loss.item();
	};
	std::vector<Tensor> analytic;
	evaluate(true, &analytic);

	std::vector<std::pair<std::size_t, std::size_t>> coords;
	for (std::size_t i = 0; i < inputs.size(); ++i)
		for (std::size_t j = 0; j < inputs[i].size(); ++j)
			coords.emplace_back(i, j);
	if (opt.max_coords && coords.size() > opt.max_coords) {
		Rng rng(derive_seed(opt.seed, {stream_tag("gradcheck-coords")}));
		std::shuffle(coords.begin(), coords.end(), rng);
		coords.resize(opt.max_coords);
	}

	CaseReport r{c.name, 0.0, coords.size(), true};
	for (auto [i, j] : coords) {
		const double saved = inputs[i][j];
		inputs[i][j] = saved + opt.step;
		const double up = evaluate(false, nullptr);
		inputs[i][j] = saved - opt.step;
		const double down = evaluate(false, nullptr);
		inputs[i][j] = saved;
		const double numeric = (up - down) / (2.0 * opt.step);
		const double err = relative_error(analytic[i][j], numeric, opt.floor);
		if (!(err <= r.max_rel_error))
			r.max_rel_error = std::isnan(err) ? INFINITY : std::max(r.max_rel_error, err);
	}
	r.passed = r.max_rel_error < opt.tolerance;
	return r;
}

namespace detail {

/// Values uniform in +-[lo, hi], kept away from zero so kinked primitives
/// are probed away from their kink.
inline Tensor random_tensor(Tensor::Shape shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
	Tensor t(std::move(shape));
	std::uniform_real_distribution<double> mag(lo, hi);
	std::bernoulli_distribution sign(0.5);
	for (double& v : t.data())
		v = sign(rng) ? mag(rng) : -mag(rng);
	return t;
}

inline Tensor positive_tensor(Tensor::Shape shape, Rng& rng, double lo = 0.5, double hi = 2.0) {
	Tensor t(std::move(shape));
	std::uniform_real_distribution<double> d(lo, hi);
	for (double& v : t.data())
		v = d(rng);
	return t;
}

/// Reduces a tensor output to a scalar with fixed random weights, so every
/// output element carries a distinct upstream gradient.
inline ag::Var project_out(ag::Tape& tape, const ag::Var& y, std::uint64_t seed) {
	Rng rng(seed);
	return ag::dot(y, tape.constant(random_tensor(y.shape(), rng)));
}

}  // namespace detail

/// One case per primitive (several for the convolution variants).
inline std::vector<Case> primitive_cases(std::uint64_t seed) {
	using namespace ag;
	using detail::project_out;
	Rng rng(derive_seed(seed, {stream_tag("gradcheck-inputs")}));
	auto rnd = [&](Tensor::Shape s) { return detail::random_tensor(std::move(s), rng); };
	auto pos = [&](Tensor::Shape s) { return detail::positive_tensor(std::move(s), rng); };
	const std::uint64_t w = derive_seed(seed, {stream_tag("gradcheck-weights")});
	std::vector<Case> cs;
	auto unary = [&](std::string name, Tensor x, std::function<Var(const Var&)> f) {
		cs.push_back({std::move(name), {std::move(x)},
				[f, w](Tape& t, const std::vector<Var>& v) { return project_out(t, f(v[0]), w); }});
	};
	auto binary = [&](std::string name, Tensor a, Tensor b, std::function<Var(const Var&, const Var&)> f) {
		cs.push_back({std::move(name), {std::move(a), std::move(b)},
				[f, w](Tape& t, const std::vector<Var>& v) { return project_out(t, f(v[0], v[1]), w); }});
	};

	binary("add", rnd({3, 5}), rnd({3, 5}), [](const Var& a, const Var& b) { return add(a, b); });
	binary("sub", rnd({3, 5}), rnd({3, 5}), [](const Var& a, const Var& b) { return sub(a, b); });
	binary("mul", rnd({3, 5}), rnd({3, 5}), [](const Var& a, const Var& b) { return mul(a, b); });
	binary("div", rnd({3, 5}), pos({3, 5}), [](const Var& a, const Var& b) { return div(a, b); });
	unary("scale", rnd({2, 7}), [](const Var& a) { return scale(a, -1.7); });
	binary("scale_by_node", rnd({2, 7}), rnd({1}), [](const Var& a, const Var& s) { return scale(a, s); });
	unary("add_scalar", rnd({4}), [](const Var& a) { return add_scalar(a, 0.3); });
	unary("clamp_min", rnd({3, 4}), [](const Var& a) { return clamp_min(a, 0.05); });
	unary("relu", rnd({3, 6}), [](const Var& a) { return relu(a); });
	binary("prelu", rnd({3, 6}), rnd({1}), [](const Var& a, const Var& s) { return prelu(a, s); });
	unary("sigmoid", rnd({3, 6}), [](const Var& a) { return sigmoid(scale(a, 3.0)); });
	unary("square", rnd({5}), [](const Var& a) { return square(a); });
	unary("sqrt", pos({5}), [](const Var& a) { return sqrt(a); });
	unary("log10", pos({5}), [](const Var& a) { return log10(a); });
	unary("sum", rnd({3, 4}), [](const Var& a) { return scale(sum(a), 1.3); });
	unary("mean", rnd({3, 4}), [](const Var& a) { return scale(mean(a), 1.3); });
	binary("dot", rnd({2, 6}), rnd({2, 6}), [](const Var& a, const Var& b) { return dot(a, b); });
	unary("pad_cols", rnd({2, 5}), [](const Var& a) { return pad_cols(a, 2, 3); });
	unary("slice_cols", rnd({3, 8}), [](const Var& a) { return slice_cols(a, 2, 4); });
	unary("slice_rows", rnd({4, 3}), [](const Var& a) { return slice_rows(a, 1, 2); });

	auto conv = [&](std::string name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t len,
						ConvOptions o, bool with_bias) {
		std::vector<Tensor> in{rnd({cin, len}), rnd({cout, cin / o.groups, k})};
		if (with_bias)
			in.push_back(rnd({cout}));
		cs.push_back({std::move(name), std::move(in), [o, with_bias, w](Tape& t, const std::vector<Var>& v) {
						  std::optional<Var> b;
						  if (with_bias)
							  b = v[2];
						  return project_out(t, conv1d(v[0], v[1], b, o), w);
					  }});
	};
	conv("conv1d", 2, 3, 3, 8, {}, true);
	conv("conv1d_stride", 1, 4, 4, 14, {2, 1, 0, 1}, false);
	conv("conv1d_dilation_padding", 3, 2, 3, 9, {1, 2, 2, 1}, true);
	conv("conv1d_groups", 4, 4, 3, 7, {1, 1, 1, 2}, true);
	conv("conv1d_depthwise", 3, 3, 3, 10, {1, 4, 4, 3}, true);
	conv("conv1d_pointwise", 3, 5, 1, 6, {}, true);
	binary("conv_transpose1d", rnd({3, 5}), rnd({3, 2, 4}),
			[](const Var& x, const Var& wt) { return conv_transpose1d(x, wt, 2); });
	cs.push_back({"global_layer_norm", {rnd({3, 6}), rnd({3}), rnd({3})},
			[w](Tape& t, const std::vector<Var>& v) { return project_out(t, global_layer_norm(v[0], v[1], v[2]), w); }});
	cs.push_back({"si_snr_loss", {rnd({1, 16}), rnd({1, 16})},
			[](Tape&, const std::vector<Var>& v) { return loss::si_snr_loss(v[0], v[1]); }});
	cs.push_back({"pit_loss", {rnd({1, 12}), rnd({1, 12}), rnd({1, 12}), rnd({1, 12})},
			[](Tape&, const std::vector<Var>& v) { return loss::pit_loss(v[0], v[1], v[2], v[3]).loss; }});

	// A small three-layer network: strided conv, PReLU, gLN, conv, sigmoid, conv.
	cs.push_back({"three_layer_net",
			{rnd({1, 40}), rnd({8, 1, 4}), rnd({8}), rnd({1}), rnd({8}), rnd({8}), rnd({8, 8, 3}), rnd({8}),
					rnd({2, 8, 1}), rnd({2})},
			[w](Tape& t, const std::vector<Var>& v) {
				Var h = prelu(conv1d(v[0], v[1], v[2], {2, 1, 0, 1}), v[3]);
				h = global_layer_norm(h, v[4], v[5]);
				h = sigmoid(conv1d(h, v[6], v[7], {1, 1, 1, 1}));
				return project_out(t, conv1d(h, v[8], v[9], {}), w);
			}});
	return cs;
}

/// Tiny separator config for the composition check.
inline sep::SeparatorConfig composition_config() {
	sep::SeparatorConfig c;
	c.n_filters = 4;
	c.kernel = 4;
	c.stride = 2;
	c.block_channels = 4;
	c.n_blocks = 2;
	c.n_repeats = 1;
	return c;
}

/// Separator + PIT SI-SNR at `points` random parameter/input draws. Every
/// parameter tensor and the mixture are differentiated.
inline std::vector<Case> composition_cases(std::uint64_t seed, std::size_t points = 10) {
	const sep::SeparatorConfig config = composition_config();
	std::vector<Case> cs;
	for (std::size_t p = 0; p < points; ++p) {
		Rng rng(derive_seed(seed, {stream_tag("gradcheck-composition"), p}));
		const sep::SeparatorParams params = sep::init_params(config, rng());
		std::vector<Tensor> inputs;
		for (const auto& t : params.tensors)
			inputs.push_back(t.value);
		// Slopes, affine terms and biases move off their init values so every branch is exercised.
		for (std::size_t i = 0; i < inputs.size(); ++i) {
			const std::string& name = params.tensors[i].name;
			if (name.find("weight") == std::string::npos)
				for (double& v : inputs[i].data())
					v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
		}
		const std::size_t len = 21;
		for (int k = 0; k < 3; ++k)
			inputs.push_back(detail::random_tensor({1, len}, rng));
		const std::size_t n_params = params.tensors.size();
		cs.push_back({"separator_pit_composition[" + std::to_string(p) + "]", std::move(inputs),
				[config, n_params](ag::Tape&, const std::vector<ag::Var>& v) {
					sep::BoundSeparator net(config, std::vector<ag::Var>(v.begin(), v.begin() + n_params));
					auto out = net.forward(v[n_params]);
					return loss::pit_loss(out.est_s, out.est_e, v[n_params + 1], v[n_params + 2]).loss;
				}});
	}
	return cs;
}

/// Fixture with a deliberately wrong adjoint (3x instead of 2x), used to
/// prove the harness catches a broken primitive.
inline Case corrupted_adjoint_case(std::uint64_t seed) {
	Rng rng(derive_seed(seed, {stream_tag("gradcheck-fault")}));
	return {"square[corrupted-adjoint]", {detail::random_tensor({5}, rng)},
			[](ag::Tape& tape, const std::vector<ag::Var>& v) {
				const ag::Var& x = v[0];
				Tensor out = x.value();
				for (double& e : out.data())
					e *= e;
				ag::Node* px = x.node();
				ag::Var y = tape.emit(std::move(out), {x}, [px](const Tensor& g) {
					ag::detail::accumulate(px, g, [px](std::size_t i, double gv) { return 3.0 * px->value[i] * gv; });
				});
				return ag::sum(y);
			}};
}

/// Every primitive case plus the composition cases, optionally followed by
/// the corrupted fixture.
inline std::vector<CaseReport> run_suite(const Options& opt, bool inject_fault = false,
		std::size_t composition_points = 10) {
	std::vector<Case> cases = primitive_cases(opt.seed);
	for (auto& c : composition_cases(opt.seed, composition_points))
		cases.push_back(std::move(c));
	if (inject_fault)
		cases.push_back(corrupted_adjoint_case(opt.seed));
	std::vector<CaseReport> reports;
	for (const auto& c : cases)
		reports.push_back(run_case(c, opt));
	return reports;
}

}  // namespace mbt::gradcheck
