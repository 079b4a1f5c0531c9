#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mbt/error.hpp"
#include "mbt/separator.hpp"
#include "mbt/tensor.hpp"

namespace mbt::train {

struct AdamConfig {
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
	double clip_norm = 5.0;  ///< global gradient-norm ceiling; <= 0 disables clipping
};

struct AdamState {
	std::vector<Tensor> m;
	std::vector<Tensor> v;
	std::uint64_t step = 0;
	std::size_t skipped = 0;  ///< steps dropped for non-finite gradients
};

struct AdamStepInfo {
	bool applied = false;
	double grad_norm = 0.0;
	double clip_scale = 1.0;
};

/// Bias-corrected Adam on the trainable tensors of `params`, after scaling
/// the whole gradient down to at most `clip_norm` in global L2 norm.
inline AdamStepInfo adam_step(sep::SeparatorParams& params, const std::vector<Tensor>& grads, AdamState& state,
		const AdamConfig& cfg) {
	if (grads.size() != params.tensors.size())
		throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
				std::to_string(params.tensors.size()) + " tensors");
	double sq = 0.0;
	for (std::size_t i = 0; i < grads.size(); ++i) {
		if (grads[i].shape() != params.tensors[i].value.shape())
			throw ShapeError("adam_step: gradient shape " + Tensor::shape_str(grads[i].shape()) + " for tensor " +
					params.tensors[i].name + " " + Tensor::shape_str(params.tensors[i].value.shape()));
		if (!params.tensors[i].trainable)
			continue;
		for (double g : grads[i].data())
			sq += g * g;
	}
	AdamStepInfo info;
	info.grad_norm = std::sqrt(sq);
	if (!std::isfinite(info.grad_norm)) {
		++state.skipped;
		return info;
	}
	if (cfg.clip_norm > 0.0 && info.grad_norm > cfg.clip_norm)
		info.clip_scale = cfg.clip_norm / info.grad_norm;

	if (state.m.empty()) {
		for (const auto& t : params.tensors) {
			state.m.emplace_back(t.value.shape());
			state.v.emplace_back(t.value.shape());
		}
	}
	++state.step;
	const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
	const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
	for (std::size_t i = 0; i < grads.size(); ++i) {
		auto& t = params.tensors[i];
		if (!t.trainable)
			continue;
		auto w = t.value.data();
		auto g = grads[i].data();
		auto m = state.m[i].data();
		auto v = state.v[i].data();
		for (std::size_t j = 0; j < w.size(); ++j) {
			const double gj = g[j] * info.clip_scale;
			m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
			v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
			w[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
		}
	}
	info.applied = true;
	return info;
}

}  // namespace mbt::train
