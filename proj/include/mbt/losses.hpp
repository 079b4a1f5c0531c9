#pragma once

// Scale-invariant SNR, permutation-invariant pairing, and SI-SNR improvement.
//
// Every function here is written once against autograd Vars. Plain-array
// overloads run the same code on a non-recording tape, so training losses and
// evaluation metrics cannot drift apart.

#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "mbt/autograd.hpp"
#include "mbt/error.hpp"
#include "mbt/tensor.hpp"

namespace mbt::loss {

/// Numeric floor for energies and projection denominators.
inline constexpr double kEps = 1e-8;

enum class Permutation { Identity, Swapped };

/// Projection of `b` onto `a`: (a.b / max(|a|^2, eps)) * a.
inline ag::Var project(const ag::Var& a, const ag::Var& b) {
	if (a.size() != b.size())
		throw ShapeError("project: length mismatch " + Tensor::shape_str(a.shape()) + " vs " +
				Tensor::shape_str(b.shape()));
	ag::Var coef = ag::div(ag::dot(a, b), ag::clamp_min(ag::dot(a, a), kEps));
	return ag::scale(a, coef);
}

/// -10 log10((|P|^2 + eps) / (|est - P|^2 + eps)) with P = project(target, est).
/// Lower is better.
inline ag::Var si_snr_loss(const ag::Var& target, const ag::Var& est) {
	if (target.shape() != est.shape())
		throw ShapeError("si_snr_loss: shape mismatch " + Tensor::shape_str(target.shape()) + " vs " +
				Tensor::shape_str(est.shape()));
	ag::Var proj = project(target, est);
	ag::Var residual = ag::sub(est, proj);
	ag::Var num = ag::add_scalar(ag::dot(proj, proj), kEps);
	ag::Var den = ag::add_scalar(ag::dot(residual, residual), kEps);
	return ag::scale(ag::sub(ag::log10(num), ag::log10(den)), -10.0);
}

struct PitTerm {
	ag::Var loss;  ///< summed SI-SNR loss of the chosen pairing
	Permutation permutation = Permutation::Identity;
	std::array<double, 2> per_source_sisnr{};  ///< dB, ordered as the targets
};

/// Joint-permutation PIT over the two disjoint pairings; ties go to Identity.
inline PitTerm pit_loss(const ag::Var& est_a, const ag::Var& est_b, const ag::Var& target_s, const ag::Var& target_e) {
	ag::Var ss = si_snr_loss(target_s, est_a);
	ag::Var ee = si_snr_loss(target_e, est_b);
	ag::Var se = si_snr_loss(target_s, est_b);
	ag::Var es = si_snr_loss(target_e, est_a);
	ag::Var identity = ag::add(ss, ee);
	ag::Var swapped = ag::add(se, es);
	PitTerm r;
	if (identity.item() <= swapped.item()) {
		r.loss = identity;
		r.permutation = Permutation::Identity;
		r.per_source_sisnr = {-ss.item(), -ee.item()};
	} else {
		r.loss = swapped;
		r.permutation = Permutation::Swapped;
		r.per_source_sisnr = {-se.item(), -es.item()};
	}
	return r;
}

/// The literal per-target minimum, which may assign one estimate to both
/// targets. Diagnostic only; training uses pit_loss().
inline ag::Var independent_min_loss(const ag::Var& est_a, const ag::Var& est_b, const ag::Var& target_s,
		const ag::Var& target_e) {
	auto pick = [](const ag::Var& x, const ag::Var& y) { return x.item() <= y.item() ? x : y; };
	return ag::add(pick(si_snr_loss(target_s, est_a), si_snr_loss(target_s, est_b)),
			pick(si_snr_loss(target_e, est_a), si_snr_loss(target_e, est_b)));
}

// ---------------------------------------------------------------------------
// Plain-array entry points

using Pair = std::pair<std::span<const double>, std::span<const double>>;

struct PitResult {
	double loss = 0.0;
	Permutation permutation = Permutation::Identity;
	std::array<double, 2> per_source_sisnr{};
};

namespace detail {

inline void require_equal_lengths(std::initializer_list<std::size_t> lengths, const char* op) {
	const std::size_t first = *lengths.begin();
	for (std::size_t n : lengths)
		if (n != first)
			throw ShapeError(std::string(op) + ": length mismatch");
}

}  // namespace detail

inline std::vector<double> project(std::span<const double> a, std::span<const double> b) {
	detail::require_equal_lengths({a.size(), b.size()}, "project");
	ag::Tape t(false);
	return project(t.constant(Tensor::row(a)), t.constant(Tensor::row(b))).value().storage();
}

inline double si_snr_loss(std::span<const double> target, std::span<const double> est) {
	detail::require_equal_lengths({target.size(), est.size()}, "si_snr_loss");
	ag::Tape t(false);
	return si_snr_loss(t.constant(Tensor::row(target)), t.constant(Tensor::row(est))).item();
}

/// SI-SNR in dB (higher is better).
inline double si_snr(std::span<const double> target, std::span<const double> est) {
	return -si_snr_loss(target, est);
}

inline PitResult pit_loss(const Pair& est, const Pair& targets) {
	detail::require_equal_lengths(
			{est.first.size(), est.second.size(), targets.first.size(), targets.second.size()}, "pit_loss");
	ag::Tape t(false);
	PitTerm term = pit_loss(t.constant(Tensor::row(est.first)), t.constant(Tensor::row(est.second)),
			t.constant(Tensor::row(targets.first)), t.constant(Tensor::row(targets.second)));
	return {term.loss.item(), term.permutation, term.per_source_sisnr};
}

/// Mean over the two sources of SI-SNR(target, estimate) - SI-SNR(target, mixture),
/// with estimates paired to targets by PIT.
inline double si_snri(const Pair& targets, const Pair& estimates, std::span<const double> mixture) {
	detail::require_equal_lengths({targets.first.size(), targets.second.size(), estimates.first.size(),
			estimates.second.size(), mixture.size()}, "si_snri");
	const PitResult pit = pit_loss(estimates, targets);
	const double base_s = si_snr(targets.first, mixture);
	const double base_e = si_snr(targets.second, mixture);
	return 0.5 * ((pit.per_source_sisnr[0] - base_s) + (pit.per_source_sisnr[1] - base_e));
}

}  // namespace mbt::loss
