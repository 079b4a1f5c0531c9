#pragma once

// Mixup / Breakdown operators and the single-step objectives of the five
// training strategies: ERM, mixup, mean teacher (MT), interpolation
// consistency training (ICT) and mixup-breakdown training (MBT).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mbt/autograd.hpp"
#include "mbt/error.hpp"
#include "mbt/losses.hpp"
#include "mbt/rng.hpp"
#include "mbt/signal.hpp"

namespace mbt::ssl {

enum class Strategy { ERM, Mixup, MT, ICT, MBT };

inline std::string_view strategy_name(Strategy s) {
	switch (s) {
	case Strategy::ERM: return "erm";
	case Strategy::Mixup: return "mixup";
	case Strategy::MT: return "mt";
	case Strategy::ICT: return "ict";
	case Strategy::MBT: return "mbt";
	}
	return "?";
}

inline Strategy parse_strategy(std::string_view s) {
	for (Strategy v : {Strategy::ERM, Strategy::Mixup, Strategy::MT, Strategy::ICT, Strategy::MBT})
		if (strategy_name(v) == s)
			return v;
	throw ConfigError("unknown strategy '" + std::string(s) + "' (valid: erm, mixup, mt, ict, mbt)");
}

inline bool uses_teacher(Strategy s) { return s == Strategy::MT || s == Strategy::ICT || s == Strategy::MBT; }

struct StrategyConfig {
	Strategy strategy = Strategy::MBT;
	double alpha = 1.0;    ///< Beta(alpha, alpha) concentration for lambda
	double gamma = 0.999;  ///< EMA decay of the teacher
	int t_max = 100;       ///< ramp horizon in epochs
	/// Include labeled mixtures in the consistency pool. With no unlabeled
	/// data this turns MBT into a purely supervised augmentation.
	bool consistency_on_labeled = true;
	/// Extra multiplier on the ramp weight; 0 disables the consistency term.
	double consistency_scale = 1.0;

	void validate() const {
		if (!(alpha > 0.0))
			throw ConfigError("alpha must be > 0");
		if (!(gamma >= 0.0 && gamma < 1.0))
			throw ConfigError("gamma must lie in [0, 1)");
		if (t_max < 1)
			throw ConfigError("t_max must be >= 1");
		if (!(consistency_scale >= 0.0))
			throw ConfigError("consistency_scale must be >= 0");
	}
};

/// One Beta(alpha, alpha) draw via two Gamma variates.
inline double sample_lambda(double alpha, Rng& rng) {
	if (!(alpha > 0.0))
		throw ConfigError("sample_lambda: alpha must be > 0, got " + std::to_string(alpha));
	std::gamma_distribution<double> g(alpha, 1.0);
	for (;;) {
		const double x = g(rng);
		const double y = g(rng);
		if (x + y > 0.0)
			return x / (x + y);
	}
}

/// lam * a + (1 - lam) * b
inline std::vector<double> mix(std::span<const double> a, std::span<const double> b, double lam) {
	if (a.size() != b.size())
		throw ShapeError("mix: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
	std::vector<double> out(a.size());
	for (std::size_t i = 0; i < a.size(); ++i)
		out[i] = lam * a[i] + (1.0 - lam) * b[i];
	return out;
}

/// (lam * a, (1 - lam) * b)
inline std::pair<std::vector<double>, std::vector<double>> breakdown(std::span<const double> a,
		std::span<const double> b, double lam) {
	if (a.size() != b.size())
		throw ShapeError("breakdown: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
	std::pair<std::vector<double>, std::vector<double>> out{std::vector<double>(a.size()), std::vector<double>(a.size())};
	for (std::size_t i = 0; i < a.size(); ++i) {
		out.first[i] = lam * a[i];
		out.second[i] = (1.0 - lam) * b[i];
	}
	return out;
}

/// Consistency ramp exp(t / t_max - 1) for epoch t in [1, t_max].
inline double ramp(int t, int t_max) {
	if (t_max < 1 || t < 1 || t > t_max)
		throw ConfigError("ramp: epoch " + std::to_string(t) + " outside [1, " + std::to_string(t_max) + "]");
	return std::exp(static_cast<double>(t) / static_cast<double>(t_max) - 1.0);
}

// ---------------------------------------------------------------------------
// Model interfaces
//
// A student maps a [1, T] mixture Var to two estimate Vars on the same tape.
// A teacher maps raw samples to two estimate arrays; whatever it computes is
// a constant as far as the student's tape is concerned.

struct SourcePair {
	ag::Var first;
	ag::Var second;
};

using Estimates = std::pair<std::vector<double>, std::vector<double>>;

template <class F>
concept StudentModel = requires(const F& f, const ag::Var& x) {
	{ f(x) } -> std::convertible_to<SourcePair>;
};

template <class F>
concept TeacherModel = requires(const F& f, std::span<const double> x) {
	{ f(x) } -> std::convertible_to<Estimates>;
};

/// Consistency term given precomputed teacher estimates.
template <StudentModel Student>
ag::Var mbt_consistency_from_estimates(ag::Tape& tape, const Student& student, const Estimates& teacher_out, double lam) {
	const auto pseudo_mix = mix(teacher_out.first, teacher_out.second, lam);
	const auto [target_a, target_b] = breakdown(teacher_out.first, teacher_out.second, lam);
	SourcePair est = student(tape.constant(Tensor::row(pseudo_mix)));
	return loss::pit_loss(est.first, est.second, tape.constant(Tensor::row(target_a)),
			tape.constant(Tensor::row(target_b))).loss;
}

/// PIT SI-SNR loss of student(Mix(teacher(x))) against Break(teacher(x)).
/// Gradients reach the student only.
template <StudentModel Student, TeacherModel Teacher>
ag::Var mbt_consistency_term(ag::Tape& tape, const Student& student, const Teacher& teacher,
		std::span<const double> x, double lam) {
	return mbt_consistency_from_estimates(tape, student, teacher(x), lam);
}

/// Mean-teacher consistency: PIT SI-SNR between student(x) and teacher(x).
template <StudentModel Student>
ag::Var mt_consistency_term(ag::Tape& tape, const Student& student, std::span<const double> x,
		const Estimates& teacher_out) {
	SourcePair est = student(tape.constant(Tensor::row(x)));
	return loss::pit_loss(est.first, est.second, tape.constant(Tensor::row(teacher_out.first)),
			tape.constant(Tensor::row(teacher_out.second))).loss;
}

/// ICT consistency for one pair: squared error between student(Mix(x_j, x_k))
/// and Mix(teacher(x_j), teacher(x_k)), minimized over the two output pairings.
template <StudentModel Student>
ag::Var ict_consistency_term(ag::Tape& tape, const Student& student, std::span<const double> xj,
		std::span<const double> xk, const Estimates& tj, const Estimates& tk, double lam) {
	const auto input = mix(xj, xk, lam);
	ag::Var t1 = tape.constant(Tensor::row(mix(tj.first, tk.first, lam)));
	ag::Var t2 = tape.constant(Tensor::row(mix(tj.second, tk.second, lam)));
	SourcePair est = student(tape.constant(Tensor::row(input)));
	auto sq = [](const ag::Var& a, const ag::Var& b) { return ag::sum(ag::square(ag::sub(a, b))); };
	ag::Var identity = ag::add(sq(est.first, t1), sq(est.second, t2));
	ag::Var swapped = ag::add(sq(est.first, t2), sq(est.second, t1));
	return identity.item() <= swapped.item() ? identity : swapped;
}

// ---------------------------------------------------------------------------
// Strategy step

struct StepBatch {
	std::vector<const dsp::LabeledExample*> labeled;
	std::vector<const dsp::UnlabeledExample*> unlabeled;
	int epoch = 1;
};

struct StepResult {
	ag::Var total;
	double correctness = 0.0;
	double consistency = 0.0;  ///< mean consistency term, before weighting
	double weight = 0.0;       ///< consistency_scale * ramp(epoch, t_max)
	std::size_t consistency_terms = 0;
};

namespace detail {

inline ag::Var mean_of(ag::Tape& tape, const std::vector<ag::Var>& terms) {
	if (terms.empty())
		return tape.constant(Tensor({1}, 0.0));
	ag::Var acc = terms.front();
	for (std::size_t i = 1; i < terms.size(); ++i)
		acc = ag::add(acc, terms[i]);
	return ag::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

inline std::vector<std::span<const double>> consistency_pool(const StrategyConfig& cfg, const StepBatch& batch) {
	std::vector<std::span<const double>> pool;
	if (cfg.consistency_on_labeled)
		for (const auto* ex : batch.labeled)
			pool.push_back(ex->mixture.samples);
	for (const auto* ex : batch.unlabeled)
		pool.push_back(ex->mixture.samples);
	return pool;
}

}  // namespace detail

/// Builds the step objective on `tape`. `rng` supplies mixup pairings and
/// lambdas; ERM draws nothing from it.
template <StudentModel Student, TeacherModel Teacher>
StepResult strategy_step(const StrategyConfig& cfg, const StepBatch& batch, ag::Tape& tape, const Student& student,
		const Teacher& teacher, Rng& rng) {
	cfg.validate();
	if (batch.labeled.empty())
		throw ConfigError(std::string("strategy ") + std::string(strategy_name(cfg.strategy)) +
				" needs a non-empty labeled batch");
	if (batch.epoch < 1 || batch.epoch > cfg.t_max)
		throw ConfigError("step epoch " + std::to_string(batch.epoch) + " outside [1, t_max]");

	auto row = [&tape](std::span<const double> x) { return tape.constant(Tensor::row(x)); };

	// Correctness term.
	std::vector<ag::Var> sup;
	sup.reserve(batch.labeled.size());
	if (cfg.strategy == Strategy::Mixup) {
		std::vector<std::size_t> partner(batch.labeled.size());
		std::iota(partner.begin(), partner.end(), std::size_t{0});
		std::shuffle(partner.begin(), partner.end(), rng);
		for (std::size_t i = 0; i < batch.labeled.size(); ++i) {
			const auto& a = *batch.labeled[i];
			const auto& b = *batch.labeled[partner[i]];
			const double lam = sample_lambda(cfg.alpha, rng);
			SourcePair est = student(row(mix(a.mixture.samples, b.mixture.samples, lam)));
			sup.push_back(loss::pit_loss(est.first, est.second, row(mix(a.source_s.samples, b.source_s.samples, lam)),
					row(mix(a.source_e.samples, b.source_e.samples, lam))).loss);
		}
	} else {
		for (const auto* ex : batch.labeled) {
			SourcePair est = student(row(ex->mixture.samples));
			sup.push_back(loss::pit_loss(est.first, est.second, row(ex->source_s.samples), row(ex->source_e.samples)).loss);
		}
	}
	StepResult r;
	ag::Var correctness = detail::mean_of(tape, sup);
	r.correctness = correctness.item();
	r.total = correctness;
	if (!uses_teacher(cfg.strategy))
		return r;

	// Consistency term.
	std::vector<ag::Var> cons;
	if (cfg.strategy == Strategy::ICT) {
		std::vector<std::span<const double>> pool;
		for (const auto* ex : batch.unlabeled)
			pool.push_back(ex->mixture.samples);
		if (pool.empty() && cfg.consistency_on_labeled)
			for (const auto* ex : batch.labeled)
				pool.push_back(ex->mixture.samples);
		std::vector<Estimates> t_out;
		t_out.reserve(pool.size());
		for (auto x : pool)
			t_out.push_back(teacher(x));
		std::vector<std::size_t> partner(pool.size());
		std::iota(partner.begin(), partner.end(), std::size_t{0});
		std::shuffle(partner.begin(), partner.end(), rng);
		for (std::size_t j = 0; j < pool.size(); ++j) {
			const std::size_t k = partner[j];
			const double lam = sample_lambda(cfg.alpha, rng);
			cons.push_back(ict_consistency_term(tape, student, pool[j], pool[k], t_out[j], t_out[k], lam));
		}
	} else {
		for (auto x : detail::consistency_pool(cfg, batch)) {
			if (cfg.strategy == Strategy::MT) {
				cons.push_back(mt_consistency_term(tape, student, x, teacher(x)));
			} else {
				const double lam = sample_lambda(cfg.alpha, rng);
				cons.push_back(mbt_consistency_term(tape, student, teacher, x, lam));
			}
		}
	}
	r.consistency_terms = cons.size();
	r.weight = cfg.consistency_scale * ramp(batch.epoch, cfg.t_max);
	if (cons.empty())
		return r;
	ag::Var consistency = detail::mean_of(tape, cons);
	r.consistency = consistency.item();
	r.total = ag::add(correctness, ag::scale(consistency, r.weight));
	return r;
}

}  // namespace mbt::ssl
