#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mbt/losses.hpp"
#include "test_util.hpp"

using namespace mbt;
using namespace mbt::loss;

namespace {

using Vec = std::vector<double>;

// Plain-loop reference, sharing no code with the library.
double ref_si_snr(const Vec& target, const Vec& est) {
	double ab = 0.0, aa = 0.0;
	for (std::size_t i = 0; i < target.size(); ++i) {
		ab += target[i] * est[i];
		aa += target[i] * target[i];
	}
	const double c = ab / std::max(aa, 1e-8);
	double pp = 0.0, rr = 0.0;
	for (std::size_t i = 0; i < target.size(); ++i) {
		const double p = c * target[i];
		pp += p * p;
		rr += (est[i] - p) * (est[i] - p);
	}
	return 10.0 * std::log10((pp + 1e-8) / (rr + 1e-8));
}

// Exhaustive search over both assignments of estimates to targets.
double ref_pit_loss(const Vec& a, const Vec& b, const Vec& s, const Vec& e) {
	const Vec* est[2] = {&a, &b};
	double best = std::numeric_limits<double>::infinity();
	for (int first = 0; first < 2; ++first)
		best = std::min(best, -ref_si_snr(s, *est[first]) - ref_si_snr(e, *est[1 - first]));
	return best;
}

Vec scaled(const Vec& v, double k) {
	Vec out(v);
	for (double& x : out)
		x *= k;
	return out;
}

Vec plus(const Vec& a, const Vec& b) {
	Vec out(a);
	for (std::size_t i = 0; i < a.size(); ++i)
		out[i] += b[i];
	return out;
}

}  // namespace

TEST(Project, OntoAxis) {
	const Vec a{1, 0}, b{3, 4};
	const auto p = project(a, b);
	EXPECT_DOUBLE_EQ(p[0], 3.0);
	EXPECT_DOUBLE_EQ(p[1], 0.0);
}

TEST(Project, ZeroTargetGivesZero) {
	const Vec a{0, 0, 0}, b{1, 2, 3};
	for (double v : project(a, b))
		EXPECT_EQ(v, 0.0);
}

TEST(SiSnr, OrthogonalHalfEnergyResidual) {
	// est = target + orthogonal residual of twice the energy.
	const Vec target{1, 0}, est{1, std::sqrt(2.0)};
	EXPECT_NEAR(si_snr_loss(target, est), 3.0103, 1e-4);
}

TEST(SiSnr, QuarterAmplitudeInterferenceIsMinusSixDb) {
	const Vec s{1, 0, 0, 0}, e{0, 2, 0, 0};
	// target energy 1, residual energy 4 -> -6.0206 dB
	EXPECT_NEAR(si_snr(s, plus(s, e)), -6.0206, 1e-4);
}

TEST(SiSnr, PerfectEstimateSaturatesAtEpsilonFloor) {
	const auto s = test::random_vector(200, 3, 0.1);
	const double v = si_snr(s, s);
	EXPECT_GT(v, 70.0);
	EXPECT_NEAR(v, ref_si_snr(s, s), 1e-9);
}

TEST(SiSnr, MatchesReferenceOnRandomSignals) {
	for (std::uint64_t k = 0; k < 50; ++k) {
		const auto t = test::random_vector(64 + k, k);
		const auto e = plus(scaled(t, 0.7), test::random_vector(64 + k, 1000 + k, 0.3));
		EXPECT_NEAR(si_snr(t, e), ref_si_snr(t, e), 1e-9);
	}
}

TEST(SiSnr, InvariantToScaleOfEitherArgument) {
	// Unit-scale 8000-sample signals; the energy floor stays far below both energies.
	std::mt19937_64 rng(4);
	std::uniform_real_distribution<double> log_gain(std::log(0.1), std::log(10.0));
	for (int trial = 0; trial < 30; ++trial) {
		const auto t = test::random_vector(8000, trial);
		const auto e = plus(t, test::random_vector(8000, 500 + trial));
		const double base = si_snr(t, e);
		const double c = std::exp(log_gain(rng)), k = std::exp(log_gain(rng));
		EXPECT_NEAR(si_snr(t, scaled(e, c)), base, 1e-9);
		EXPECT_NEAR(si_snr(scaled(t, k), e), base, 1e-9);
		EXPECT_NEAR(si_snr(t, scaled(e, -c)), base, 1e-9);
	}
}

TEST(SiSnr, LengthMismatchRejected) {
	EXPECT_THROW(si_snr(Vec(4, 1.0), Vec(5, 1.0)), ShapeError);
	EXPECT_THROW(project(Vec(4, 1.0), Vec(3, 1.0)), ShapeError);
}

TEST(Pit, AgreesWithExhaustiveSearch) {
	for (std::uint64_t k = 0; k < 40; ++k) {
		const auto s = test::random_vector(80, 10 * k);
		const auto e = test::random_vector(80, 10 * k + 1);
		const auto a = plus(k % 2 ? s : e, test::random_vector(80, 10 * k + 2, 0.4));
		const auto b = plus(k % 2 ? e : s, test::random_vector(80, 10 * k + 3, 0.4));
		const auto r = pit_loss({a, b}, {s, e});
		EXPECT_NEAR(r.loss, ref_pit_loss(a, b, s, e), 1e-9);
		EXPECT_EQ(r.permutation, k % 2 ? Permutation::Identity : Permutation::Swapped);
	}
}

TEST(Pit, SwappingEstimatesLeavesLossUnchanged) {
	const auto s = test::random_vector(50, 1), e = test::random_vector(50, 2);
	const auto a = test::random_vector(50, 3), b = test::random_vector(50, 4);
	const auto ab = pit_loss({a, b}, {s, e});
	const auto ba = pit_loss({b, a}, {s, e});
	EXPECT_DOUBLE_EQ(ab.loss, ba.loss);
	EXPECT_NE(ab.permutation, ba.permutation);
}

TEST(Pit, NoGreaterThanEitherFixedPairing) {
	for (std::uint64_t k = 0; k < 20; ++k) {
		const auto s = test::random_vector(40, k), e = test::random_vector(40, k + 100);
		const auto a = test::random_vector(40, k + 200), b = test::random_vector(40, k + 300);
		const double pit = pit_loss({a, b}, {s, e}).loss;
		EXPECT_LE(pit, si_snr_loss(s, a) + si_snr_loss(e, b) + 1e-12);
		EXPECT_LE(pit, si_snr_loss(s, b) + si_snr_loss(e, a) + 1e-12);
	}
}

TEST(Pit, TieResolvesToIdentity) {
	const auto x = test::random_vector(30, 9);
	const auto r = pit_loss({x, x}, {x, x});
	EXPECT_EQ(r.permutation, Permutation::Identity);
}

TEST(Pit, LossIsNegatedSumOfPerSourceScores) {
	const auto s = test::random_vector(60, 5), e = test::random_vector(60, 6);
	const auto a = plus(e, test::random_vector(60, 7, 0.2));
	const auto b = plus(s, test::random_vector(60, 8, 0.2));
	const auto r = pit_loss({a, b}, {s, e});
	EXPECT_EQ(r.permutation, Permutation::Swapped);
	EXPECT_NEAR(r.loss, -(r.per_source_sisnr[0] + r.per_source_sisnr[1]), 1e-12);
	EXPECT_NEAR(r.per_source_sisnr[0], ref_si_snr(s, b), 1e-9);
	EXPECT_NEAR(r.per_source_sisnr[1], ref_si_snr(e, a), 1e-9);
}

TEST(Pit, IndependentMinimumCanReuseOneEstimate) {
	// Both targets nearly equal: the per-target minimum picks the same
	// estimate twice and undercuts the joint assignment.
	const auto s = test::random_vector(40, 1);
	const auto e = plus(s, test::random_vector(40, 2, 0.01));
	const auto good = s;
	const auto bad = test::random_vector(40, 3);
	ag::Tape t(false);
	auto v = [&](const Vec& x) { return t.constant(Tensor::row(x)); };
	const double joint = pit_loss(v(good), v(bad), v(s), v(e)).loss.item();
	const double independent = independent_min_loss(v(good), v(bad), v(s), v(e)).item();
	EXPECT_LT(independent, joint - 10.0);
}

TEST(Pit, LengthMismatchRejected) {
	const Vec a(10, 1.0), b(11, 1.0);
	EXPECT_THROW(pit_loss({a, a}, {a, b}), ShapeError);
}

TEST(SiSnri, MixturePassthroughScoresZero) {
	const auto s = test::random_vector(120, 1), e = test::random_vector(120, 2);
	const auto m = plus(s, e);
	EXPECT_NEAR(si_snri({s, e}, {m, m}, m), 0.0, 1e-12);
}

TEST(SiSnri, OracleEstimatesScoreHigh) {
	const auto s = test::random_vector(120, 1), e = test::random_vector(120, 2);
	const auto m = plus(s, e);
	EXPECT_GT(si_snri({s, e}, {s, e}, m), 50.0);
	EXPECT_GT(si_snri({s, e}, {e, s}, m), 50.0);
}

TEST(SiSnri, UnchangedByEstimateGain) {
	const auto s = test::random_vector(8000, 1), e = test::random_vector(8000, 2);
	const auto m = plus(s, e);
	const auto a = plus(s, test::random_vector(8000, 3, 0.3));
	const auto b = plus(e, test::random_vector(8000, 4, 0.3));
	EXPECT_NEAR(si_snri({s, e}, {scaled(a, 3.0), scaled(b, 3.0)}, m), si_snri({s, e}, {a, b}, m), 1e-9);
}

TEST(SiSnri, MeanOfPerSourceImprovements) {
	const auto s = test::random_vector(90, 11), e = scaled(test::random_vector(90, 12), 0.5);
	const auto m = plus(s, e);
	const auto a = plus(s, test::random_vector(90, 13, 0.2));
	const auto b = plus(e, test::random_vector(90, 14, 0.1));
	const double expected =
		0.5 * ((ref_si_snr(s, a) - ref_si_snr(s, m)) + (ref_si_snr(e, b) - ref_si_snr(e, m)));
	EXPECT_NEAR(si_snri({s, e}, {a, b}, m), expected, 1e-9);
}
