#include <gtest/gtest.h>

#include <random>
#include <string>

#include "mbt/autograd.hpp"
#include "mbt/gradcheck.hpp"

using namespace mbt;
using namespace mbt::ag;

TEST(Autograd, SquareViaMulHasGradientTwoX) {
	Tape t;
	Var x = t.leaf(Tensor({1}, 3.0));
	Var y = mul(x, x);
	t.backward(y);
	EXPECT_EQ(y.item(), 9.0);
	EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Autograd, ReluNegativeBranch) {
	Tape t;
	Var x = t.leaf(Tensor({1}, -1.0));
	Var y = relu(x);
	t.backward(y);
	EXPECT_EQ(y.item(), 0.0);
	EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autograd, ValidConvolutionLength) {
	Tape t;
	Var x = t.constant(Tensor({1, 8}, 1.0));
	Var w = t.leaf(Tensor({1, 1, 3}, 1.0));
	Var y = conv1d(x, w);
	EXPECT_EQ(y.shape(), (Tensor::Shape{1, 6}));
	EXPECT_EQ(conv1d_output_length(8, 3, {}), 6u);
	for (double v : y.value().data())
		EXPECT_EQ(v, 3.0);
}

TEST(Autograd, SumOfParametersHasUnitGradient) {
	Tape t;
	Var a = t.leaf(Tensor({2, 3}, 0.7));
	Var b = t.leaf(Tensor({4}, -2.0));
	t.backward(add(sum(a), sum(b)));
	for (double g : a.grad().data())
		EXPECT_EQ(g, 1.0);
	for (double g : b.grad().data())
		EXPECT_EQ(g, 1.0);
}

TEST(Autograd, NonScalarLossRejected) {
	Tape t;
	Var x = t.leaf(Tensor({3}, 1.0));
	EXPECT_THROW(t.backward(scale(x, 2.0)), ShapeError);
}

TEST(Autograd, ShapeMismatchNamesBothShapes) {
	Tape t;
	Var a = t.leaf(Tensor({2, 3}));
	Var b = t.leaf(Tensor({3, 2}));
	try {
		add(a, b);
		FAIL() << "expected ShapeError";
	} catch (const ShapeError& e) {
		const std::string msg = e.what();
		EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
		EXPECT_NE(msg.find("[3, 2]"), std::string::npos) << msg;
	}
}

TEST(Autograd, OperandsFromDifferentTapesRejected) {
	Tape t1, t2;
	Var a = t1.leaf(Tensor({1}, 1.0));
	Var b = t2.leaf(Tensor({1}, 1.0));
	EXPECT_THROW(add(a, b), Error);
}

TEST(Autograd, IndependentGraphsDoNotLeak) {
	Tape t1;
	Var x1 = t1.leaf(Tensor({2}, 1.5));
	t1.backward(sum(square(x1)));
	const Tensor before = x1.grad();

	Tape t2;
	Var x2 = t2.leaf(Tensor({2}, 1.5));
	t2.backward(scale(sum(x2), 100.0));
	EXPECT_EQ(x1.grad(), before);
	EXPECT_EQ(x2.grad()[0], 100.0);
}

TEST(Autograd, DetachBlocksGradientAndKeepsValue) {
	Tape t;
	Var x = t.leaf(Tensor({1}, 3.0));
	Var d = detach(x);
	EXPECT_EQ(d.value(), x.value());
	EXPECT_FALSE(d.requires_grad());
	t.backward(mul(x, d));
	EXPECT_EQ(x.grad()[0], 3.0);
}

TEST(Autograd, DetachedPathContributesNothing) {
	Tape t;
	Var x = t.leaf(Tensor({3}, 0.5));
	t.backward(sum(square(detach(x))));
	for (double g : x.grad().data())
		EXPECT_EQ(g, 0.0);
}

TEST(Autograd, NonTrainableLeafReceivesNoGradient) {
	Tape t;
	Var w = t.leaf(Tensor({2}, 2.0), /*trainable=*/false);
	Var x = t.leaf(Tensor({2}, 3.0));
	t.backward(dot(w, x));
	EXPECT_FALSE(w.requires_grad());
	EXPECT_EQ(w.grad()[0], 0.0);
	EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Autograd, NonRecordingTapeRefusesBackward) {
	Tape t(false);
	Var x = t.leaf(Tensor({1}, 1.0));
	Var y = square(x);
	EXPECT_EQ(y.item(), 1.0);
	EXPECT_EQ(t.size(), 0u);
	EXPECT_THROW(t.backward(y), Error);
}

TEST(Autograd, GradientOfSumIsSumOfGradients) {
	std::mt19937_64 rng(11);
	std::normal_distribution<double> n;
	Tensor xv({1, 12});
	for (double& v : xv.data())
		v = n(rng);
	auto f = [](const Var& x) { return sum(sigmoid(x)); };
	auto g = [](const Var& x) { return dot(x, x); };

	auto grad_of = [&](auto build) {
		Tape t;
		Var x = t.leaf(xv);
		t.backward(build(x));
		return x.grad();
	};
	const Tensor gf = grad_of(f);
	const Tensor gg = grad_of(g);
	const Tensor gsum = grad_of([&](const Var& x) { return add(f(x), g(x)); });
	for (std::size_t i = 0; i < xv.size(); ++i)
		EXPECT_NEAR(gsum[i], gf[i] + gg[i], 1e-14);
}

TEST(Autograd, GradientsAreBitReproducible) {
	auto run = [] {
		auto cases = gradcheck::primitive_cases(5);
		const auto& c = cases.back();  // three-layer network
		Tape t;
		std::vector<Var> leaves;
		for (const auto& in : c.inputs)
			leaves.push_back(t.leaf(in));
		t.backward(c.loss(t, leaves));
		std::vector<Tensor> g;
		for (const auto& l : leaves)
			g.push_back(l.grad());
		return g;
	};
	EXPECT_EQ(run(), run());
}

TEST(Autograd, ClampMinPassesGradientOnlyAboveFloor) {
	Tape t;
	Var x = t.leaf(Tensor({3}, std::vector<double>{-1.0, 0.5, 2.0}));
	Var y = clamp_min(x, 0.5);
	EXPECT_EQ(y.value()[0], 0.5);
	t.backward(sum(y));
	EXPECT_EQ(x.grad()[0], 0.0);
	EXPECT_EQ(x.grad()[1], 0.0);
	EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Autograd, TransposedConvolutionLength) {
	Tape t;
	Var x = t.constant(Tensor({3, 5}, 1.0));
	Var w = t.constant(Tensor({3, 2, 4}, 1.0));
	EXPECT_EQ(conv_transpose1d(x, w, 2).shape(), (Tensor::Shape{2, 12}));
}

TEST(Autograd, GlobalLayerNormStandardizes) {
	Tape t;
	Tensor xv({2, 50});
	for (std::size_t i = 0; i < xv.size(); ++i)
		xv[i] = 3.0 + std::sin(0.37 * static_cast<double>(i)) * 5.0;
	Var y = global_layer_norm(t.constant(xv), t.constant(Tensor({2}, 1.0)), t.constant(Tensor({2}, 0.0)));
	double mean = 0.0, sq = 0.0;
	for (double v : y.value().data()) {
		mean += v;
		sq += v * v;
	}
	EXPECT_NEAR(mean / 100.0, 0.0, 1e-12);
	EXPECT_NEAR(sq / 100.0, 1.0, 1e-6);
}

// Finite-difference suite: every primitive plus the separator composition.

TEST(GradCheck, EveryPrimitiveAgreesWithFiniteDifferences) {
	gradcheck::Options opt;
	for (const auto& c : gradcheck::primitive_cases(opt.seed)) {
		const auto r = gradcheck::run_case(c, opt);
		EXPECT_TRUE(r.passed) << c.name << " max relative error " << r.max_rel_error;
		EXPECT_GT(r.checked, 0u);
	}
}

TEST(GradCheck, SeparatorPitCompositionAtTenRandomPoints) {
	gradcheck::Options opt;
	const auto cases = gradcheck::composition_cases(opt.seed, 10);
	ASSERT_EQ(cases.size(), 10u);
	for (const auto& c : cases) {
		const auto r = gradcheck::run_case(c, opt);
		EXPECT_TRUE(r.passed) << c.name << " max relative error " << r.max_rel_error;
	}
}

TEST(GradCheck, ThreeLayerNetworkIsSmall) {
	const auto cases = gradcheck::primitive_cases(0);
	const auto& net = cases.back();
	ASSERT_EQ(net.name, "three_layer_net");
	std::size_t params = 0;
	for (std::size_t i = 1; i < net.inputs.size(); ++i)
		params += net.inputs[i].size();
	EXPECT_LT(params, 5000u);
}

TEST(GradCheck, CorruptedAdjointIsCaught) {
	gradcheck::Options opt;
	const auto r = gradcheck::run_case(gradcheck::corrupted_adjoint_case(0), opt);
	EXPECT_FALSE(r.passed);
	EXPECT_NEAR(r.max_rel_error, 1.0 / 3.0, 1e-6);
}
