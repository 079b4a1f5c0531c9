// Acceptance run: one PASS/FAIL line per criterion.
//
// Defaults are the full desk-scale experiment. The scale flags exist for
// pilot runs; any run with non-default scale says so in its header.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbt/adam.hpp"
#include "mbt/corpus.hpp"
#include "mbt/gradcheck.hpp"
#include "mbt/losses.hpp"
#include "mbt/separator.hpp"
#include "mbt/ssl.hpp"
#include "mbt/trainer.hpp"

using namespace mbt;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
	return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
	std::sort(v.begin(), v.end());
	const std::size_t n = v.size();
	return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int digits = 3) {
	char buf[64];
	std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
	return buf;
}

std::string sci(double v) {
	char buf[32];
	std::snprintf(buf, sizeof(buf), "%.2e", v);
	return buf;
}

std::string list(const std::vector<double>& v) {
	std::string s = "[";
	for (std::size_t i = 0; i < v.size(); ++i)
		s += (i ? ", " : "") + fmt(v[i], 2);
	return s + "]";
}

struct Report {
	int failures = 0;

	void line(int id, bool pass, const std::string& what, const std::string& detail) {
		std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << what << "  (" << detail << ")"
				  << std::endl;
		if (!pass)
			++failures;
	}
	void soft(int id, bool pass, const std::string& what, const std::string& detail) {
		std::cout << "criterion " << id << ": " << (pass ? "PASS" : "MISS (soft)") << "  " << what << "  (" << detail
				  << ")" << std::endl;
	}
	void note(const std::string& s) { std::cout << "  " << s << std::endl; }
};

sep::SeparatorConfig desk_separator() {
	sep::SeparatorConfig c;
	c.n_filters = 32;
	c.kernel = 32;
	c.stride = 16;
	c.block_channels = 32;
	c.n_blocks = 4;
	c.n_repeats = 1;
	return c;
}

std::vector<dsp::LabeledExample> labeled(dsp::Family bg, std::size_t count, std::uint64_t seed, double dur) {
	dsp::CorpusSpec spec;
	spec.background_family = bg;
	spec.count = count;
	spec.seed = seed;
	spec.duration_s = dur;
	std::vector<dsp::LabeledExample> out;
	out.reserve(count);
	for (std::size_t k = 0; k < count; ++k)
		out.push_back(dsp::generate_example(spec, k).example);
	return out;
}

std::vector<dsp::UnlabeledExample> unlabeled(dsp::Family bg, std::size_t count, std::uint64_t seed, double dur) {
	std::vector<dsp::UnlabeledExample> out;
	out.reserve(count);
	for (auto& ex : labeled(bg, count, seed, dur))
		out.push_back({ex.id, std::move(ex.mixture)});
	return out;
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic invariants

bool check(Report& rep, const std::string& name, bool ok, const std::string& detail) {
	rep.note(std::string(ok ? "ok   " : "FAIL ") + name + ": " + detail);
	return ok;
}

double ks_uniform(std::vector<double> xs) {
	std::sort(xs.begin(), xs.end());
	const double n = static_cast<double>(xs.size());
	double d = 0.0;
	for (std::size_t i = 0; i < xs.size(); ++i)
		d = std::max({d, (i + 1) / n - xs[i], xs[i] - i / n});
	return d;
}

void criterion_invariants(Report& rep) {
	const auto t0 = Clock::now();
	Rng rng(2024);
	std::normal_distribution<double> gauss;
	auto vec = [&](std::size_t n) {
		std::vector<double> v(n);
		for (double& x : v)
			x = gauss(rng);
		return v;
	};
	auto scaled = [](std::vector<double> v, double k) {
		for (double& x : v)
			x *= k;
		return v;
	};
	bool all = true;

	// Unit-scale 8000-sample signals at 0 dB: gains over two decades either way.
	double drift = 0.0;
	std::uniform_real_distribution<double> log_gain(std::log(0.1), std::log(10.0));
	for (int i = 0; i < 50; ++i) {
		const auto t = vec(8000);
		auto e = vec(8000);
		for (std::size_t j = 0; j < e.size(); ++j)
			e[j] += t[j];
		const double base = loss::si_snr(t, e);
		const double a = std::exp(log_gain(rng)), b = std::exp(log_gain(rng));
		drift = std::max({drift, std::abs(loss::si_snr(scaled(t, a), e) - base),
				std::abs(loss::si_snr(t, scaled(e, b)) - base), std::abs(loss::si_snr(scaled(t, a), scaled(e, b)) - base)});
	}
	all &= check(rep, "SI-SNR scale invariance", drift <= 1e-9, "max drift " + sci(drift) + " dB, gains in [0.1, 10]");

	bool swap_exact = true, brute_exact = true;
	for (int i = 0; i < 200; ++i) {
		const auto s = vec(64), e = vec(64), a = vec(64), b = vec(64);
		const auto ab = loss::pit_loss({a, b}, {s, e});
		const auto ba = loss::pit_loss({b, a}, {s, e});
		swap_exact &= ab.loss == ba.loss;
		const double id = loss::si_snr_loss(s, a) + loss::si_snr_loss(e, b);
		const double sw = loss::si_snr_loss(s, b) + loss::si_snr_loss(e, a);
		brute_exact &= ab.loss == std::min(id, sw);
	}
	all &= check(rep, "PIT swap symmetry", swap_exact, "200 random cases, exact equality");
	all &= check(rep, "PIT equals pairing enumeration", brute_exact, "200 random cases, exact equality");

	double break_gap = 0.0;
	for (int i = 0; i < 200; ++i) {
		const auto a = vec(100), b = vec(100);
		const double lam = ssl::sample_lambda(1.0, rng);
		const auto m = ssl::mix(a, b, lam);
		const auto [p, q] = ssl::breakdown(a, b, lam);
		for (std::size_t j = 0; j < m.size(); ++j)
			break_gap = std::max(break_gap, std::abs(p[j] + q[j] - m[j]));
	}
	all &= check(rep, "sum of Breakdown equals Mixup", break_gap == 0.0,
			"max abs gap " + sci(break_gap));

	bool envelope = true;
	{
		const auto c = desk_separator();
		for (int trial = 0; trial < 5; ++trial) {
			auto teacher = sep::init_params(c, 100 + trial);
			const auto student = sep::init_params(c, 200 + trial);
			const auto before = teacher;
			const double gamma = std::uniform_real_distribution<double>(0.0, 0.9999)(rng);
			sep::ema_update(teacher, student, gamma);
			for (std::size_t i = 0; i < teacher.tensors.size(); ++i) {
				const auto t = teacher.tensors[i].value.data();
				const auto s = student.tensors[i].value.data();
				const auto z = before.tensors[i].value.data();
				for (std::size_t j = 0; j < t.size(); ++j)
					envelope &= t[j] >= std::min(s[j], z[j]) && t[j] <= std::max(s[j], z[j]);
			}
		}
	}
	all &= check(rep, "EMA stays in the convex envelope", envelope, "5 random parameter pairs, all coordinates");

	bool ramp_ok = ssl::ramp(20, 20) == 1.0 && ssl::ramp(100, 100) == 1.0;
	for (int t = 2; t <= 100; ++t)
		ramp_ok &= ssl::ramp(t, 100) > ssl::ramp(t - 1, 100);
	all &= check(rep, "ramp(t_max) = 1 and strictly increasing", ramp_ok, "t_max in {20, 100}");

	std::vector<double> lams(10000);
	Rng beta_rng(7);
	for (double& l : lams)
		l = ssl::sample_lambda(1.0, beta_rng);
	const double ks = ks_uniform(lams);
	const double crit = 1.628 / std::sqrt(10000.0);
	all &= check(rep, "Beta(1,1) uniformity", ks < crit, "KS D = " + fmt(ks, 5) + " < " + fmt(crit, 5));

	double target_gap = 0.0;
	{
		const auto c = desk_separator();
		const auto params = sep::init_params(c, 5);
		const auto x = labeled(dsp::Family::SpeechLikeA, 1, 77, 0.25)[0].mixture.samples;
		const auto teacher_out = sep::separate(c, sep::init_params(c, 6), x);
		for (int i = 0; i < 10; ++i) {
			const double lam = ssl::sample_lambda(1.0, rng);
			const double k1 = std::exp(2.0 * gauss(rng)), k2 = -std::exp(2.0 * gauss(rng));
			const auto pseudo = ssl::mix(teacher_out.first, teacher_out.second, lam);
			const auto [ta, tb] = ssl::breakdown(teacher_out.first, teacher_out.second, lam);
			const auto est = sep::separate(c, params, pseudo);
			const double plain = loss::pit_loss({est.first, est.second}, {ta, tb}).loss;
			const double rescaled = loss::pit_loss({est.first, est.second}, {scaled(ta, k1), scaled(tb, k2)}).loss;
			ag::Tape tape;
			sep::BoundSeparator net(c, params, tape);
			auto student = [&net](const ag::Var& z) {
				auto o = net.forward(z);
				return ssl::SourcePair{o.est_s, o.est_e};
			};
			const double via_term = ssl::mbt_consistency_from_estimates(tape, student, teacher_out, lam).item();
			target_gap = std::max({target_gap, std::abs(rescaled - plain), std::abs(via_term - plain)});
		}
	}
	all &= check(rep, "Break-target rescaling leaves MBT consistency unchanged", target_gap <= 1e-9,
			"max gap " + sci(target_gap) + " dB");

	const double secs = seconds_since(t0);
	rep.line(2, all && secs < 60.0, "invariant suite", fmt(secs, 1) + " s, budget 60 s");
}

// ---------------------------------------------------------------------------
// Criterion 3: gradients

void criterion_gradients(Report& rep) {
	const auto t0 = Clock::now();
	gradcheck::Options opt;
	const auto reports = gradcheck::run_suite(opt, false, 10);
	double worst = 0.0;
	std::string worst_name;
	std::size_t failed = 0;
	for (const auto& r : reports) {
		if (r.max_rel_error > worst) {
			worst = r.max_rel_error;
			worst_name = r.name;
		}
		if (!r.passed) {
			++failed;
			rep.note("FAIL " + r.name + " max relative error " + std::to_string(r.max_rel_error));
		}
	}
	const double secs = seconds_since(t0);
	rep.line(3, failed == 0 && secs < 120.0, "finite-difference gradients < 1e-4",
			std::to_string(reports.size()) + " cases, worst " + sci(worst) + " (" + worst_name + "), " + fmt(secs, 1) +
					" s, budget 120 s");
}

// ---------------------------------------------------------------------------
// Criterion 4: overfit one batch

void criterion_overfit(Report& rep, double dur) {
	const auto t0 = Clock::now();
	const auto batch = labeled(dsp::Family::SpeechLikeA, 8, 4040, dur);
	const auto config = desk_separator();
	auto params = sep::init_params(config, 4);
	train::AdamState adam;
	const train::AdamConfig adam_cfg;
	ssl::StrategyConfig erm;
	erm.strategy = ssl::Strategy::ERM;
	erm.t_max = 1;
	ssl::StepBatch step;
	for (const auto& ex : batch)
		step.labeled.push_back(&ex);
	Rng unused(0);

	auto per_source_mean = [&] {
		double sum = 0.0;
		for (const auto& ex : batch) {
			const auto est = sep::separate(config, params, ex.mixture.samples);
			const auto pit = loss::pit_loss({est.first, est.second}, {ex.source_s.samples, ex.source_e.samples});
			sum += pit.per_source_sisnr[0] + pit.per_source_sisnr[1];
		}
		return sum / (2.0 * static_cast<double>(batch.size()));
	};

	double score = per_source_mean();
	int steps = 0;
	while (steps < 500 && score < 10.0) {
		ag::Tape tape;
		sep::BoundSeparator net(config, params, tape);
		auto student = [&net](const ag::Var& x) {
			auto o = net.forward(x);
			return ssl::SourcePair{o.est_s, o.est_e};
		};
		const auto r = ssl::strategy_step(erm, step, tape, student, train::separator_model(config, params), unused);
		tape.backward(r.total);
		train::adam_step(params, net.gradients(), adam, adam_cfg);
		++steps;
		if (steps % 25 == 0 || steps == 500)
			score = per_source_mean();
	}
	rep.line(4, score >= 10.0, "ERM overfits one batch of 8 to >= 10 dB per-source SI-SNR within 500 steps",
			fmt(score, 2) + " dB after " + std::to_string(steps) + " steps, " + fmt(seconds_since(t0), 1) + " s");
}

// ---------------------------------------------------------------------------
// Criteria 5-8: training matrix

struct Data {
	std::vector<dsp::LabeledExample> train, dev, test_matched, test_noise, test_music;
	std::vector<dsp::UnlabeledExample> wild_noise, wild_music;
};

struct Scores {
	double matched = 0.0, noise = 0.0, music = 0.0;
};

struct Cell {
	std::string label;
	ssl::Strategy strategy;
	const std::vector<dsp::UnlabeledExample>* unlabeled;
	std::string unlabeled_name;
	std::uint64_t seed;
};

class Matrix {
public:
	Matrix(const Data& d, train::TrainConfig base, fs::path work) : d_(d), base_(std::move(base)), work_(std::move(work)) {}

	Scores run(const Cell& c) {
		const auto t0 = Clock::now();
		train::TrainConfig cfg = base_;
		cfg.strategy.strategy = c.strategy;
		cfg.seed = c.seed;
		const train::TrainData data{&d_.train, c.unlabeled, &d_.dev, "a_a_train", c.unlabeled_name, "a_a_dev"};
		const fs::path dir = work_ / (c.label + "_seed" + std::to_string(c.seed));
		const auto r = train::train_to_dir(cfg, data, dir);
		Scores s;
		s.matched = eval(r.best, d_.test_matched, "a_a_test", c);
		s.noise = eval(r.best, d_.test_noise, "a_noise_test", c);
		s.music = eval(r.best, d_.test_music, "a_music_test", c);
		std::cout << "  cell " << c.label << " seed=" << c.seed << " best_epoch=" << r.best.epoch
				  << " matched=" << fmt(s.matched, 2) << " noise=" << fmt(s.noise, 2) << " music=" << fmt(s.music, 2)
				  << " dB  " << fmt(seconds_since(t0) / 60.0, 1) << " min" << std::endl;
		return s;
	}

	const std::vector<train::MetricsRow>& rows() const { return rows_; }

private:
	double eval(const train::Checkpoint& ckpt, const std::vector<dsp::LabeledExample>& test, const std::string& name,
			const Cell& c) {
		const auto m = train::evaluate(ckpt, test, false);
		rows_.push_back({c.label, "a_a_train", c.unlabeled_name, name, c.seed, ckpt.epoch, "test", m.mean, m.std,
				ckpt.history[static_cast<std::size_t>(ckpt.epoch - 1)].train_loss});
		return m.mean;
	}

	const Data& d_;
	train::TrainConfig base_;
	fs::path work_;
	std::vector<train::MetricsRow> rows_;
};

std::string read_bytes(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::stringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

void criterion_determinism(Report& rep, const Data& d, train::TrainConfig cfg, const fs::path& work) {
	const auto t0 = Clock::now();
	const std::size_t n = std::min<std::size_t>(200, d.train.size());
	const std::vector<dsp::LabeledExample> sub(d.train.begin(), d.train.begin() + static_cast<std::ptrdiff_t>(n));
	const std::vector<dsp::UnlabeledExample> wild(d.wild_noise.begin(),
			d.wild_noise.begin() + static_cast<std::ptrdiff_t>(std::min(n, d.wild_noise.size())));
	const std::vector<dsp::LabeledExample> dev(d.dev.begin(),
			d.dev.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(50, d.dev.size())));
	cfg.strategy.strategy = ssl::Strategy::MBT;
	cfg.epochs = 2;
	cfg.seed = 11;
	const train::TrainData data{&sub, &wild, &dev, "a_a_train", "a_noise_unlabeled", "a_a_dev"};
	train::train_to_dir(cfg, data, work / "determinism_a");
	train::train_to_dir(cfg, data, work / "determinism_b");
	bool same = true;
	for (const char* f : {train::kCheckpointFile, train::kMetricsFile})
		same &= read_bytes(work / "determinism_a" / f) == read_bytes(work / "determinism_b" / f) &&
				!read_bytes(work / "determinism_a" / f).empty();
	rep.line(8, same, "re-running a training cell gives byte-identical checkpoint and CSV",
			"MBT cell, " + std::to_string(n) + " labeled + " + std::to_string(wild.size()) + " unlabeled, 2 epochs, " +
					fmt(seconds_since(t0), 1) + " s");
}

}  // namespace

int main(int argc, char** argv) {
	CLI::App app{"Acceptance run: prints one PASS/FAIL line per criterion"};
	fs::path work = "acceptance_work";
	double scale = 1.0;
	int epochs = 20;
	int seeds = 3;
	double dur = 1.0;
	std::vector<int> only;
	app.add_option("--work-dir", work, "Directory for checkpoints and metrics")->capture_default_str();
	app.add_option("--scale", scale, "Corpus size multiplier (pilot runs only)")->capture_default_str();
	app.add_option("--epochs", epochs, "Training epochs per cell")->capture_default_str();
	app.add_option("--seeds", seeds, "Seeds per strategy")->capture_default_str();
	app.add_option("--duration", dur, "Example length in seconds")->capture_default_str();
	app.add_option("--only", only, "Run only these criteria");
	CLI11_PARSE(app, argc, argv);

	auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
	const bool full = scale == 1.0 && epochs == 20 && seeds == 3 && dur == 1.0;
	Report rep;
	std::cout << "acceptance run: " << (full ? "full desk scale" : "PILOT (non-default scale)") << ", scale=" << scale
			  << " epochs=" << epochs << " seeds=" << seeds << " duration=" << dur << " s" << std::endl;

	try {
		fs::create_directories(work);
		if (wanted(1))
			std::cout << "criterion 1: N/A  absolute published SI-SNRi values are out of desk-scale reach; "
						 "criteria 2-8 substitute"
					  << std::endl;
		if (wanted(2))
			criterion_invariants(rep);
		if (wanted(3))
			criterion_gradients(rep);
		if (wanted(4))
			criterion_overfit(rep, dur);

		const bool need_matrix = wanted(5) || wanted(6) || wanted(7) || wanted(8);
		if (!need_matrix)
			return rep.failures ? 1 : 0;

		auto count = [&](std::size_t n) { return std::max<std::size_t>(4, static_cast<std::size_t>(n * scale)); };
		const auto t_data = Clock::now();
		Data d;
		using dsp::Family;
		d.train = labeled(Family::SpeechLikeA, count(2000), 101, dur);
		d.dev = labeled(Family::SpeechLikeA, count(200), 102, dur);
		d.test_matched = labeled(Family::SpeechLikeA, count(500), 103, dur);
		d.test_noise = labeled(Family::Noise, count(500), 104, dur);
		d.test_music = labeled(Family::MusicLike, count(500), 105, dur);
		if (wanted(5) || wanted(8))
			d.wild_noise = unlabeled(Family::Noise, count(2000), 106, dur);
		if (wanted(7))
			d.wild_music = unlabeled(Family::MusicLike, count(2000), 107, dur);
		std::cout << "  corpora generated in " << fmt(seconds_since(t_data), 1) << " s" << std::endl;

		train::TrainConfig base;
		base.separator = desk_separator();
		base.epochs = epochs;
		base.strategy.t_max = std::max(100, epochs);
		rep.note("separator " + std::to_string(sep::init_params(base.separator, 0).parameter_count()) +
				" parameters; batches " + std::to_string(base.batch_labeled) + "+" +
				std::to_string(base.batch_unlabeled) + "; lr " + fmt(base.adam.lr, 4));

		if (wanted(8))
			criterion_determinism(rep, d, base, work);

		std::vector<train::MetricsRow> all_rows;
		std::map<std::string, std::vector<Scores>> res;
		auto cells = [&](const std::string& label, ssl::Strategy s, const std::vector<dsp::UnlabeledExample>* u,
							 const std::string& uname, bool on_labeled) {
			train::TrainConfig cfg = base;
			cfg.strategy.consistency_on_labeled = on_labeled;
			Matrix m(d, cfg, work);
			for (int k = 1; k <= seeds; ++k)
				res[label].push_back(m.run({label, s, u, uname, static_cast<std::uint64_t>(k)}));
			all_rows.insert(all_rows.end(), m.rows().begin(), m.rows().end());
		};
		auto med = [&](const std::string& label, double Scores::*field) {
			std::vector<double> v;
			for (const auto& s : res[label])
				v.push_back(s.*field);
			return std::pair{median(v), v};
		};

		if (wanted(5) || wanted(6) || wanted(7))
			cells("erm", ssl::Strategy::ERM, nullptr, "none", true);
		if (wanted(5))
			cells("mbt_noise", ssl::Strategy::MBT, &d.wild_noise, "a_noise_unlabeled", true);
		if (wanted(6))
			cells("mbt_labeled_only", ssl::Strategy::MBT, nullptr, "none", true);
		if (wanted(7)) {
			cells("mbt_music", ssl::Strategy::MBT, &d.wild_music, "a_music_unlabeled", true);
			cells("ict_music", ssl::Strategy::ICT, &d.wild_music, "a_music_unlabeled", true);
		}
		train::write_metrics_csv(work / "acceptance_metrics.csv", all_rows);

		if (wanted(5)) {
			const auto [erm_noise, erm_noise_v] = med("erm", &Scores::noise);
			const auto [erm_matched, erm_matched_v] = med("erm", &Scores::matched);
			const auto [mbt_noise, mbt_noise_v] = med("mbt_noise", &Scores::noise);
			rep.note("ERM matched " + list(erm_matched_v) + ", ERM noise " + list(erm_noise_v) + ", MBT noise " +
					list(mbt_noise_v));
			rep.line(5, mbt_noise >= erm_noise + 1.5 && erm_matched >= erm_noise + 1.5,
					"noise mismatch: MBT >= ERM + 1.5 dB and ERM matched >= ERM mismatched + 1.5 dB",
					"medians: MBT " + fmt(mbt_noise, 2) + " vs ERM " + fmt(erm_noise, 2) + " on noise; ERM " +
							fmt(erm_matched, 2) + " matched vs " + fmt(erm_noise, 2) + " mismatched");
		}
		if (wanted(6)) {
			const auto [erm, erm_v] = med("erm", &Scores::matched);
			const auto [mbt, mbt_v] = med("mbt_labeled_only", &Scores::matched);
			rep.note("ERM matched " + list(erm_v) + ", MBT labeled-only matched " + list(mbt_v));
			rep.line(6, mbt >= erm - 0.2, "MBT without unlabeled data >= ERM - 0.2 dB on the matched test set",
					"medians: MBT " + fmt(mbt, 2) + " vs ERM " + fmt(erm, 2));
		}
		if (wanted(7)) {
			const auto [mbt, mbt_v] = med("mbt_music", &Scores::music);
			const auto [ict, ict_v] = med("ict_music", &Scores::music);
			const auto [erm, erm_v] = med("erm", &Scores::music);
			rep.note("ERM music " + list(erm_v) + ", ICT music " + list(ict_v) + ", MBT music " + list(mbt_v));
			rep.soft(7, mbt >= ict, "music mismatch: MBT >= ICT",
					"medians: MBT " + fmt(mbt, 2) + " vs ICT " + fmt(ict, 2) + ", gap " + fmt(mbt - ict, 2) + " dB");
		}
	} catch (const std::exception& e) {
		std::cout << "acceptance aborted: " << e.what() << std::endl;
		return 2;
	}
	std::cout << (rep.failures ? std::to_string(rep.failures) + " criterion/criteria failed" : "all hard criteria passed")
			  << std::endl;
	return rep.failures ? 1 : 0;
}
