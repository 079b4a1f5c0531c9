#pragma once

// Command implementations behind the `mbt` executable.
//
//   mbt synth     --family-fg F --family-bg F --count N --out DIR [...]
//   mbt train     CONFIG
//   mbt eval      CHECKPOINT TEST_DIR [--teacher] [--passthrough] [--csv FILE]
//   mbt compare   CONFIG
//   mbt gradcheck [--tol X] [--seed N] [--inject-fault]
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbt/compare.hpp"
#include "mbt/config.hpp"
#include "mbt/corpus.hpp"
#include "mbt/error.hpp"
#include "mbt/gradcheck.hpp"
#include "mbt/ssl.hpp"
#include "mbt/synth.hpp"
#include "mbt/trainer.hpp"

namespace mbt::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2 };

namespace detail {

inline const std::set<std::string>& hyperparameter_keys() {
	static const std::set<std::string> keys = {
		"alpha", "gamma", "t_max", "consistency_on_labeled", "consistency_scale", "epochs", "lr", "beta1", "beta2",
		"adam_eps", "clip_norm", "batch_labeled", "batch_unlabeled", "separator.n_filters", "separator.kernel",
		"separator.stride", "separator.block_channels", "separator.n_blocks", "separator.n_repeats"};
	return keys;
}

inline std::size_t positive_size(const KeyValueConfig& kv, const std::string& key, std::size_t fallback) {
	const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(fallback));
	if (v <= 0)
		throw ConfigError(kv.where(kv.line_of(key)) + ": '" + key + "' must be a positive integer");
	return static_cast<std::size_t>(v);
}

inline ssl::Strategy strategy_at(const KeyValueConfig& kv, const std::string& value, const std::string& key) {
	try {
		return ssl::parse_strategy(value);
	} catch (const ConfigError& e) {
		throw ConfigError(kv.where(kv.line_of(key)) + ": " + e.what());
	}
}

}  // namespace detail

/// Hyperparameters shared by `train` and `compare`; absent keys keep their defaults.
inline train::TrainConfig hyperparameters_from(const KeyValueConfig& kv) {
	train::TrainConfig c;
	c.strategy.alpha = kv.get_double("alpha", c.strategy.alpha);
	c.strategy.gamma = kv.get_double("gamma", c.strategy.gamma);
	c.strategy.t_max = static_cast<int>(kv.get_int("t_max", c.strategy.t_max));
	c.strategy.consistency_on_labeled = kv.get_bool("consistency_on_labeled", c.strategy.consistency_on_labeled);
	c.strategy.consistency_scale = kv.get_double("consistency_scale", c.strategy.consistency_scale);
	c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
	c.adam.lr = kv.get_double("lr", c.adam.lr);
	c.adam.beta1 = kv.get_double("beta1", c.adam.beta1);
	c.adam.beta2 = kv.get_double("beta2", c.adam.beta2);
	c.adam.eps = kv.get_double("adam_eps", c.adam.eps);
	c.adam.clip_norm = kv.get_double("clip_norm", c.adam.clip_norm);
	c.batch_labeled = detail::positive_size(kv, "batch_labeled", c.batch_labeled);
	c.batch_unlabeled = detail::positive_size(kv, "batch_unlabeled", c.batch_unlabeled);
	auto& s = c.separator;
	s.n_filters = detail::positive_size(kv, "separator.n_filters", s.n_filters);
	s.kernel = detail::positive_size(kv, "separator.kernel", s.kernel);
	s.stride = detail::positive_size(kv, "separator.stride", s.stride);
	s.block_channels = detail::positive_size(kv, "separator.block_channels", s.block_channels);
	s.n_blocks = detail::positive_size(kv, "separator.n_blocks", s.n_blocks);
	s.n_repeats = detail::positive_size(kv, "separator.n_repeats", s.n_repeats);
	return c;
}

struct TrainJob {
	train::TrainConfig config;
	std::filesystem::path labeled;
	std::filesystem::path unlabeled;  ///< empty when absent
	std::filesystem::path dev;        ///< empty when absent
	std::filesystem::path out_dir;
};

inline TrainJob train_job_from(const KeyValueConfig& kv) {
	std::set<std::string> allowed = detail::hyperparameter_keys();
	allowed.insert({"strategy", "seed", "data.labeled", "data.unlabeled", "data.dev", "out_dir"});
	kv.require_known(allowed);
	TrainJob job;
	job.config = hyperparameters_from(kv);
	job.config.strategy.strategy = detail::strategy_at(kv, kv.get_string("strategy"), "strategy");
	job.config.seed = kv.get_uint("seed", job.config.seed);
	job.labeled = kv.get_string("data.labeled");
	job.unlabeled = kv.get_string("data.unlabeled", "");
	job.dev = kv.get_string("data.dev", "");
	job.out_dir = kv.get_string("out_dir");
	job.config.validate();
	return job;
}

inline void echo_config(std::ostream& out, const std::map<std::string, std::string>& kv) {
	out << "resolved config:\n";
	for (const auto& [k, v] : kv)
		out << "  " << k << " = " << v << "\n";
}

inline std::map<std::string, std::string> resolved(const train::TrainConfig& c) {
	using dsp::format_double;
	return {
		{"strategy", std::string(ssl::strategy_name(c.strategy.strategy))},
		{"alpha", format_double(c.strategy.alpha)},
		{"gamma", format_double(c.strategy.gamma)},
		{"t_max", std::to_string(c.strategy.t_max)},
		{"consistency_on_labeled", c.strategy.consistency_on_labeled ? "true" : "false"},
		{"consistency_scale", format_double(c.strategy.consistency_scale)},
		{"epochs", std::to_string(c.epochs)},
		{"lr", format_double(c.adam.lr)},
		{"beta1", format_double(c.adam.beta1)},
		{"beta2", format_double(c.adam.beta2)},
		{"adam_eps", format_double(c.adam.eps)},
		{"clip_norm", format_double(c.adam.clip_norm)},
		{"batch_labeled", std::to_string(c.batch_labeled)},
		{"batch_unlabeled", std::to_string(c.batch_unlabeled)},
		{"seed", std::to_string(c.seed)},
		{"separator.n_filters", std::to_string(c.separator.n_filters)},
		{"separator.kernel", std::to_string(c.separator.kernel)},
		{"separator.stride", std::to_string(c.separator.stride)},
		{"separator.block_channels", std::to_string(c.separator.block_channels)},
		{"separator.n_blocks", std::to_string(c.separator.n_blocks)},
		{"separator.n_repeats", std::to_string(c.separator.n_repeats)},
	};
}

inline dsp::Corpus load_labeled(const std::filesystem::path& dir, const char* role) {
	dsp::Corpus c = dsp::load_corpus(dir);
	if (!c.labeled)
		throw ConfigError(std::string(role) + " corpus must be labeled: " + dir.string());
	return c;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_synth(const dsp::CorpusSpec& spec, const std::filesystem::path& out_dir, std::ostream& out,
		std::ostream& err) {
	spec.validate();
	std::size_t clamped = 0;
	const auto rows = dsp::build_corpus(spec, out_dir, &clamped);
	if (clamped)
		err << "warning: " << clamped << " samples clamped to [-1, 1] while writing WAV files\n";
	out << "wrote " << rows.size() << (spec.labeled ? " labeled" : " unlabeled") << " examples to " << out_dir.string()
		<< "\n";
	return kOk;
}

inline int cmd_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err) {
	const KeyValueConfig kv = KeyValueConfig::load(config_path);
	const TrainJob job = train_job_from(kv);
	const ssl::Strategy strategy = job.config.strategy.strategy;
	if (!job.unlabeled.empty() && !ssl::uses_teacher(strategy))
		err << "warning: strategy " << ssl::strategy_name(strategy) << " ignores unlabeled data ("
			<< job.unlabeled.string() << ")\n";

	auto echo = resolved(job.config);
	echo["data.labeled"] = job.labeled.string();
	echo["data.unlabeled"] = job.unlabeled.empty() ? "none" : job.unlabeled.string();
	echo["data.dev"] = job.dev.empty() ? "none" : job.dev.string();
	echo["out_dir"] = job.out_dir.string();
	echo_config(out, echo);
	if (strategy == ssl::Strategy::MBT && job.unlabeled.empty())
		out << (job.config.strategy.consistency_on_labeled
						? "mode: supervised augmentation (consistency on labeled mixtures only)\n"
						: "mode: no consistency pool (consistency_on_labeled = false, no unlabeled data)\n");

	const dsp::Corpus labeled = load_labeled(job.labeled, "data.labeled");
	dsp::Corpus unlabeled, dev;
	train::TrainData data;
	data.labeled = &labeled.examples;
	data.labeled_name = labeled.name;
	if (!job.unlabeled.empty() && ssl::uses_teacher(strategy)) {
		unlabeled = dsp::load_corpus(job.unlabeled);
		data.unlabeled = &unlabeled.unlabeled;
		data.unlabeled_name = unlabeled.name;
	} else if (!job.unlabeled.empty()) {
		data.unlabeled_name = job.unlabeled.filename().string();
	}
	if (!job.dev.empty()) {
		dev = load_labeled(job.dev, "data.dev");
		data.dev = &dev.examples;
		data.dev_name = dev.name;
	}
	const auto result = train::train_to_dir(job.config, data, job.out_dir, [&out](const train::HistoryRow& h) {
		out << "epoch " << h.epoch << " train_loss=" << dsp::format_double(h.train_loss)
			<< " dev_si_snri_db=" << dsp::format_double(h.dev_mean) << std::endl;
	});
	if (result.skipped_steps)
		err << "warning: " << result.skipped_steps << " optimizer steps skipped for non-finite gradients\n";
	out << "best epoch " << result.best.epoch << "; wrote " << (job.out_dir / train::kCheckpointFile).string()
		<< " and " << (job.out_dir / train::kMetricsFile).string() << "\n";
	return kOk;
}

struct EvalOptions {
	std::string checkpoint;
	std::filesystem::path test_dir;
	bool teacher = false;
	bool passthrough = false;
	std::filesystem::path csv;  ///< empty: stdout only
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
	train::MetricsRow row;
	row.test_set = "";
	std::string model;
	train::EvalMetrics m;
	if (o.passthrough) {
		const dsp::Corpus test = load_labeled(o.test_dir, "test");
		row.test_set = test.name;
		m = train::evaluate_model([](std::span<const double> x) { return ssl::Estimates{{x.begin(), x.end()}, {x.begin(), x.end()}}; },
				test.examples);
		model = "passthrough";
		row.strategy = "passthrough";
		row.train_set = row.unlabeled_set = "none";
	} else {
		const train::Checkpoint ckpt = train::checkpoint_read(o.checkpoint);
		const dsp::Corpus test = load_labeled(o.test_dir, "test");
		row.test_set = test.name;
		m = train::evaluate(ckpt, test, o.teacher);
		model = o.teacher ? "teacher" : "student";
		row.strategy = ckpt.strategy;
		auto cfg = [&ckpt](const char* key) {
			auto it = ckpt.config.find(key);
			return it == ckpt.config.end() ? std::string("none") : it->second;
		};
		row.train_set = cfg("data.labeled");
		row.unlabeled_set = cfg("data.unlabeled");
		row.seed = ckpt.seed;
		row.epoch = ckpt.epoch;
		for (const auto& h : ckpt.history)
			if (h.epoch == ckpt.epoch)
				row.loss = h.train_loss;
	}
	row.split = o.teacher ? "test_teacher" : "test";
	row.mean = m.mean;
	row.std = m.std;
	out << "model=" << model << " strategy=" << row.strategy << " test_set=" << row.test_set << " n=" << m.count
		<< " si_snri_db_mean=" << dsp::format_double(m.mean) << " si_snri_db_std=" << dsp::format_double(m.std)
		<< "\n";
	if (!o.csv.empty())
		train::write_metrics_csv(o.csv, {row});
	return kOk;
}

inline int cmd_compare(const std::filesystem::path& config_path, std::ostream& out) {
	const KeyValueConfig kv = KeyValueConfig::load(config_path);
	std::set<std::string> allowed = detail::hyperparameter_keys();
	allowed.insert({"strategies", "seeds", "data.labeled", "data.unlabeled", "data.test", "data.dev", "out",
			"use_teacher"});
	kv.require_known(allowed);

	compare::Matrix m;
	m.base = hyperparameters_from(kv);
	for (const auto& s : kv.get_list("strategies"))
		m.strategies.push_back(detail::strategy_at(kv, s, "strategies"));
	for (const auto& s : kv.get_list("seeds"))
		m.seeds.push_back(dsp::parse_u64(s, kv.where(kv.line_of("seeds"))));
	m.use_teacher = kv.get_bool("use_teacher", false);
	const std::filesystem::path out_csv = kv.get_string("out");
	m.base.validate();

	const dsp::Corpus labeled = load_labeled(kv.get_string("data.labeled"), "data.labeled");
	m.labeled = {labeled.name, &labeled.examples};
	std::vector<dsp::Corpus> unlabeled;
	const auto unlabeled_names = kv.has("data.unlabeled") ? kv.get_list("data.unlabeled")
														  : std::vector<std::string>{compare::kNoUnlabeled};
	unlabeled.reserve(unlabeled_names.size());
	for (const auto& u : unlabeled_names) {
		if (u == compare::kNoUnlabeled) {
			m.unlabeled.push_back({compare::kNoUnlabeled, nullptr});
			continue;
		}
		unlabeled.push_back(dsp::load_corpus(u));
		m.unlabeled.push_back({unlabeled.back().name, &unlabeled.back().unlabeled});
	}
	std::vector<dsp::Corpus> tests;
	const auto test_names = kv.get_list("data.test");
	tests.reserve(test_names.size());
	for (const auto& t : test_names) {
		tests.push_back(load_labeled(t, "data.test"));
		m.tests.push_back({tests.back().name, &tests.back().examples});
	}
	dsp::Corpus dev;
	if (kv.has("data.dev")) {
		dev = load_labeled(kv.get_string("data.dev"), "data.dev");
		m.dev = {dev.name, &dev.examples};
	}

	const auto rows = compare::run(m, [&out](const compare::CellId& id, const train::MetricsRow& r) {
		out << id.str() << " test=" << r.test_set << " si_snri_db_mean=" << dsp::format_double(r.mean) << std::endl;
	});
	train::write_metrics_csv(out_csv, rows);
	out << "wrote " << rows.size() << " rows to " << out_csv.string() << "\n";
	return kOk;
}

inline int cmd_gradcheck(const gradcheck::Options& opt, bool inject_fault, std::ostream& out) {
	out << "tolerance = " << opt.tolerance << "\n";
	const auto reports = gradcheck::run_suite(opt, inject_fault);
	std::vector<std::string> failed;
	for (const auto& r : reports) {
		out << (r.passed ? "PASS " : "FAIL ") << r.name << " max_rel_error=" << std::scientific << std::setprecision(3)
			<< r.max_rel_error << std::defaultfloat << " coords=" << r.checked << "\n";
		if (!r.passed)
			failed.push_back(r.name);
	}
	if (failed.empty()) {
		out << "all " << reports.size() << " checks passed\n";
		return kOk;
	}
	out << failed.size() << " check(s) failed:";
	for (const auto& f : failed)
		out << " " << f;
	out << "\n";
	return kRuntime;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
	CLI::App app{"Semi-supervised source-separation training toolkit"};
	app.require_subcommand(1);

	dsp::CorpusSpec spec;
	std::string fam_fg = "speech_a", fam_bg = "speech_a", synth_out;
	auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
	synth->add_option("--family-fg", fam_fg, "Foreground family (speech_a, speech_b, noise, music)")->capture_default_str();
	synth->add_option("--family-bg", fam_bg, "Background family")->capture_default_str();
	synth->add_option("--count", spec.count, "Number of examples")->capture_default_str();
	synth->add_option("--dur", spec.duration_s, "Duration in seconds")->capture_default_str();
	synth->add_option("--rate", spec.sample_rate, "Sample rate in Hz")->capture_default_str();
	synth->add_option("--snr-lo", spec.snr_lo_db, "Lowest mixing SNR in dB")->capture_default_str();
	synth->add_option("--snr-hi", spec.snr_hi_db, "Highest mixing SNR in dB")->capture_default_str();
	synth->add_option("--seed", spec.seed, "Corpus seed")->capture_default_str();
	synth->add_option("--labeled", spec.labeled, "Store sources (true/false)")->capture_default_str();
	synth->add_option("--out", synth_out, "Output directory")->required();

	std::string train_config;
	auto* train_cmd = app.add_subcommand("train", "Train one model from a key = value config");
	train_cmd->add_option("config", train_config, "Config file")->required();

	EvalOptions eval_opts;
	std::string eval_csv;
	auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled test corpus");
	eval->add_option("checkpoint", eval_opts.checkpoint, "Checkpoint file ('-' with --passthrough)")->required();
	eval->add_option("test_dir", eval_opts.test_dir, "Labeled corpus directory")->required();
	eval->add_flag("--teacher", eval_opts.teacher, "Evaluate the teacher parameters");
	eval->add_flag("--passthrough", eval_opts.passthrough, "Evaluate the (mixture, mixture) stub instead");
	eval->add_option("--csv", eval_csv, "Also write the row to this CSV file");

	std::string compare_config;
	auto* cmp = app.add_subcommand("compare", "Train and evaluate a strategy matrix");
	cmp->add_option("config", compare_config, "Config file")->required();

	gradcheck::Options gc;
	bool inject = false;
	auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every primitive");
	grad->add_option("--tol", gc.tolerance, "Relative error tolerance")->capture_default_str();
	grad->add_option("--seed", gc.seed, "Seed for inputs")->capture_default_str();
	grad->add_flag("--inject-fault", inject, "Add a primitive with a corrupted adjoint");

	try {
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp&) {
		out << app.help();
		return kOk;
	} catch (const CLI::ParseError& e) {
		err << "usage error: " << e.what() << "\n";
		if (app.get_subcommands().empty())
			err << app.help();
		else
			err << app.get_subcommands().front()->help();
		return kUsage;
	}

	try {
		if (synth->parsed()) {
			spec.foreground_family = dsp::parse_family(fam_fg);
			spec.background_family = dsp::parse_family(fam_bg);
			return cmd_synth(spec, synth_out, out, err);
		}
		if (train_cmd->parsed())
			return cmd_train(train_config, out, err);
		if (eval->parsed()) {
			eval_opts.csv = eval_csv;
			return cmd_eval(eval_opts, out);
		}
		if (cmp->parsed())
			return cmd_compare(compare_config, out);
		if (grad->parsed()) {
			if (!(gc.tolerance > 0.0))
				throw ConfigError("--tol must be positive");
			return cmd_gradcheck(gc, inject, out);
		}
	} catch (const ConfigError& e) {
		err << "usage error: " << e.what() << "\n";
		return kUsage;
	} catch (const std::exception& e) {
		err << "error: " << e.what() << "\n";
		return kRuntime;
	}
	return kUsage;
}

}  // namespace mbt::cli
