#pragma once

// Training loop, evaluation and metrics CSV output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mbt/adam.hpp"
#include "mbt/checkpoint.hpp"
#include "mbt/corpus.hpp"
#include "mbt/error.hpp"
#include "mbt/losses.hpp"
#include "mbt/rng.hpp"
#include "mbt/separator.hpp"
#include "mbt/ssl.hpp"

namespace mbt::train {

struct TrainConfig {
	ssl::StrategyConfig strategy;
	sep::SeparatorConfig separator;
	AdamConfig adam;
	int epochs = 20;
	std::size_t batch_labeled = 8;
	std::size_t batch_unlabeled = 8;
	std::uint64_t seed = 1;

	void validate() const {
		strategy.validate();
		separator.validate();
		if (epochs < 1)
			throw ConfigError("epochs must be >= 1");
		if (epochs > strategy.t_max)
			throw ConfigError("epochs (" + std::to_string(epochs) + ") exceed the ramp horizon t_max (" +
					std::to_string(strategy.t_max) + ")");
		if (batch_labeled == 0 || batch_unlabeled == 0)
			throw ConfigError("batch sizes must be positive");
		if (!(adam.lr > 0.0))
			throw ConfigError("learning rate must be positive");
	}
};

/// Borrowed views of the corpora a run trains on.
struct TrainData {
	const std::vector<dsp::LabeledExample>* labeled = nullptr;
	const std::vector<dsp::UnlabeledExample>* unlabeled = nullptr;  ///< optional
	const std::vector<dsp::LabeledExample>* dev = nullptr;          ///< optional
	std::string labeled_name;
	std::string unlabeled_name = "none";
	std::string dev_name = "none";
};

struct EvalMetrics {
	double mean = 0.0;
	double std = 0.0;
	std::size_t count = 0;
};

/// Mean and sample standard deviation of per-example SI-SNRi.
template <ssl::TeacherModel Model>
EvalMetrics evaluate_model(const Model& model, std::span<const dsp::LabeledExample> corpus) {
	EvalMetrics m;
	if (corpus.empty())
		return m;
	std::vector<double> values;
	values.reserve(corpus.size());
	for (const auto& ex : corpus) {
		const ssl::Estimates est = model(ex.mixture.samples);
		values.push_back(loss::si_snri({ex.source_s.samples, ex.source_e.samples}, {est.first, est.second},
				ex.mixture.samples));
	}
	m.count = values.size();
	m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m.count);
	if (m.count > 1) {
		double ss = 0.0;
		for (double v : values)
			ss += (v - m.mean) * (v - m.mean);
		m.std = std::sqrt(ss / static_cast<double>(m.count - 1));
	}
	return m;
}

inline auto separator_model(const sep::SeparatorConfig& config, const sep::SeparatorParams& params) {
	return [&config, &params](std::span<const double> x) -> ssl::Estimates {
		return sep::separate(config, params, x);
	};
}

inline EvalMetrics evaluate(const Checkpoint& ckpt, std::span<const dsp::LabeledExample> corpus, bool use_teacher) {
	return evaluate_model(separator_model(ckpt.separator, use_teacher ? ckpt.teacher : ckpt.student), corpus);
}

inline EvalMetrics evaluate(const Checkpoint& ckpt, const dsp::Corpus& corpus, bool use_teacher) {
	if (!corpus.labeled)
		throw ConfigError("evaluation needs a labeled corpus; '" + corpus.name + "' is unlabeled");
	return evaluate(ckpt, corpus.examples, use_teacher);
}

struct TrainResult {
	Checkpoint best;  ///< highest dev SI-SNRi (the last epoch when no dev set is given)
	Checkpoint last;
	std::size_t steps = 0;
	std::size_t skipped_steps = 0;
};

namespace detail {

inline std::map<std::string, std::string> config_echo(const TrainConfig& c, const TrainData& d) {
	using dsp::format_double;
	return {
		{"alpha", format_double(c.strategy.alpha)},
		{"gamma", format_double(c.strategy.gamma)},
		{"t_max", std::to_string(c.strategy.t_max)},
		{"consistency_on_labeled", c.strategy.consistency_on_labeled ? "true" : "false"},
		{"consistency_scale", format_double(c.strategy.consistency_scale)},
		{"epochs", std::to_string(c.epochs)},
		{"batch_labeled", std::to_string(c.batch_labeled)},
		{"batch_unlabeled", std::to_string(c.batch_unlabeled)},
		{"lr", format_double(c.adam.lr)},
		{"clip_norm", format_double(c.adam.clip_norm)},
		{"data.labeled", d.labeled_name},
		{"data.unlabeled", d.unlabeled_name},
		{"data.dev", d.dev_name},
	};
}

}  // namespace detail

/// Runs the full optimization. All randomness derives from cfg.seed through
/// separate streams (init, labeled order, unlabeled order, step sampling),
/// so strategies that ignore unlabeled data are unaffected by it.
inline TrainResult train(const TrainConfig& cfg, const TrainData& data,
		const std::function<void(const HistoryRow&)>& on_epoch = {}) {
	cfg.validate();
	if (!data.labeled || data.labeled->empty())
		throw ConfigError("training needs a non-empty labeled corpus");
	const bool teacher_strategy = ssl::uses_teacher(cfg.strategy.strategy);
	const std::vector<dsp::UnlabeledExample> no_unlabeled;
	const auto& unlabeled = (teacher_strategy && data.unlabeled) ? *data.unlabeled : no_unlabeled;

	sep::SeparatorParams student = sep::init_params(cfg.separator, derive_seed(cfg.seed, {stream_tag("init")}));
	sep::SeparatorParams teacher = student;
	teacher.set_trainable(false);
	AdamState adam;

	Rng order_l(derive_seed(cfg.seed, {stream_tag("order-labeled")}));
	Rng order_u(derive_seed(cfg.seed, {stream_tag("order-unlabeled")}));
	Rng step_rng(derive_seed(cfg.seed, {stream_tag("step")}));

	std::vector<std::size_t> perm_l(data.labeled->size());
	std::iota(perm_l.begin(), perm_l.end(), std::size_t{0});
	std::vector<std::size_t> perm_u(unlabeled.size());
	std::iota(perm_u.begin(), perm_u.end(), std::size_t{0});
	std::size_t cursor_u = perm_u.size();

	TrainResult result;
	Checkpoint current;
	current.separator = cfg.separator;
	current.seed = cfg.seed;
	current.strategy = std::string(ssl::strategy_name(cfg.strategy.strategy));
	current.config = detail::config_echo(cfg, data);
	double best_dev = -std::numeric_limits<double>::infinity();

	for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
		std::shuffle(perm_l.begin(), perm_l.end(), order_l);
		double loss_sum = 0.0;
		std::size_t loss_count = 0;
		for (std::size_t begin = 0; begin < perm_l.size(); begin += cfg.batch_labeled) {
			ssl::StepBatch batch;
			batch.epoch = epoch;
			const std::size_t end = std::min(perm_l.size(), begin + cfg.batch_labeled);
			for (std::size_t i = begin; i < end; ++i)
				batch.labeled.push_back(&(*data.labeled)[perm_l[i]]);
			for (std::size_t i = 0; i < cfg.batch_unlabeled && !perm_u.empty(); ++i) {
				if (cursor_u == perm_u.size()) {
					std::shuffle(perm_u.begin(), perm_u.end(), order_u);
					cursor_u = 0;
				}
				batch.unlabeled.push_back(&unlabeled[perm_u[cursor_u++]]);
			}

			ag::Tape tape;
			sep::BoundSeparator net(cfg.separator, student, tape);
			auto student_fn = [&net](const ag::Var& x) {
				auto out = net.forward(x);
				return ssl::SourcePair{out.est_s, out.est_e};
			};
			ssl::StepResult step = ssl::strategy_step(cfg.strategy, batch, tape, student_fn,
					separator_model(cfg.separator, teacher), step_rng);
			tape.backward(step.total);
			const AdamStepInfo info = adam_step(student, net.gradients(), adam, cfg.adam);
			sep::ema_update(teacher, student, cfg.strategy.gamma);
			++result.steps;
			if (info.applied && std::isfinite(step.total.item())) {
				loss_sum += step.total.item();
				++loss_count;
			}
		}
		result.skipped_steps = adam.skipped;

		HistoryRow row;
		row.epoch = epoch;
		row.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
		if (data.dev && !data.dev->empty()) {
			const EvalMetrics dev = evaluate_model(separator_model(cfg.separator, student), *data.dev);
			row.dev_mean = dev.mean;
			row.dev_std = dev.std;
		}
		current.history.push_back(row);
		current.epoch = epoch;
		current.student = student;
		current.teacher = teacher;
		if (on_epoch)
			on_epoch(row);
		const bool has_dev = data.dev && !data.dev->empty();
		if (!has_dev || row.dev_mean > best_dev || epoch == 1) {
			best_dev = row.dev_mean;
			result.best = current;
		}
	}
	result.last = current;
	result.best.history = current.history;
	return result;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader =
	"strategy,train_set,unlabeled_set,test_set,seed,epoch,split,si_snri_db_mean,si_snri_db_std,loss";

struct MetricsRow {
	std::string strategy;
	std::string train_set;
	std::string unlabeled_set;
	std::string test_set;
	std::uint64_t seed = 0;
	int epoch = 0;
	std::string split;
	double mean = 0.0;
	double std = 0.0;
	double loss = 0.0;
};

inline std::string format_metrics_row(const MetricsRow& r) {
	using dsp::format_double;
	return r.strategy + "," + r.train_set + "," + r.unlabeled_set + "," + r.test_set + "," + std::to_string(r.seed) +
		"," + std::to_string(r.epoch) + "," + r.split + "," + format_double(r.mean) + "," + format_double(r.std) + "," +
		format_double(r.loss);
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
	std::ofstream out(path, std::ios::trunc);
	if (!out)
		throw IoError("cannot open for writing: " + path.string());
	out << kMetricsHeader << '\n';
	for (const auto& r : rows)
		out << format_metrics_row(r) << '\n';
	if (!out)
		throw IoError("write failed: " + path.string());
}

/// One dev row per epoch, in epoch order.
inline std::vector<MetricsRow> history_rows(const Checkpoint& ckpt, const TrainData& data) {
	std::vector<MetricsRow> rows;
	for (const auto& h : ckpt.history)
		rows.push_back({ckpt.strategy, data.labeled_name, data.unlabeled_name, data.dev_name, ckpt.seed, h.epoch, "dev",
				h.dev_mean, h.dev_std, h.train_loss});
	return rows;
}

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.csv";

/// train() plus its on-disk artifacts: best-dev checkpoint and per-epoch metrics.
inline TrainResult train_to_dir(const TrainConfig& cfg, const TrainData& data, const std::filesystem::path& out_dir,
		const std::function<void(const HistoryRow&)>& on_epoch = {}) {
	std::error_code ec;
	std::filesystem::create_directories(out_dir, ec);
	if (ec)
		throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());
	TrainResult r = train(cfg, data, on_epoch);
	checkpoint_write(r.best, out_dir / kCheckpointFile);
	write_metrics_csv(out_dir / kMetricsFile, history_rows(r.best, data));
	return r;
}

}  // namespace mbt::train
