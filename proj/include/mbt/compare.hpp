#pragma once

// Strategy x unlabeled-set x seed training matrix, evaluated on every test set.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "mbt/corpus.hpp"
#include "mbt/error.hpp"
#include "mbt/ssl.hpp"
#include "mbt/trainer.hpp"

namespace mbt::compare {

inline constexpr const char* kNoUnlabeled = "none";

struct NamedLabeled {
	std::string name;
	const std::vector<dsp::LabeledExample>* examples = nullptr;
};

struct NamedUnlabeled {
	std::string name;  ///< kNoUnlabeled for the empty set
	const std::vector<dsp::UnlabeledExample>* examples = nullptr;
};

struct Matrix {
	train::TrainConfig base;  ///< strategy and seed are overridden per cell
	std::vector<ssl::Strategy> strategies;
	std::vector<std::uint64_t> seeds;
	NamedLabeled labeled;
	std::vector<NamedUnlabeled> unlabeled;
	std::vector<NamedLabeled> tests;
	NamedLabeled dev;  ///< optional; empty name when absent
	bool use_teacher = false;
};

struct CellId {
	ssl::Strategy strategy = ssl::Strategy::ERM;
	std::string unlabeled;
	std::uint64_t seed = 0;

	std::string str() const {
		return "strategy=" + std::string(ssl::strategy_name(strategy)) + " unlabeled=" + unlabeled +
			" seed=" + std::to_string(seed);
	}
};

using Progress = std::function<void(const CellId&, const train::MetricsRow&)>;

/// One row per (strategy, unlabeled set, seed, test set), in that nesting
/// order. Strategies without a teacher never see unlabeled data, so their
/// cells are trained once per seed and reused across unlabeled sets.
inline std::vector<train::MetricsRow> run(const Matrix& m, const Progress& progress = {}) {
	if (m.strategies.empty() || m.seeds.empty() || m.unlabeled.empty() || m.tests.empty())
		throw ConfigError("compare: strategies, seeds, unlabeled sets and test sets must all be non-empty");
	if (!m.labeled.examples)
		throw ConfigError("compare: no labeled training set");

	std::map<std::pair<ssl::Strategy, std::uint64_t>, train::Checkpoint> supervised_cache;
	std::vector<train::MetricsRow> rows;
	for (ssl::Strategy strategy : m.strategies) {
		for (const auto& u : m.unlabeled) {
			for (std::uint64_t seed : m.seeds) {
				const CellId id{strategy, u.name, seed};
				try {
					train::TrainConfig cfg = m.base;
					cfg.strategy.strategy = strategy;
					cfg.seed = seed;
					train::TrainData data;
					data.labeled = m.labeled.examples;
					data.labeled_name = m.labeled.name;
					data.unlabeled = u.examples;
					data.unlabeled_name = u.name;
					data.dev = m.dev.examples;
					data.dev_name = m.dev.examples ? m.dev.name : "none";

					train::Checkpoint ckpt;
					const auto key = std::make_pair(strategy, seed);
					if (!ssl::uses_teacher(strategy) && supervised_cache.count(key)) {
						ckpt = supervised_cache.at(key);
					} else {
						ckpt = train::train(cfg, data).best;
						if (!ssl::uses_teacher(strategy))
							supervised_cache[key] = ckpt;
					}
					double best_loss = 0.0;
					for (const auto& h : ckpt.history)
						if (h.epoch == ckpt.epoch)
							best_loss = h.train_loss;
					for (const auto& test : m.tests) {
						const auto metrics = train::evaluate(ckpt, *test.examples, m.use_teacher);
						train::MetricsRow row{std::string(ssl::strategy_name(strategy)), m.labeled.name, u.name,
								test.name, seed, ckpt.epoch, "test", metrics.mean, metrics.std, best_loss};
						if (progress)
							progress(id, row);
						rows.push_back(std::move(row));
					}
				} catch (const std::exception& e) {
					throw Error("compare cell " + id.str() + " failed: " + e.what());
				}
			}
		}
	}
	return rows;
}

}  // namespace mbt::compare
