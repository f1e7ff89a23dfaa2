// Mini-batch training of the encoder and worker preferences.
#pragma once

#include <mvt/error.hpp>
#include <mvt/model.hpp>
#include <mvt/objective.hpp>
#include <mvt/rng.hpp>
#include <mvt/types.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mvt {

enum class OptimizerKind { sgd_momentum, adam };

struct TrainConfig {
	int epochs = 100;
	int batch_size = 64;
	double learning_rate = 1e-3;
	OptimizerKind optimizer = OptimizerKind::adam;
	double momentum = 0.9; // sgd-momentum
	double beta1 = 0.9;
	double beta2 = 0.999;
	double epsilon = 1e-8;
	std::uint64_t seed = 0;
	bool use_entropy = true;
	bool entropy_stop_gradient = false;
	/// Training is single-threaded with a fixed reduction order either way; the
	/// flag is recorded so callers can demand bit-reproducible runs.
	bool deterministic = true;
	int checkpoint_every = 0;

	void validate() const {
		if (epochs < 0)
			throw ConfigError("epochs must be >= 0");
		if (batch_size < 1)
			throw ConfigError("batch_size must be >= 1");
		if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
			throw ConfigError("learning_rate must be finite and >= 0");
		if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0))
			throw ConfigError("invalid adam parameters");
		if (!(momentum >= 0 && momentum < 1))
			throw ConfigError("momentum must lie in [0, 1)");
	}
};

/// Adam or SGD with momentum over every parameter block. Worker preference
/// rows are updated only when the batch touches them, so that their moment
/// estimates (and values) stay frozen while a worker is absent.
class Optimizer {
public:
	Optimizer(const ModelParams& shape, const TrainConfig& cfg)
		: cfg_(cfg), first_(shape.zeros_like()), second_(shape.zeros_like()) {}

	void step(ModelParams& params, const ModelParams& grads, std::span<const std::size_t> active_workers) {
		++t_;
		// Worker rows may have been appended since construction.
		grow(first_, params);
		grow(second_, params);
		std::vector<Eigen::Map<Vector>> p_blocks, m_blocks, v_blocks;
		std::vector<Eigen::Map<const Vector>> g_blocks;
		params.for_each_block([&](auto b) { p_blocks.push_back(b); });
		first_.for_each_block([&](auto b) { m_blocks.push_back(b); });
		second_.for_each_block([&](auto b) { v_blocks.push_back(b); });
		grads.for_each_block([&](auto b) { g_blocks.push_back(b); });

		const std::size_t last = p_blocks.size() - 1; // worker_prefs is visited last
		for (std::size_t b = 0; b < last; ++b)
			update(p_blocks[b], m_blocks[b], v_blocks[b], g_blocks[b]);

		const Eigen::Index rows = params.worker_prefs.rows();
		for (std::size_t row : active_workers)
			for (Eigen::Index v = 0; v < params.worker_prefs.cols(); ++v) {
				// Column-major storage: entry (row, v) sits at row + v * rows.
				const Eigen::Index at = static_cast<Eigen::Index>(row) + v * rows;
				update_entry(p_blocks[last](at), m_blocks[last](at), v_blocks[last](at), g_blocks[last](at));
			}
	}

	long steps() const { return t_; }

private:
	static void grow(ModelParams& state, const ModelParams& params) {
		const Eigen::Index old_rows = state.worker_prefs.rows();
		if (old_rows == params.worker_prefs.rows())
			return;
		Matrix bigger = Matrix::Zero(params.worker_prefs.rows(), params.worker_prefs.cols());
		bigger.topRows(old_rows) = state.worker_prefs;
		state.worker_prefs = std::move(bigger);
		state.worker_ids = params.worker_ids;
	}

	template <typename P, typename M, typename V, typename G>
	void update(P&& p, M&& m, V&& v, const G& g) const {
		for (Eigen::Index n = 0; n < p.size(); ++n)
			update_entry(p(n), m(n), v(n), g(n));
	}

	void update_entry(double& p, double& m, double& v, double g) const {
		if (cfg_.optimizer == OptimizerKind::adam) {
			m = cfg_.beta1 * m + (1 - cfg_.beta1) * g;
			v = cfg_.beta2 * v + (1 - cfg_.beta2) * g * g;
			const double mhat = m / (1 - std::pow(cfg_.beta1, static_cast<double>(t_)));
			const double vhat = v / (1 - std::pow(cfg_.beta2, static_cast<double>(t_)));
			p -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
		} else {
			m = cfg_.momentum * m + g;
			p -= cfg_.learning_rate * m;
		}
	}

	TrainConfig cfg_;
	ModelParams first_;
	ModelParams second_;
	long t_ = 0;
};

struct EpochReport {
	int epoch = 0; // 1-based
	double mean_loss = 0.0;
	const ModelParams* params = nullptr;
};

using ProgressSink = std::function<void(const EpochReport&)>;

struct TrainResult {
	ModelParams params;
	std::vector<double> loss_history;
};

/// Appends rows, uniform on [0, 1), for workers seen in `triplets` but absent
/// from `params`, in first-appearance order.
inline void ensure_workers(ModelParams& params, std::span<const TripletAnnotation> triplets, std::uint64_t seed) {
	Engine engine(derive_seed(seed, stream::worker_prefs) ^ 0x5bd1e995ULL);
	for (const auto& t : triplets)
		if (!params.has_worker(t.worker))
			add_worker(params, t.worker, engine);
}

/// Worker ids in first-appearance order.
inline std::vector<std::string> workers_in(std::span<const TripletAnnotation> triplets) {
	std::vector<std::string> ids;
	for (const auto& t : triplets)
		if (std::find(ids.begin(), ids.end(), t.worker) == ids.end())
			ids.push_back(t.worker);
	return ids;
}

inline TrainResult train(ModelParams params, const EncoderConfig& config, const ItemStore& items,
						 std::span<const TripletAnnotation> triplets, const TrainConfig& cfg,
						 const ProgressSink& progress = {}) {
	cfg.validate();
	check_shapes(params, config);
	ensure_workers(params, triplets, cfg.seed);
	// Resolve every reference up front so bad ids fail before any update.
	(void)ResolvedBatch::resolve(params, items, triplets);

	TrainResult result;
	if (cfg.epochs == 0 || triplets.empty()) {
		result.params = std::move(params);
		return result;
	}

	Optimizer optimizer(params, cfg);
	Engine shuffler(derive_seed(cfg.seed, stream::shuffle));
	std::vector<std::size_t> order(triplets.size());
	std::iota(order.begin(), order.end(), std::size_t{0});
	std::vector<TripletAnnotation> batch;
	std::vector<std::size_t> active;

	for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
		shuffle(order, shuffler);
		double loss_sum = 0.0;
		for (std::size_t start = 0, batch_no = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
			const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
			batch.clear();
			for (std::size_t n = start; n < end; ++n)
				batch.push_back(triplets[order[n]]);

			const LossAndGrads lg =
				loss_and_gradients(params, config, items, batch, cfg.use_entropy, cfg.entropy_stop_gradient);
			if (!std::isfinite(lg.loss) || !lg.grads.all_finite()) {
				const std::size_t bad = lg.bad_triplet >= 0 ? static_cast<std::size_t>(lg.bad_triplet) : 0;
				const auto& t = batch[bad];
				throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
								   std::to_string(batch_no) + ", triplet " + t.worker + "," + std::to_string(t.i) +
								   "," + std::to_string(t.j) + "," + std::to_string(t.k));
			}
			loss_sum += lg.loss * static_cast<double>(batch.size());

			active.clear();
			for (const auto& t : batch) {
				const std::size_t row = params.worker_row(t.worker);
				if (std::find(active.begin(), active.end(), row) == active.end())
					active.push_back(row);
			}
			std::sort(active.begin(), active.end());
			optimizer.step(params, lg.grads, active);
		}
		result.loss_history.push_back(loss_sum / static_cast<double>(triplets.size()));
		if (progress)
			progress({epoch, result.loss_history.back(), &params});
	}
	result.params = std::move(params);
	return result;
}

/// Initializes a model for the workers in `triplets` and trains it.
inline TrainResult fit(const EncoderConfig& config, const ItemStore& items,
					   std::span<const TripletAnnotation> triplets, const TrainConfig& cfg,
					   const ProgressSink& progress = {}) {
	std::vector<std::string> workers = workers_in(triplets);
	if (workers.empty())
		throw ArgumentError("fit: no triplets");
	return train(init_params(config, workers, config.seed), config, items, triplets, cfg, progress);
}

/// The single-view baseline: identical machinery with one view, where the
/// combined view weight is always exactly 1.
inline TrainResult train_single_view_baseline(EncoderConfig config, const ItemStore& items,
											  std::span<const TripletAnnotation> triplets, const TrainConfig& cfg,
											  const ProgressSink& progress = {}) {
	config.num_views = 1;
	return fit(config, items, triplets, cfg, progress);
}

} // namespace mvt
