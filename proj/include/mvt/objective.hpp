// Triplet likelihood of the multiview worker model and its exact gradients.
//
// For one triplet (i, j, k) answered by worker m:
//   per view v:   s_v(a, b) = exp(-|y_a - y_b|^2)
//                 p_v       = normalized (s_v(i,j), s_v(i,k), s_v(j,k))
//                 H_v       = entropy(p_v),  inherent_v = (log 3 - H_v) / log 3
//   weights:      q = softmax(inherent + w_m)   (or softmax(w_m) without entropy)
//   mixed:        s(a, b) = sum_v q_v s_v(a, b)
//   choice:       P = normalized (s(i,j), s(i,k), s(j,k))
//   loss:         -mean over all triplets of log P(i,j)
//
// Everything is evaluated in log space. The mixture over views is a
// log-sum-exp per pair, which factors out the largest exponent across views.
#pragma once

#include <mvt/error.hpp>
#include <mvt/model.hpp>
#include <mvt/types.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

namespace mvt {

inline const double kLog3 = std::log(3.0);

/// Pair slots in every three-way quantity: (i,j), (i,k), (j,k).
enum PairSlot : int { kPairIJ = 0, kPairIK = 1, kPairJK = 2 };

/// Within-view probabilities that each pair is the most similar.
struct ViewPairProbs {
	std::array<double, 3> p{};

	double ij_k() const { return p[kPairIJ]; }
	double ik_j() const { return p[kPairIK]; }
	double jk_i() const { return p[kPairJK]; }
	double operator[](int c) const { return p[static_cast<std::size_t>(c)]; }
};

/// Per-view weights of one triplet for one worker.
struct TripletWeights {
	std::vector<double> entropy;
	std::vector<double> inherent;
	std::vector<double> combined_raw;
	std::vector<double> combined;
};

/// Probabilities that the worker picks (i,j), (i,k), (j,k).
struct WorkerChoiceProbs {
	std::array<double, 3> p{};

	double operator[](int c) const { return p[static_cast<std::size_t>(c)]; }

	/// Slot with the strictly largest probability, or -1 on a tie.
	int argmax() const {
		int best = 0;
		for (int c = 1; c < 3; ++c)
			if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)])
				best = c;
		for (int c = 0; c < 3; ++c)
			if (c != best && p[static_cast<std::size_t>(c)] == p[static_cast<std::size_t>(best)])
				return -1;
		return best;
	}
};

namespace detail {

template <std::size_t N>
double log_sum_exp(const std::array<double, N>& x) {
	double m = x[0];
	for (double v : x)
		m = std::max(m, v);
	if (m == -INFINITY)
		return m;
	double s = 0.0;
	for (double v : x)
		s += std::exp(v - m);
	return m + std::log(s);
}

inline double log_sum_exp(std::span<const double> x) {
	double m = -INFINITY;
	for (double v : x)
		m = std::max(m, v);
	if (m == -INFINITY)
		return m;
	double s = 0.0;
	for (double v : x)
		s += std::exp(v - m);
	return m + std::log(s);
}

template <typename A, typename B>
void check_same_length(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
	if (a.size() != b.size())
		throw ShapeError("embedding lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

} // namespace detail

template <typename A, typename B>
double squared_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
	detail::check_same_length(a, b);
	return (a.derived().reshaped() - b.derived().reshaped()).squaredNorm();
}

/// exp(-|a - b|^2). Underflows to 0 beyond |a - b| ~ 27; the loss never uses this form.
template <typename A, typename B>
double view_similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
	return std::exp(-squared_distance(a, b));
}

/// Softmax of the three negated squared distances (max-subtracted).
inline std::array<double, 3> pair_log_probs(const std::array<double, 3>& logits) {
	const double lse = detail::log_sum_exp(logits);
	return {logits[0] - lse, logits[1] - lse, logits[2] - lse};
}

template <typename A, typename B, typename C>
ViewPairProbs view_pair_probs(const Eigen::MatrixBase<A>& yi, const Eigen::MatrixBase<B>& yj,
							  const Eigen::MatrixBase<C>& yk) {
	const std::array<double, 3> logits{-squared_distance(yi, yj), -squared_distance(yi, yk),
									   -squared_distance(yj, yk)};
	for (double l : logits)
		if (!std::isfinite(l))
			throw NumericError("view_pair_probs: non-finite embedding");
	const auto lp = pair_log_probs(logits);
	ViewPairProbs out;
	for (std::size_t c = 0; c < 3; ++c)
		out.p[c] = std::exp(lp[c]);
	return out;
}

inline double triplet_entropy(const ViewPairProbs& probs) {
	double h = 0.0;
	for (double p : probs.p)
		if (p > 0.0)
			h -= p * std::log(p);
	return h;
}

/// (log 3 - h) / log 3. Values within 1e-12 outside [0, log 3] are clamped.
inline double inherent_weight(double h) {
	constexpr double slack = 1e-12;
	if (!(h >= -slack && h <= kLog3 + slack))
		throw NumericError("inherent_weight: entropy " + std::to_string(h) + " outside [0, log 3]");
	h = std::clamp(h, 0.0, kLog3);
	return (kLog3 - h) / kLog3;
}

/// softmax(inherent + worker_pref), or softmax(worker_pref) when entropy is disabled.
inline std::vector<double> combined_weights(std::span<const double> inherent, std::span<const double> worker_pref,
											bool use_entropy) {
	if (inherent.size() != worker_pref.size())
		throw ShapeError("combined_weights: view counts differ");
	std::vector<double> q(worker_pref.begin(), worker_pref.end());
	if (use_entropy)
		for (std::size_t v = 0; v < q.size(); ++v)
			q[v] += inherent[v];
	const double lse = detail::log_sum_exp(q);
	for (double& x : q)
		x = std::exp(x - lse);
	return q;
}

/// Every intermediate of one triplet evaluation, kept for the backward pass.
struct TripletTerms {
	std::size_t views = 0;
	std::vector<std::array<double, 3>> logits;    // -d^2 per view and pair
	std::vector<std::array<double, 3>> log_probs; // log p_v per view and pair
	std::vector<double> entropy;
	std::vector<double> inherent;
	std::vector<double> combined_raw;
	std::vector<double> log_combined;
	std::array<double, 3> log_mixed{};  // log s(pair)
	std::array<double, 3> log_choice{}; // log P(pair)

	WorkerChoiceProbs choice() const {
		WorkerChoiceProbs out;
		for (std::size_t c = 0; c < 3; ++c)
			out.p[c] = std::exp(log_choice[c]);
		return out;
	}

	TripletWeights weights() const {
		TripletWeights w{entropy, inherent, combined_raw, {}};
		for (double lq : log_combined)
			w.combined.push_back(std::exp(lq));
		return w;
	}
};

/// Evaluates the worker model on one triplet. `yi`, `yj`, `yk` are V x D
/// (or any views x dims layout accessed through `row(v)`).
template <typename MI, typename MJ, typename MK>
TripletTerms evaluate_triplet(const MI& yi, const MJ& yj, const MK& yk, std::span<const double> worker_pref,
							  bool use_entropy) {
	const auto views = static_cast<std::size_t>(yi.rows());
	if (static_cast<std::size_t>(yj.rows()) != views || static_cast<std::size_t>(yk.rows()) != views ||
		worker_pref.size() != views)
		throw ShapeError("worker_choice_probs: view counts differ");
	if (yj.cols() != yi.cols() || yk.cols() != yi.cols())
		throw ShapeError("worker_choice_probs: embedding dims differ");

	TripletTerms t;
	t.views = views;
	t.logits.resize(views);
	t.log_probs.resize(views);
	t.entropy.resize(views);
	t.inherent.resize(views);
	t.combined_raw.resize(views);
	t.log_combined.resize(views);
	for (std::size_t v = 0; v < views; ++v) {
		const auto r = static_cast<Eigen::Index>(v);
		auto& a = t.logits[v];
		a = {-(yi.row(r) - yj.row(r)).squaredNorm(), -(yi.row(r) - yk.row(r)).squaredNorm(),
			 -(yj.row(r) - yk.row(r)).squaredNorm()};
		for (double x : a)
			if (!std::isfinite(x))
				throw NumericError("worker_choice_probs: non-finite embedding");
		t.log_probs[v] = pair_log_probs(a);
		double h = 0.0;
		for (double lp : t.log_probs[v])
			h -= std::exp(lp) * lp;
		t.entropy[v] = h;
		t.inherent[v] = inherent_weight(h);
		t.combined_raw[v] = worker_pref[v] + (use_entropy ? t.inherent[v] : 0.0);
	}
	const double lse_q = detail::log_sum_exp(std::span<const double>(t.combined_raw));
	for (std::size_t v = 0; v < views; ++v)
		t.log_combined[v] = t.combined_raw[v] - lse_q;

	std::vector<double> terms(views);
	for (std::size_t c = 0; c < 3; ++c) {
		for (std::size_t v = 0; v < views; ++v)
			terms[v] = t.log_combined[v] + t.logits[v][c];
		t.log_mixed[c] = detail::log_sum_exp(std::span<const double>(terms));
	}
	const double lse_s = detail::log_sum_exp(t.log_mixed);
	for (std::size_t c = 0; c < 3; ++c)
		t.log_choice[c] = t.log_mixed[c] - lse_s;
	return t;
}

template <typename MI, typename MJ, typename MK>
std::pair<WorkerChoiceProbs, TripletWeights> worker_choice_probs(const MI& yi, const MJ& yj, const MK& yk,
																  std::span<const double> worker_pref,
																  bool use_entropy) {
	const TripletTerms t = evaluate_triplet(yi, yj, yk, worker_pref, use_entropy);
	return {t.choice(), t.weights()};
}

/// Gradients of `scale * (-log P(i,j))` for one evaluated triplet.
struct TripletGrads {
	Matrix yi, yj, yk;        // V x D
	std::vector<double> pref; // V
};

template <typename MI, typename MJ, typename MK>
TripletGrads triplet_backward(const TripletTerms& t, const MI& yi, const MJ& yj, const MK& yk, double scale,
							  bool use_entropy, bool entropy_stop_gradient) {
	const std::size_t views = t.views;
	const Eigen::Index dims = yi.cols();
	TripletGrads g{Matrix::Zero(yi.rows(), dims), Matrix::Zero(yi.rows(), dims), Matrix::Zero(yi.rows(), dims),
				   std::vector<double>(views, 0.0)};

	// dL/ds_c * s_c, with P the choice probabilities.
	std::array<double, 3> excess{};
	for (std::size_t c = 0; c < 3; ++c)
		excess[c] = std::exp(t.log_choice[c]) - (c == kPairIJ ? 1.0 : 0.0);

	// resp[v][c] = q_v s_v(c) / s(c): share of view v in the mixed pair similarity.
	std::vector<std::array<double, 3>> resp(views);
	std::vector<double> view_mass(views, 0.0);
	double total_mass = 0.0;
	for (std::size_t v = 0; v < views; ++v) {
		for (std::size_t c = 0; c < 3; ++c) {
			resp[v][c] = std::exp(t.log_combined[v] + t.logits[v][c] - t.log_mixed[c]);
			view_mass[v] += excess[c] * resp[v][c];
		}
		total_mass += view_mass[v];
	}

	for (std::size_t v = 0; v < views; ++v) {
		const double q = std::exp(t.log_combined[v]);
		const double grad_raw = view_mass[v] - q * total_mass; // dL/d(combined_raw_v)
		g.pref[v] = scale * grad_raw;

		std::array<double, 3> grad_logit{};
		for (std::size_t c = 0; c < 3; ++c)
			grad_logit[c] = excess[c] * resp[v][c];
		if (use_entropy && !entropy_stop_gradient) {
			// inherent = (log 3 - H) / log 3, and dH/da_c = -p_c (log p_c + H).
			const double grad_entropy = -grad_raw / kLog3;
			for (std::size_t c = 0; c < 3; ++c) {
				const double lp = t.log_probs[v][c];
				grad_logit[c] += grad_entropy * (-std::exp(lp) * (lp + t.entropy[v]));
			}
		}

		// logits are -d^2, d^2_ab = |y_a - y_b|^2.
		const auto r = static_cast<Eigen::Index>(v);
		const auto dij = (yi.row(r) - yj.row(r)).eval();
		const auto dik = (yi.row(r) - yk.row(r)).eval();
		const auto djk = (yj.row(r) - yk.row(r)).eval();
		const double sij = -2.0 * scale * grad_logit[kPairIJ];
		const double sik = -2.0 * scale * grad_logit[kPairIK];
		const double sjk = -2.0 * scale * grad_logit[kPairJK];
		g.yi.row(r) += sij * dij + sik * dik;
		g.yj.row(r) += -sij * dij + sjk * djk;
		g.yk.row(r) += -sik * dik - sjk * djk;
	}
	return g;
}

/// Triplets resolved against an item store and a parameter set: unique item
/// columns in first-appearance order and worker rows per triplet.
struct ResolvedBatch {
	std::vector<std::size_t> item_positions;  // store positions of unique items
	std::vector<std::array<Eigen::Index, 3>> columns; // per triplet: batch columns of i, j, k
	std::vector<std::size_t> worker_rows;

	static ResolvedBatch resolve(const ModelParams& params, const ItemStore& items,
								 std::span<const TripletAnnotation> triplets) {
		ResolvedBatch b;
		std::unordered_map<std::size_t, Eigen::Index> column_of;
		std::unordered_map<std::string, std::size_t> worker_cache;
		auto column = [&](ItemId id) {
			const std::size_t pos = items.position(id);
			auto [it, inserted] = column_of.try_emplace(pos, static_cast<Eigen::Index>(b.item_positions.size()));
			if (inserted)
				b.item_positions.push_back(pos);
			return it->second;
		};
		for (const auto& t : triplets) {
			if (!t.distinct())
				throw ArgumentError("triplet items must be pairwise distinct");
			auto w = worker_cache.find(t.worker);
			if (w == worker_cache.end())
				w = worker_cache.emplace(t.worker, params.worker_row(t.worker)).first;
			b.worker_rows.push_back(w->second);
			b.columns.push_back({column(t.i), column(t.j), column(t.k)});
		}
		return b;
	}

	Matrix stack(const ItemStore& items, const EncoderConfig& config) const {
		Matrix x(config.input.size(), static_cast<Eigen::Index>(item_positions.size()));
		for (std::size_t n = 0; n < item_positions.size(); ++n)
			x.col(static_cast<Eigen::Index>(n)) = flatten(items.tensors()[item_positions[n]], config);
		return x;
	}
};

namespace detail {

/// V x D view of batch column `col` across the per-view D x n embedding matrices.
inline Matrix gather_embedding(const ForwardCache& cache, std::size_t views, Eigen::Index col) {
	Matrix y(static_cast<Eigen::Index>(views), cache.embedding(0).rows());
	for (std::size_t v = 0; v < views; ++v)
		y.row(static_cast<Eigen::Index>(v)) = cache.embedding(v).col(col).transpose();
	return y;
}

inline std::span<const double> pref_row(const ModelParams& params, std::size_t row, std::vector<double>& buf) {
	buf.resize(static_cast<std::size_t>(params.worker_prefs.cols()));
	for (std::size_t v = 0; v < buf.size(); ++v)
		buf[v] = params.worker_prefs(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(v));
	return buf;
}

} // namespace detail

/// Loss and gradients of one mini-batch.
struct LossAndGrads {
	double loss = 0.0;
	ModelParams grads;
	/// Index of the first triplet whose term was non-finite, if any.
	std::ptrdiff_t bad_triplet = -1;
};

/// Mean negative log-likelihood of the annotated pairs over `triplets`.
inline double batch_loss(const ModelParams& params, const EncoderConfig& config, const ItemStore& items,
						 std::span<const TripletAnnotation> triplets, bool use_entropy) {
	if (triplets.empty())
		throw ArgumentError("batch_loss: no triplets");
	const ResolvedBatch batch = ResolvedBatch::resolve(params, items, triplets);
	const ForwardCache cache = forward_batch(params, config, batch.stack(items, config));
	const auto views = static_cast<std::size_t>(config.num_views);
	std::vector<double> buf;
	double total = 0.0;
	for (std::size_t t = 0; t < triplets.size(); ++t) {
		const auto& cols = batch.columns[t];
		const TripletTerms terms = evaluate_triplet(detail::gather_embedding(cache, views, cols[0]),
													detail::gather_embedding(cache, views, cols[1]),
													detail::gather_embedding(cache, views, cols[2]),
													detail::pref_row(params, batch.worker_rows[t], buf), use_entropy);
		total -= terms.log_choice[kPairIJ];
	}
	return total / static_cast<double>(triplets.size());
}

/// Exact reverse-mode gradients of batch_loss with respect to every parameter.
inline LossAndGrads loss_and_gradients(const ModelParams& params, const EncoderConfig& config,
									   const ItemStore& items, std::span<const TripletAnnotation> triplets,
									   bool use_entropy, bool entropy_stop_gradient = false) {
	if (triplets.empty())
		throw ArgumentError("loss_gradients: no triplets");
	const ResolvedBatch batch = ResolvedBatch::resolve(params, items, triplets);
	const ForwardCache cache = forward_batch(params, config, batch.stack(items, config));
	const auto views = static_cast<std::size_t>(config.num_views);
	const double scale = 1.0 / static_cast<double>(triplets.size());

	LossAndGrads out{0.0, params.zeros_like(), -1};
	std::vector<Matrix> embedding_grads(views, Matrix::Zero(config.embed_dim, cache.shared().cols()));
	std::vector<double> buf;
	for (std::size_t t = 0; t < triplets.size(); ++t) {
		const auto& cols = batch.columns[t];
		const Matrix yi = detail::gather_embedding(cache, views, cols[0]);
		const Matrix yj = detail::gather_embedding(cache, views, cols[1]);
		const Matrix yk = detail::gather_embedding(cache, views, cols[2]);
		TripletTerms terms;
		try {
			terms = evaluate_triplet(yi, yj, yk, detail::pref_row(params, batch.worker_rows[t], buf), use_entropy);
		} catch (const NumericError&) {
			out.loss = std::numeric_limits<double>::quiet_NaN();
			out.bad_triplet = static_cast<std::ptrdiff_t>(t);
			return out;
		}
		const double term = -terms.log_choice[kPairIJ];
		if (!std::isfinite(term) && out.bad_triplet < 0)
			out.bad_triplet = static_cast<std::ptrdiff_t>(t);
		out.loss += term * scale;

		const TripletGrads g = triplet_backward(terms, yi, yj, yk, scale, use_entropy, entropy_stop_gradient);
		for (std::size_t v = 0; v < views; ++v) {
			const auto r = static_cast<Eigen::Index>(v);
			embedding_grads[v].col(cols[0]) += g.yi.row(r).transpose();
			embedding_grads[v].col(cols[1]) += g.yj.row(r).transpose();
			embedding_grads[v].col(cols[2]) += g.yk.row(r).transpose();
			out.grads.worker_prefs(static_cast<Eigen::Index>(batch.worker_rows[t]), r) += g.pref[v];
		}
	}
	backward_batch(params, config, cache, embedding_grads, out.grads);
	return out;
}

inline ModelParams loss_gradients(const ModelParams& params, const EncoderConfig& config, const ItemStore& items,
								  std::span<const TripletAnnotation> triplets, bool use_entropy,
								  bool entropy_stop_gradient = false) {
	return loss_and_gradients(params, config, items, triplets, use_entropy, entropy_stop_gradient).grads;
}

} // namespace mvt
