// Embedding quality metrics and the worker preference report.
#pragma once

#include <mvt/crowdsim.hpp>
#include <mvt/error.hpp>
#include <mvt/model.hpp>
#include <mvt/objective.hpp>
#include <mvt/rng.hpp>
#include <mvt/types.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvt {

/// Points are the rows of a Matrix.
using Points = Matrix;

// ---------------------------------------------------------------------------
// Triplet accuracy

/// Fraction of triplets whose annotated pair (i, j) gets the strictly highest
/// choice probability for the annotating worker.
inline double triplet_accuracy(const ModelParams& params, const EncoderConfig& config, const ItemStore& items,
							   std::span<const TripletAnnotation> triplets, bool use_entropy = true) {
	if (triplets.empty())
		throw ArgumentError("triplet_accuracy: no triplets");
	const ResolvedBatch batch = ResolvedBatch::resolve(params, items, triplets);
	const ForwardCache cache = forward_batch(params, config, batch.stack(items, config));
	const auto views = static_cast<std::size_t>(config.num_views);
	std::vector<double> pref;
	std::size_t correct = 0;
	for (std::size_t t = 0; t < triplets.size(); ++t) {
		const Matrix yi = detail::gather_embedding(cache, views, batch.columns[t][0]);
		const Matrix yj = detail::gather_embedding(cache, views, batch.columns[t][1]);
		const Matrix yk = detail::gather_embedding(cache, views, batch.columns[t][2]);
		const auto terms =
			evaluate_triplet(yi, yj, yk, detail::pref_row(params, batch.worker_rows[t], pref), use_entropy);
		if (terms.choice().argmax() == kPairIJ)
			++correct;
	}
	return static_cast<double>(correct) / static_cast<double>(triplets.size());
}

// ---------------------------------------------------------------------------
// Clustering

inline double squared_euclidean(const Points& p, Eigen::Index a, const Points& q, Eigen::Index b) {
	return (p.row(a) - q.row(b)).squaredNorm();
}

/// Relabels cluster ids to 0, 1, ... in order of first appearance.
inline std::vector<int> canonical_labels(const std::vector<int>& assignment) {
	std::unordered_map<int, int> remap;
	std::vector<int> out;
	out.reserve(assignment.size());
	for (int a : assignment)
		out.push_back(remap.try_emplace(a, static_cast<int>(remap.size())).first->second);
	return out;
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or 300 iterations have run.
inline std::vector<int> kmeans(const Points& points, int k, std::uint64_t seed) {
	const Eigen::Index n = points.rows();
	if (k < 1 || k > n)
		throw ArgumentError("kmeans: need 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
	Engine engine(derive_seed(seed, stream::kmeans));

	Points centers(k, points.cols());
	centers.row(0) = points.row(static_cast<Eigen::Index>(uniform_index(engine, static_cast<std::uint64_t>(n))));
	std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
	for (int c = 1; c < k; ++c) {
		double total = 0.0;
		for (Eigen::Index i = 0; i < n; ++i) {
			auto& d = nearest[static_cast<std::size_t>(i)];
			d = std::min(d, squared_euclidean(points, i, centers, c - 1));
			total += d;
		}
		Eigen::Index pick = n - 1;
		if (total > 0.0) {
			double target = uniform01(engine) * total;
			for (Eigen::Index i = 0; i < n; ++i) {
				target -= nearest[static_cast<std::size_t>(i)];
				if (target < 0.0) {
					pick = i;
					break;
				}
			}
		} else {
			pick = static_cast<Eigen::Index>(uniform_index(engine, static_cast<std::uint64_t>(n)));
		}
		centers.row(c) = points.row(pick);
	}

	std::vector<int> assign(static_cast<std::size_t>(n), -1);
	for (int iter = 0; iter < 300; ++iter) {
		bool changed = false;
		for (Eigen::Index i = 0; i < n; ++i) {
			int best = 0;
			double best_d = squared_euclidean(points, i, centers, 0);
			for (int c = 1; c < k; ++c) {
				const double d = squared_euclidean(points, i, centers, c);
				if (d < best_d) {
					best_d = d;
					best = c;
				}
			}
			if (assign[static_cast<std::size_t>(i)] != best) {
				assign[static_cast<std::size_t>(i)] = best;
				changed = true;
			}
		}
		if (!changed)
			break;
		Points sums = Points::Zero(k, points.cols());
		std::vector<int> counts(static_cast<std::size_t>(k), 0);
		for (Eigen::Index i = 0; i < n; ++i) {
			sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
			++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
		}
		for (int c = 0; c < k; ++c)
			if (counts[static_cast<std::size_t>(c)] > 0) // empty clusters keep their center
				centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
	}
	return assign;
}

/// Average-linkage agglomerative clustering on Euclidean distances, cut at k.
inline std::vector<int> agglomerative(const Points& points, int k) {
	const Eigen::Index n = points.rows();
	if (k < 1 || k > n)
		throw ArgumentError("agglomerative: need 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
	const auto un = static_cast<std::size_t>(n);
	std::vector<double> dist(un * un, 0.0);
	for (Eigen::Index a = 0; a < n; ++a)
		for (Eigen::Index b = a + 1; b < n; ++b) {
			const double d = std::sqrt(squared_euclidean(points, a, points, b));
			dist[static_cast<std::size_t>(a) * un + static_cast<std::size_t>(b)] = d;
			dist[static_cast<std::size_t>(b) * un + static_cast<std::size_t>(a)] = d;
		}
	std::vector<std::size_t> size(un, 1);
	std::vector<bool> alive(un, true);
	std::vector<std::size_t> owner(un);
	std::iota(owner.begin(), owner.end(), std::size_t{0});

	for (std::size_t clusters = un; clusters > static_cast<std::size_t>(k); --clusters) {
		std::size_t ba = 0, bb = 0;
		double best = std::numeric_limits<double>::infinity();
		for (std::size_t a = 0; a < un; ++a) {
			if (!alive[a])
				continue;
			for (std::size_t b = a + 1; b < un; ++b)
				if (alive[b] && dist[a * un + b] < best) {
					best = dist[a * un + b];
					ba = a;
					bb = b;
				}
		}
		// Lance-Williams update for average linkage; bb merges into ba.
		const auto sa = static_cast<double>(size[ba]), sb = static_cast<double>(size[bb]);
		for (std::size_t c = 0; c < un; ++c) {
			if (!alive[c] || c == ba || c == bb)
				continue;
			const double d = (sa * dist[ba * un + c] + sb * dist[bb * un + c]) / (sa + sb);
			dist[ba * un + c] = d;
			dist[c * un + ba] = d;
		}
		size[ba] += size[bb];
		alive[bb] = false;
		for (auto& o : owner)
			if (o == bb)
				o = ba;
	}
	std::vector<int> assign(un);
	for (std::size_t i = 0; i < un; ++i)
		assign[i] = static_cast<int>(owner[i]);
	return canonical_labels(assign);
}

inline void check_same_length(std::size_t a, std::size_t b, const char* what) {
	if (a != b)
		throw ShapeError(std::string(what) + ": assignments and labels differ in length");
	if (a == 0)
		throw ArgumentError(std::string(what) + ": empty input");
}

inline double purity(const std::vector<int>& assignment, const std::vector<int>& labels) {
	check_same_length(assignment.size(), labels.size(), "purity");
	std::map<int, std::map<int, std::size_t>> counts;
	for (std::size_t i = 0; i < labels.size(); ++i)
		++counts[assignment[i]][labels[i]];
	std::size_t total = 0;
	for (const auto& [cluster, by_label] : counts) {
		std::size_t best = 0;
		for (const auto& [label, c] : by_label)
			best = std::max(best, c);
		total += best;
	}
	return static_cast<double>(total) / static_cast<double>(labels.size());
}

/// I(A; L) / ((H(A) + H(L)) / 2), natural logs. Two single-block partitions
/// are identical and score 1.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
	check_same_length(a.size(), b.size(), "nmi");
	const auto n = static_cast<double>(a.size());
	std::map<int, double> pa, pb;
	std::map<std::pair<int, int>, double> joint;
	for (std::size_t i = 0; i < a.size(); ++i) {
		pa[a[i]] += 1.0;
		pb[b[i]] += 1.0;
		joint[{a[i], b[i]}] += 1.0;
	}
	auto entropy = [n](const std::map<int, double>& counts) {
		double h = 0.0;
		for (const auto& [key, c] : counts)
			h -= (c / n) * std::log(c / n);
		return h;
	};
	const double ha = entropy(pa), hb = entropy(pb);
	if (ha == 0.0 && hb == 0.0)
		return 1.0;
	double mi = 0.0;
	for (const auto& [key, c] : joint)
		mi += (c / n) * std::log(c * n / (pa[key.first] * pb[key.second]));
	return std::clamp(mi / ((ha + hb) / 2.0), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Linear and anchor evaluation

/// Multinomial logistic regression with bias, trained by full-batch gradient
/// descent (lr 0.1, 1000 steps) from zero. Returns test accuracy.
inline double linear_eval(const Points& train, const std::vector<int>& train_labels, const Points& test,
						  const std::vector<int>& test_labels, std::uint64_t seed = 0, int steps = 1000,
						  double lr = 0.1) {
	(void)seed; // zero init and full-batch descent leave nothing to randomize
	check_same_length(static_cast<std::size_t>(train.rows()), train_labels.size(), "linear_eval");
	check_same_length(static_cast<std::size_t>(test.rows()), test_labels.size(), "linear_eval");
	if (train.cols() != test.cols())
		throw ShapeError("linear_eval: train and test dims differ");

	std::map<int, int> classes;
	for (int l : train_labels)
		classes.try_emplace(l, 0);
	int next = 0;
	for (auto& [label, idx] : classes)
		idx = next++;
	const int c = next;
	const Eigen::Index n = train.rows(), dim = train.cols();

	Matrix targets = Matrix::Zero(c, n);
	for (Eigen::Index i = 0; i < n; ++i)
		targets(classes[train_labels[static_cast<std::size_t>(i)]], i) = 1.0;
	const Matrix xt = train.transpose(); // dim x n
	Matrix w = Matrix::Zero(c, dim);
	Vector b = Vector::Zero(c);

	auto softmax_cols = [](Matrix& z) {
		for (Eigen::Index j = 0; j < z.cols(); ++j) {
			const double m = z.col(j).maxCoeff();
			z.col(j) = (z.col(j).array() - m).exp();
			z.col(j) /= z.col(j).sum();
		}
	};
	for (int step = 0; step < steps; ++step) {
		Matrix z = (w * xt).colwise() + b;
		softmax_cols(z);
		const Matrix err = (z - targets) / static_cast<double>(n);
		w -= lr * err * train;
		b -= lr * err.rowwise().sum();
	}

	std::vector<int> label_of(static_cast<std::size_t>(c));
	for (const auto& [label, idx] : classes)
		label_of[static_cast<std::size_t>(idx)] = label;
	const Matrix scores = (w * test.transpose()).colwise() + b;
	std::size_t correct = 0;
	for (Eigen::Index j = 0; j < scores.cols(); ++j) {
		Eigen::Index best = 0;
		scores.col(j).maxCoeff(&best);
		if (label_of[static_cast<std::size_t>(best)] == test_labels[static_cast<std::size_t>(j)])
			++correct;
	}
	return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

/// Picks K seeded-random anchors per category; every other point takes the
/// label of its Euclidean-nearest anchor, ties going to the lowest anchor id.
inline double k_anchors_eval(const Points& embeds, const std::vector<int>& labels, const std::vector<ItemId>& ids,
							 int k, std::uint64_t seed) {
	check_same_length(static_cast<std::size_t>(embeds.rows()), labels.size(), "k_anchors_eval");
	check_same_length(ids.size(), labels.size(), "k_anchors_eval");
	if (k < 1)
		throw ArgumentError("k_anchors_eval: K must be >= 1");
	std::map<int, std::vector<std::size_t>> members;
	for (std::size_t i = 0; i < labels.size(); ++i)
		members[labels[i]].push_back(i);

	Engine engine(derive_seed(seed, stream::anchors));
	std::vector<std::size_t> anchors;
	std::vector<bool> is_anchor(labels.size(), false);
	for (auto& [label, rows] : members) {
		if (static_cast<std::size_t>(k) >= rows.size())
			throw ArgumentError("k_anchors_eval: K=" + std::to_string(k) + " leaves no test points in category " +
								std::to_string(label) + " of size " + std::to_string(rows.size()));
		std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
		shuffle(rows, engine);
		for (int a = 0; a < k; ++a) {
			anchors.push_back(rows[static_cast<std::size_t>(a)]);
			is_anchor[rows[static_cast<std::size_t>(a)]] = true;
		}
	}
	std::sort(anchors.begin(), anchors.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

	std::size_t scored = 0, correct = 0;
	for (std::size_t i = 0; i < labels.size(); ++i) {
		if (is_anchor[i])
			continue;
		std::size_t best = anchors.front();
		double best_d = std::numeric_limits<double>::infinity();
		for (std::size_t a : anchors) {
			const double d = squared_euclidean(embeds, static_cast<Eigen::Index>(i), embeds, static_cast<Eigen::Index>(a));
			if (d < best_d) {
				best_d = d;
				best = a;
			}
		}
		++scored;
		if (labels[best] == labels[i])
			++correct;
	}
	return static_cast<double>(correct) / static_cast<double>(scored);
}

// ---------------------------------------------------------------------------
// Reports

/// Row-wise softmax of the worker preference matrix.
inline Matrix preference_report(const Matrix& worker_prefs) {
	Matrix shares(worker_prefs.rows(), worker_prefs.cols());
	for (Eigen::Index m = 0; m < worker_prefs.rows(); ++m) {
		const double top = worker_prefs.row(m).maxCoeff();
		shares.row(m) = (worker_prefs.row(m).array() - top).exp();
		shares.row(m) /= shares.row(m).sum();
	}
	return shares;
}

/// Concatenated V*D embeddings, one row per id.
inline Points embed_points(const ModelParams& params, const EncoderConfig& config, const ItemStore& items,
						   const std::vector<ItemId>& ids) {
	std::vector<ItemTensor> tensors;
	tensors.reserve(ids.size());
	for (ItemId id : ids)
		tensors.push_back(items.get(id));
	const auto embeds = encode_all(params, config, tensors);
	Points out(static_cast<Eigen::Index>(ids.size()), config.num_views * config.embed_dim);
	for (std::size_t n = 0; n < embeds.size(); ++n)
		for (int v = 0; v < config.num_views; ++v)
			out.row(static_cast<Eigen::Index>(n)).segment(v * config.embed_dim, config.embed_dim) =
				embeds[n].row(v);
	return out;
}

/// One line per (item, view): id,digit,color,view,values...
inline void write_embeddings(std::ostream& out, const ModelParams& params, const EncoderConfig& config,
							 const ItemStore& items, const DatasetManifest& manifest) {
	std::vector<ItemTensor> tensors;
	for (const auto& r : manifest.records)
		tensors.push_back(items.get(r.id));
	const auto embeds = encode_all(params, config, tensors);
	out << std::setprecision(17);
	for (std::size_t n = 0; n < manifest.records.size(); ++n) {
		const auto& r = manifest.records[n];
		for (int v = 0; v < config.num_views; ++v) {
			out << r.id << ',' << r.label.digit << ',' << kColorNames[static_cast<std::size_t>(index_of(r.label.color))]
				<< ',' << v;
			for (int d = 0; d < config.embed_dim; ++d)
				out << ',' << embeds[n](v, d);
			out << '\n';
		}
	}
}

inline void export_embeddings(const ModelParams& params, const EncoderConfig& config, const ItemStore& items,
							  const DatasetManifest& manifest, const std::string& path) {
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw Error("cannot write " + path);
	write_embeddings(out, params, config, items, manifest);
	if (!out.flush())
		throw Error("write failed: " + path);
}

struct EvalReport {
	std::optional<double> triplet_accuracy;
	std::optional<double> kmeans_purity;
	std::optional<double> kmeans_nmi;
	std::optional<double> agglomerative_purity;
	std::optional<double> agglomerative_nmi;
	std::optional<double> linear_accuracy;
	std::optional<double> k_anchors_accuracy;
	std::vector<std::string> worker_ids;
	std::optional<Matrix> preference_shares; // absent for a single view

	std::vector<std::pair<std::string, double>> scores() const {
		std::vector<std::pair<std::string, double>> out;
		auto add = [&](const char* name, const std::optional<double>& v) {
			if (v)
				out.emplace_back(name, *v);
		};
		add("triplet_accuracy", triplet_accuracy);
		add("kmeans_purity", kmeans_purity);
		add("kmeans_nmi", kmeans_nmi);
		add("agglomerative_purity", agglomerative_purity);
		add("agglomerative_nmi", agglomerative_nmi);
		add("linear_accuracy", linear_accuracy);
		add("k_anchors_accuracy", k_anchors_accuracy);
		return out;
	}

	std::string to_text() const {
		std::ostringstream out;
		out << std::setprecision(6) << std::fixed;
		for (const auto& [name, value] : scores())
			out << name << " = " << value << '\n';
		if (preference_shares)
			for (Eigen::Index m = 0; m < preference_shares->rows(); ++m) {
				out << "preference." << worker_ids[static_cast<std::size_t>(m)] << " =";
				for (Eigen::Index v = 0; v < preference_shares->cols(); ++v)
					out << ' ' << (*preference_shares)(m, v);
				out << '\n';
			}
		return out.str();
	}

	nlohmann::json to_json() const {
		nlohmann::json j = nlohmann::json::object();
		for (const auto& [name, value] : scores())
			j[name] = value;
		if (preference_shares) {
			nlohmann::json prefs = nlohmann::json::object();
			for (Eigen::Index m = 0; m < preference_shares->rows(); ++m) {
				std::vector<double> row(static_cast<std::size_t>(preference_shares->cols()));
				for (Eigen::Index v = 0; v < preference_shares->cols(); ++v)
					row[static_cast<std::size_t>(v)] = (*preference_shares)(m, v);
				prefs[worker_ids[static_cast<std::size_t>(m)]] = row;
			}
			j["preference_shares"] = prefs;
		}
		return j;
	}
};

enum class Metric { triplet, kmeans, agglomerative, linear, anchors, preference };

inline const std::vector<std::pair<std::string, Metric>>& metric_names() {
	static const std::vector<std::pair<std::string, Metric>> names{
		{"triplet", Metric::triplet}, {"kmeans", Metric::kmeans},   {"agglomerative", Metric::agglomerative},
		{"linear", Metric::linear},   {"anchors", Metric::anchors}, {"preference", Metric::preference}};
	return names;
}

/// Parses "all" or a comma-separated list of metric names.
inline std::vector<Metric> parse_metrics(const std::string& spec) {
	std::vector<Metric> out;
	if (spec == "all") {
		for (const auto& [name, m] : metric_names())
			out.push_back(m);
		return out;
	}
	std::stringstream in(spec);
	std::string name;
	while (std::getline(in, name, ',')) {
		auto it = std::find_if(metric_names().begin(), metric_names().end(),
							   [&](const auto& p) { return p.first == name; });
		if (it == metric_names().end())
			throw ArgumentError("unknown metric '" + name + "'");
		if (std::find(out.begin(), out.end(), it->second) == out.end())
			out.push_back(it->second);
	}
	if (out.empty())
		throw ArgumentError("no metrics selected");
	return out;
}

struct EvalOptions {
	std::vector<Metric> metrics = parse_metrics("all");
	int anchors_k = 1;
	std::uint64_t seed = 0;
	bool use_entropy = true;

	bool wants(Metric m) const { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); }
};

/// Runs the selected metrics. Clustering and anchors use the test split with
/// category labels; the linear probe trains on the train split.
inline EvalReport evaluate(const ModelParams& params, const EncoderConfig& config, const DatasetManifest& manifest,
						   const ItemStore& items, std::span<const TripletAnnotation> triplets,
						   const EvalOptions& options) {
	EvalReport report;
	if (options.wants(Metric::triplet))
		report.triplet_accuracy = triplet_accuracy(params, config, items, triplets, options.use_entropy);

	auto ids_labels = [&](Split s) {
		std::pair<std::vector<ItemId>, std::vector<int>> out;
		for (const auto& r : manifest.split(s)) {
			out.first.push_back(r.id);
			out.second.push_back(r.label.category());
		}
		return out;
	};
	const bool need_test = options.wants(Metric::kmeans) || options.wants(Metric::agglomerative) ||
						   options.wants(Metric::linear) || options.wants(Metric::anchors);
	if (need_test) {
		const auto [test_ids, test_labels] = ids_labels(Split::test);
		if (test_ids.empty())
			throw ArgumentError("manifest has no test split");
		const Points test = embed_points(params, config, items, test_ids);
		const int k = static_cast<int>(std::set<int>(test_labels.begin(), test_labels.end()).size());
		if (options.wants(Metric::kmeans)) {
			const auto a = kmeans(test, k, options.seed);
			report.kmeans_purity = purity(a, test_labels);
			report.kmeans_nmi = nmi(a, test_labels);
		}
		if (options.wants(Metric::agglomerative)) {
			const auto a = agglomerative(test, k);
			report.agglomerative_purity = purity(a, test_labels);
			report.agglomerative_nmi = nmi(a, test_labels);
		}
		if (options.wants(Metric::linear)) {
			const auto [train_ids, train_labels] = ids_labels(Split::train);
			if (train_ids.empty())
				throw ArgumentError("manifest has no train split");
			report.linear_accuracy = linear_eval(embed_points(params, config, items, train_ids), train_labels, test,
												 test_labels, options.seed);
		}
		if (options.wants(Metric::anchors))
			report.k_anchors_accuracy = k_anchors_eval(test, test_labels, test_ids, options.anchors_k, options.seed);
	}
	if (options.wants(Metric::preference) && config.num_views > 1) {
		report.worker_ids = params.worker_ids;
		report.preference_shares = preference_report(params.worker_prefs);
	}
	return report;
}

} // namespace mvt
