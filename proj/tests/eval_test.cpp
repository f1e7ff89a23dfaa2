#include "oracles.hpp"

#include <mvt/eval.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

namespace mvt {
namespace {

/// Three blobs with centers 100 apart and spread 1.
Points three_blobs(std::vector<int>& labels, std::vector<ItemId>& ids, std::size_t per_blob = 20) {
	const double centers[3][2] = {{0, 0}, {100, 0}, {0, 100}};
	Engine engine(42);
	Points p(static_cast<Eigen::Index>(3 * per_blob), 2);
	labels.clear();
	ids.clear();
	for (std::size_t n = 0; n < 3 * per_blob; ++n) {
		const std::size_t b = n % 3;
		p(static_cast<Eigen::Index>(n), 0) = centers[b][0] + uniform(engine, -0.5, 0.5);
		p(static_cast<Eigen::Index>(n), 1) = centers[b][1] + uniform(engine, -0.5, 0.5);
		labels.push_back(static_cast<int>(b) + 10);
		ids.push_back(static_cast<ItemId>(1000 + n));
	}
	return p;
}

TEST(Purity, HandCount) {
	// clusters {a, a, b} and {b, b}
	EXPECT_DOUBLE_EQ(purity({0, 0, 0, 1, 1}, {0, 0, 1, 1, 1}), 0.8);
	EXPECT_DOUBLE_EQ(purity({3, 3, 7, 7}, {1, 1, 2, 2}), 1.0);
	EXPECT_DOUBLE_EQ(purity({0, 0, 0, 0}, {1, 1, 1, 2}), 0.75);
	EXPECT_THROW(purity({0}, {0, 1}), ShapeError);
	EXPECT_THROW(purity({}, {}), ArgumentError);
}

TEST(Nmi, IdenticalSingleAndHandValue) {
	EXPECT_DOUBLE_EQ(nmi({0, 0, 1, 1, 2}, {0, 0, 1, 1, 2}), 1.0);
	EXPECT_NEAR(nmi({5, 5, 9, 9, 1}, {0, 0, 1, 1, 2}), 1.0, 1e-12);
	EXPECT_DOUBLE_EQ(nmi({0, 0, 0, 0}, {0, 1, 0, 1}), 0.0);
	EXPECT_DOUBLE_EQ(nmi({0, 0, 1, 1}, {0, 1, 0, 1}), 0.0);
	EXPECT_NEAR(nmi({0, 0, 0, 1, 1}, {0, 0, 1, 1, 1}), 0.4325380677663126, 1e-12);
	EXPECT_DOUBLE_EQ(nmi({3, 3, 3}, {1, 1, 1}), 1.0);
}

TEST(Nmi, SymmetricAndRelabelInvariant) {
	Engine engine(3);
	for (int trial = 0; trial < 50; ++trial) {
		std::vector<int> a(30), b(30), relabeled(30);
		for (std::size_t n = 0; n < 30; ++n) {
			a[n] = static_cast<int>(uniform_index(engine, 4));
			b[n] = static_cast<int>(uniform_index(engine, 5));
			relabeled[n] = 17 - 3 * a[n];
		}
		EXPECT_NEAR(nmi(a, b), nmi(b, a), 1e-12);
		EXPECT_NEAR(nmi(a, b), nmi(relabeled, b), 1e-12);
		EXPECT_NEAR(purity(a, b), purity(relabeled, b), 1e-12);
		EXPECT_GE(nmi(a, b), 0.0);
		EXPECT_LE(nmi(a, b), 1.0);
	}
}

TEST(Nmi, IndependentLargeSampleNearZero) {
	Engine engine(8);
	std::vector<int> a(20000), b(20000);
	for (std::size_t n = 0; n < a.size(); ++n) {
		a[n] = static_cast<int>(uniform_index(engine, 3));
		b[n] = static_cast<int>(uniform_index(engine, 3));
	}
	EXPECT_LT(nmi(a, b), 1e-3);
}

TEST(KMeans, RecoversBlobs) {
	std::vector<int> labels;
	std::vector<ItemId> ids;
	const Points p = three_blobs(labels, ids);
	for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
		const auto a = kmeans(p, 3, seed);
		EXPECT_DOUBLE_EQ(purity(a, labels), 1.0);
		EXPECT_NEAR(nmi(a, labels), 1.0, 1e-9);
	}
	EXPECT_EQ(kmeans(p, 3, 5), kmeans(p, 3, 5));
}

TEST(KMeans, SingleClusterAndErrors) {
	std::vector<int> labels;
	std::vector<ItemId> ids;
	const Points p = three_blobs(labels, ids, 4);
	const auto one = kmeans(p, 1, 0);
	EXPECT_EQ(one, std::vector<int>(12, 0));
	EXPECT_DOUBLE_EQ(purity(one, labels), 4.0 / 12.0);
	EXPECT_DOUBLE_EQ(nmi(one, labels), 0.0);
	EXPECT_THROW(kmeans(p, 13, 0), ArgumentError);
	EXPECT_THROW(kmeans(p, 0, 0), ArgumentError);
}

TEST(KMeans, DuplicatePointsDoNotBreakSeeding) {
	Points p = Points::Zero(6, 2);
	const auto a = kmeans(p, 3, 1);
	EXPECT_EQ(a.size(), 6u);
}

TEST(Agglomerative, BlobsSinglesAndOne) {
	std::vector<int> labels;
	std::vector<ItemId> ids;
	const Points p = three_blobs(labels, ids);
	const auto a = agglomerative(p, 3);
	EXPECT_DOUBLE_EQ(purity(a, labels), 1.0);
	EXPECT_NEAR(nmi(a, labels), 1.0, 1e-9);

	const auto singles = agglomerative(p, static_cast<int>(p.rows()));
	std::vector<int> expected(static_cast<std::size_t>(p.rows()));
	std::iota(expected.begin(), expected.end(), 0);
	EXPECT_EQ(singles, expected);
	EXPECT_EQ(agglomerative(p, 1), std::vector<int>(static_cast<std::size_t>(p.rows()), 0));
	EXPECT_THROW(agglomerative(p, 0), ArgumentError);
}

TEST(Agglomerative, AverageLinkageMergeOrder) {
	// Average distance from 5.2 is 4.7 to {0, 1} and 4.3 to {9, 10}.
	Points p(5, 1);
	p << 0, 1, 5.2, 9, 10;
	EXPECT_EQ(agglomerative(p, 2), (std::vector<int>{0, 0, 1, 1, 1}));
	EXPECT_EQ(agglomerative(p, 3), (std::vector<int>{0, 0, 1, 2, 2}));
}

TEST(LinearEval, SeparableAndOneHot) {
	Points train(6, 1), test(4, 1);
	train << -3, -2, -1, 1, 2, 3;
	test << -2.5, -0.5, 0.5, 2.5;
	EXPECT_DOUBLE_EQ(linear_eval(train, {0, 0, 0, 1, 1, 1}, test, {0, 0, 1, 1}), 1.0);

	Points onehot = Points::Zero(5, 5);
	std::vector<int> labels;
	for (int c = 0; c < 5; ++c) {
		onehot(c, c) = 1.0;
		labels.push_back(c);
	}
	EXPECT_DOUBLE_EQ(linear_eval(onehot, labels, onehot, labels), 1.0);
}

TEST(LinearEval, IndependentLabelsNearChance) {
	Engine engine(17);
	const int c = 4;
	Points train(400, 3), test(4000, 3);
	std::vector<int> train_labels, test_labels;
	for (Eigen::Index n = 0; n < train.rows(); ++n) {
		for (Eigen::Index d = 0; d < 3; ++d)
			train(n, d) = uniform(engine, -1, 1);
		train_labels.push_back(static_cast<int>(uniform_index(engine, c)));
	}
	for (Eigen::Index n = 0; n < test.rows(); ++n) {
		for (Eigen::Index d = 0; d < 3; ++d)
			test(n, d) = uniform(engine, -1, 1);
		test_labels.push_back(static_cast<int>(uniform_index(engine, c)));
	}
	EXPECT_NEAR(linear_eval(train, train_labels, test, test_labels), 1.0 / c, 0.05);
	EXPECT_THROW(linear_eval(train, train_labels, Points(2, 2), {0, 1}), ShapeError);
}

TEST(KAnchors, SeparatedBlobsAndErrors) {
	std::vector<int> labels;
	std::vector<ItemId> ids;
	const Points p = three_blobs(labels, ids);
	EXPECT_DOUBLE_EQ(k_anchors_eval(p, labels, ids, 1, 0), 1.0);
	EXPECT_DOUBLE_EQ(k_anchors_eval(p, labels, ids, 2, 9), 1.0);
	EXPECT_THROW(k_anchors_eval(p, labels, ids, 20, 0), ArgumentError);
	EXPECT_THROW(k_anchors_eval(p, labels, ids, 0, 0), ArgumentError);
}

TEST(KAnchors, IdenticalEmbeddingsTieToLowestAnchor) {
	// Two interleaved categories, all points equal: every query ties and goes
	// to the lowest-id anchor, so exactly that category's non-anchors score.
	const std::size_t n = 200;
	Points p = Points::Zero(static_cast<Eigen::Index>(n), 2);
	std::vector<int> labels;
	std::vector<ItemId> ids;
	for (std::size_t i = 0; i < n; ++i) {
		labels.push_back(static_cast<int>(i % 2));
		ids.push_back(static_cast<ItemId>(i));
	}
	for (std::uint64_t seed = 0; seed < 5; ++seed) {
		const double acc = k_anchors_eval(p, labels, ids, 1, seed);
		EXPECT_DOUBLE_EQ(acc, 99.0 / 198.0);
		EXPECT_EQ(acc, k_anchors_eval(p, labels, ids, 1, seed));
	}
}

TEST(PreferenceReport, Examples) {
	Matrix w(3, 2);
	w << 0, 0, 1, 0, 41, 40;
	const Matrix s = preference_report(w);
	EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
	EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
	EXPECT_NEAR(s(1, 0), 0.7310585786300049, 1e-15);
	EXPECT_NEAR(s(1, 1), 0.2689414213699951, 1e-15);
	EXPECT_NEAR(s(2, 0), s(1, 0), 1e-15);
	for (Eigen::Index m = 0; m < 3; ++m)
		EXPECT_NEAR(s.row(m).sum(), 1.0, 1e-15);

	Engine engine(2);
	Matrix r(20, 3);
	for (Eigen::Index m = 0; m < r.rows(); ++m)
		for (Eigen::Index v = 0; v < 3; ++v)
			r(m, v) = uniform(engine, -5, 5);
	const Matrix rs = preference_report(r);
	for (Eigen::Index m = 0; m < r.rows(); ++m) {
		Eigen::Index a = 0, b = 0;
		r.row(m).maxCoeff(&a);
		rs.row(m).maxCoeff(&b);
		EXPECT_EQ(a, b);
		EXPECT_NEAR(rs.row(m).sum(), 1.0, 1e-14);
	}
}

struct OnePixelModel {
	EncoderConfig config;
	ModelParams params;
	ItemStore items;
};

/// One-pixel items map to y = x through a single relu unit.
OnePixelModel one_pixel_model(std::vector<double> pixels) {
	OnePixelModel m;
	m.config.input = {1, 1, 1};
	m.config.trunk_hidden = {1};
	m.config.head_hidden_layers = 0;
	m.config.embed_dim = 1;
	m.config.num_views = 1;
	m.params = init_params(m.config, std::vector<std::string>{"w"}, 0);
	m.params.trunk[0].weight(0, 0) = 1.0;
	m.params.heads[0][0].weight(0, 0) = 1.0;
	for (std::size_t n = 0; n < pixels.size(); ++n)
		m.items.add(static_cast<ItemId>(n), ItemTensor{1, 1, 1, {pixels[n]}});
	return m;
}

TEST(TripletAccuracy, TiesAreIncorrectAndPerfectMemory) {
	OnePixelModel m = one_pixel_model({0.0, 0.1, 3.0, 0.5});
	const std::vector<TripletAnnotation> good{{"w", 0, 1, 2}};
	EXPECT_DOUBLE_EQ(triplet_accuracy(m.params, m.config, m.items, good), 1.0);
	const std::vector<TripletAnnotation> mixed{{"w", 0, 1, 2}, {"w", 0, 2, 1}, {"w", 1, 3, 0}, {"w", 0, 1, 3}};
	EXPECT_DOUBLE_EQ(triplet_accuracy(m.params, m.config, m.items, mixed), 0.5);

	m.params.heads[0][0].weight.setZero();
	EXPECT_DOUBLE_EQ(triplet_accuracy(m.params, m.config, m.items, good), 0.0);
	EXPECT_THROW(triplet_accuracy(m.params, m.config, m.items, {}), ArgumentError);
	const std::vector<TripletAnnotation> stranger{{"x", 0, 1, 2}};
	EXPECT_THROW(triplet_accuracy(m.params, m.config, m.items, stranger), ReferenceError);
}

TEST(Metrics, Parse) {
	EXPECT_EQ(parse_metrics("all").size(), metric_names().size());
	EXPECT_EQ(parse_metrics("kmeans,triplet,kmeans"), (std::vector<Metric>{Metric::kmeans, Metric::triplet}));
	EXPECT_THROW(parse_metrics("kmeans,bogus"), ArgumentError);
	EXPECT_THROW(parse_metrics(""), ArgumentError);
}

struct SmallCorpus {
	DatasetManifest manifest;
	ItemStore items;
	EncoderConfig config;
	std::vector<TripletAnnotation> triplets;
};

SmallCorpus small_corpus(int views) {
	SmallCorpus c;
	c.manifest = generate_corpus(2, 2);
	c.items = render_items(c.manifest);
	c.config.trunk_hidden = {16, 8};
	c.config.embed_dim = 3;
	c.config.num_views = views;
	c.config.seed = 2;
	c.triplets = sample_triplets(c.manifest.split(Split::test), setting_workers(2), 30, 2);
	return c;
}

TEST(Evaluate, FullReport) {
	const SmallCorpus c = small_corpus(2);
	const ModelParams params = init_params(c.config, std::vector<std::string>{"worker1", "worker2"}, 2);
	const EvalReport r = evaluate(params, c.config, c.manifest, c.items, c.triplets, EvalOptions{});
	ASSERT_EQ(r.scores().size(), 7u);
	for (const auto& [name, value] : r.scores()) {
		EXPECT_GE(value, 0.0) << name;
		EXPECT_LE(value, 1.0) << name;
	}
	ASSERT_TRUE(r.preference_shares.has_value());
	EXPECT_EQ(r.preference_shares->rows(), 2);

	const std::string text = r.to_text();
	EXPECT_NE(text.find("triplet_accuracy = "), std::string::npos);
	EXPECT_NE(text.find("preference.worker2 = "), std::string::npos);
	const nlohmann::json j = nlohmann::json::parse(r.to_json().dump());
	EXPECT_DOUBLE_EQ(j.at("kmeans_nmi").get<double>(), *r.kmeans_nmi);
	EXPECT_EQ(j.at("preference_shares").at("worker1").size(), 2u);
}

TEST(Evaluate, SingleViewOmitsPreferencesAndSelectsMetrics) {
	const SmallCorpus c = small_corpus(1);
	const ModelParams params = init_params(c.config, std::vector<std::string>{"worker1", "worker2"}, 2);
	EvalOptions o;
	o.metrics = parse_metrics("triplet,preference");
	const EvalReport r = evaluate(params, c.config, c.manifest, c.items, c.triplets, o);
	EXPECT_TRUE(r.triplet_accuracy.has_value());
	EXPECT_FALSE(r.kmeans_purity.has_value());
	EXPECT_FALSE(r.preference_shares.has_value());
	EXPECT_EQ(r.to_text().find("preference"), std::string::npos);
	EXPECT_FALSE(r.to_json().contains("preference_shares"));
}

TEST(ExportEmbeddings, OneLinePerItemAndView) {
	const SmallCorpus c = small_corpus(2);
	const ModelParams params = init_params(c.config, std::size_t{1}, 2);
	std::ostringstream out;
	write_embeddings(out, params, c.config, c.items, c.manifest);
	std::istringstream in(out.str());
	std::string line;
	std::size_t lines = 0;
	while (std::getline(in, line)) {
		if (lines == 3) {
			// record 1 (id 1, digit 1, red), view 1
			EXPECT_EQ(line.rfind("1,1,Red,1,", 0), 0u) << line;
			const Matrix y = forward(params, c.config, c.items.get(1));
			std::istringstream fields(line.substr(10));
			std::string f;
			for (int d = 0; d < 3; ++d) {
				ASSERT_TRUE(std::getline(fields, f, ','));
				EXPECT_NEAR(std::stod(f), y(1, d), 1e-12);
			}
		}
		EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4 + 3 - 1);
		++lines;
	}
	EXPECT_EQ(lines, c.manifest.records.size() * 2);
}

} // namespace
} // namespace mvt
