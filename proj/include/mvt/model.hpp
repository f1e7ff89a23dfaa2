// Multiview encoder: a shared trunk g followed by V independent view heads h[v].
//
// The trunk is a stack of dense layers applied to the flattened item. Every
// head owns a copy of the remaining hidden layers plus a linear projection to
// the embedding dimension, so that row v of an item's embedding is h[v](g(x)).
#pragma once

#include <mvt/error.hpp>
#include <mvt/rng.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) {
	return a == Activation::relu ? "relu" : "tanh";
}

inline Activation parse_activation(const std::string& name) {
	if (name == "relu")
		return Activation::relu;
	if (name == "tanh")
		return Activation::tanh;
	throw ConfigError("unknown activation '" + name + "'");
}

struct InputDims {
	int height = 16;
	int width = 16;
	int channels = 3;

	int size() const { return height * width * channels; }
	bool operator==(const InputDims&) const = default;
};

struct EncoderConfig {
	InputDims input;
	/// Widths of every hidden layer, shared and per-view, in order.
	std::vector<int> trunk_hidden{256, 64};
	/// How many of the trailing trunk_hidden layers are replicated per view.
	int head_hidden_layers = 1;
	int embed_dim = 8;
	int num_views = 2;
	Activation activation = Activation::relu;
	std::uint64_t seed = 0;

	bool operator==(const EncoderConfig&) const = default;

	std::size_t shared_layers() const {
		return trunk_hidden.size() - static_cast<std::size_t>(head_hidden_layers);
	}

	/// Width of the shared representation z = g(x).
	int shared_width() const {
		return shared_layers() == 0 ? input.size() : trunk_hidden[shared_layers() - 1];
	}

	void validate() const {
		if (input.height < 1 || input.width < 1 || input.channels < 1)
			throw ConfigError("input dims must be positive");
		if (trunk_hidden.empty())
			throw ConfigError("trunk_hidden must be nonempty");
		for (int w : trunk_hidden)
			if (w < 1)
				throw ConfigError("trunk_hidden widths must be positive");
		if (head_hidden_layers < 0 ||
			static_cast<std::size_t>(head_hidden_layers) > trunk_hidden.size())
			throw ConfigError("head_hidden_layers out of range");
		if (embed_dim < 1)
			throw ConfigError("embed_dim must be >= 1");
		if (num_views < 1)
			throw ConfigError("num_views must be >= 1");
	}
};

/// A 3-channel image (channel count configurable) stored row-major with
/// interleaved channels: pixel (r, c, ch) lives at ((r * width) + c) * channels + ch.
struct ItemTensor {
	int height = 0;
	int width = 0;
	int channels = 3;
	std::vector<double> pixels;

	InputDims dims() const { return {height, width, channels}; }

	double& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
	double at(int r, int c, int ch) const { return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
};

struct Dense {
	Matrix weight; // out x in
	Vector bias;   // out

	bool operator==(const Dense&) const = default;
};

/// Network weights plus the M x V worker preference matrix. The same type
/// carries gradients.
struct ModelParams {
	std::vector<Dense> trunk;
	std::vector<std::vector<Dense>> heads;
	Matrix worker_prefs; // M x V
	std::vector<std::string> worker_ids;

	bool operator==(const ModelParams&) const = default;

	std::size_t num_workers() const { return static_cast<std::size_t>(worker_prefs.rows()); }

	/// Row of `id` in worker_prefs; throws ReferenceError when unknown.
	std::size_t worker_row(const std::string& id) const {
		for (std::size_t m = 0; m < worker_ids.size(); ++m)
			if (worker_ids[m] == id)
				return m;
		throw ReferenceError("unknown worker id '" + id + "'");
	}

	bool has_worker(const std::string& id) const {
		for (const auto& w : worker_ids)
			if (w == id)
				return true;
		return false;
	}

	/// Same shapes, all zeros.
	ModelParams zeros_like() const {
		ModelParams z;
		z.worker_ids = worker_ids;
		z.worker_prefs = Matrix::Zero(worker_prefs.rows(), worker_prefs.cols());
		auto zero = [](const Dense& d) {
			return Dense{Matrix::Zero(d.weight.rows(), d.weight.cols()), Vector::Zero(d.bias.size())};
		};
		for (const auto& d : trunk)
			z.trunk.push_back(zero(d));
		for (const auto& head : heads) {
			auto& out = z.heads.emplace_back();
			for (const auto& d : head)
				out.push_back(zero(d));
		}
		return z;
	}

	/// Visits every parameter block of `*this` in a fixed order. The callback
	/// receives an Eigen::Map over the block's contiguous storage.
	template <typename Fn>
	void for_each_block(Fn&& fn) {
		auto visit = [&](auto& m) { fn(Eigen::Map<Vector>(m.data(), m.size())); };
		for (auto& d : trunk) {
			visit(d.weight);
			visit(d.bias);
		}
		for (auto& head : heads)
			for (auto& d : head) {
				visit(d.weight);
				visit(d.bias);
			}
		visit(worker_prefs);
	}

	template <typename Fn>
	void for_each_block(Fn&& fn) const {
		auto visit = [&](const auto& m) { fn(Eigen::Map<const Vector>(m.data(), m.size())); };
		for (const auto& d : trunk) {
			visit(d.weight);
			visit(d.bias);
		}
		for (const auto& head : heads)
			for (const auto& d : head) {
				visit(d.weight);
				visit(d.bias);
			}
		visit(worker_prefs);
	}

	bool all_finite() const {
		bool ok = true;
		for_each_block([&](const auto& block) { ok = ok && block.allFinite(); });
		return ok;
	}
};

/// Appends a worker row initialized uniformly on [0, 1) from `engine`.
inline std::size_t add_worker(ModelParams& params, const std::string& id, Engine& engine) {
	const Eigen::Index rows = params.worker_prefs.rows();
	const Eigen::Index views = params.worker_prefs.cols();
	Matrix grown(rows + 1, views);
	grown.topRows(rows) = params.worker_prefs;
	for (Eigen::Index v = 0; v < views; ++v)
		grown(rows, v) = uniform01(engine);
	params.worker_prefs = std::move(grown);
	params.worker_ids.push_back(id);
	return static_cast<std::size_t>(rows);
}

namespace detail {

inline Dense init_dense(int in, int out, Engine& engine) {
	// Uniform on +-1/sqrt(fan_in).
	const double limit = 1.0 / std::sqrt(static_cast<double>(in));
	Dense d{Matrix(out, in), Vector::Zero(out)};
	for (Eigen::Index c = 0; c < d.weight.cols(); ++c)
		for (Eigen::Index r = 0; r < d.weight.rows(); ++r)
			d.weight(r, c) = uniform(engine, -limit, limit);
	return d;
}

} // namespace detail

/// Worker ids used when init_params is asked for `num_workers` anonymous rows.
inline std::string default_worker_id(std::size_t m) {
	return "worker" + std::to_string(m + 1);
}

/// Initializes network weights from stream::network_init and worker
/// preferences (row-major, uniform [0,1)) from stream::worker_prefs.
inline ModelParams init_params(const EncoderConfig& config, std::span<const std::string> workers,
							   std::uint64_t seed) {
	config.validate();
	if (workers.empty())
		throw ConfigError("num_workers must be >= 1");

	ModelParams p;
	Engine net(derive_seed(seed, stream::network_init));
	int in = config.input.size();
	const std::size_t shared = config.shared_layers();
	for (std::size_t l = 0; l < shared; ++l) {
		p.trunk.push_back(detail::init_dense(in, config.trunk_hidden[l], net));
		in = config.trunk_hidden[l];
	}
	const int z = in;
	for (int v = 0; v < config.num_views; ++v) {
		auto& head = p.heads.emplace_back();
		int width = z;
		for (std::size_t l = shared; l < config.trunk_hidden.size(); ++l) {
			head.push_back(detail::init_dense(width, config.trunk_hidden[l], net));
			width = config.trunk_hidden[l];
		}
		head.push_back(detail::init_dense(width, config.embed_dim, net));
	}

	p.worker_prefs = Matrix(0, config.num_views);
	Engine prefs(derive_seed(seed, stream::worker_prefs));
	for (const auto& id : workers)
		add_worker(p, id, prefs);
	return p;
}

inline ModelParams init_params(const EncoderConfig& config, std::size_t num_workers, std::uint64_t seed) {
	std::vector<std::string> ids;
	for (std::size_t m = 0; m < num_workers; ++m)
		ids.push_back(default_worker_id(m));
	return init_params(config, ids, seed);
}

/// Checks that `params` has the layer shapes `config` prescribes.
inline void check_shapes(const ModelParams& params, const EncoderConfig& config) {
	config.validate();
	auto expect = [](const Dense& d, int in, int out, const std::string& what) {
		if (d.weight.rows() != out || d.weight.cols() != in || d.bias.size() != out)
			throw ShapeError(what + ": expected " + std::to_string(out) + "x" + std::to_string(in) + ", got " +
							 std::to_string(d.weight.rows()) + "x" + std::to_string(d.weight.cols()));
	};
	const std::size_t shared = config.shared_layers();
	if (params.trunk.size() != shared)
		throw ShapeError("trunk: expected " + std::to_string(shared) + " layers");
	int in = config.input.size();
	for (std::size_t l = 0; l < shared; ++l) {
		expect(params.trunk[l], in, config.trunk_hidden[l], "trunk." + std::to_string(l));
		in = config.trunk_hidden[l];
	}
	if (params.heads.size() != static_cast<std::size_t>(config.num_views))
		throw ShapeError("heads: expected " + std::to_string(config.num_views) + " views, got " +
						 std::to_string(params.heads.size()));
	for (std::size_t v = 0; v < params.heads.size(); ++v) {
		const auto& head = params.heads[v];
		if (head.size() != config.trunk_hidden.size() - shared + 1)
			throw ShapeError("head." + std::to_string(v) + ": wrong layer count");
		int width = in;
		for (std::size_t l = 0; l < head.size(); ++l) {
			const int out = l + 1 == head.size() ? config.embed_dim : config.trunk_hidden[shared + l];
			expect(head[l], width, out, "head." + std::to_string(v) + "." + std::to_string(l));
			width = out;
		}
	}
	if (params.worker_prefs.cols() != config.num_views)
		throw ShapeError("worker_prefs: expected " + std::to_string(config.num_views) + " columns");
	if (params.worker_ids.size() != params.num_workers())
		throw ShapeError("worker_ids: count does not match worker_prefs rows");
}

/// Flattens an item into the encoder's input vector, checking dimensions.
inline Vector flatten(const ItemTensor& item, const EncoderConfig& config) {
	if (item.dims() != config.input ||
		item.pixels.size() != static_cast<std::size_t>(config.input.size()))
		throw ShapeError("item is " + std::to_string(item.height) + "x" + std::to_string(item.width) + "x" +
						 std::to_string(item.channels) + ", encoder expects " +
						 std::to_string(config.input.height) + "x" + std::to_string(config.input.width) + "x" +
						 std::to_string(config.input.channels));
	return Eigen::Map<const Vector>(item.pixels.data(), static_cast<Eigen::Index>(item.pixels.size()));
}

/// Stacks items column-wise into an (input size) x n matrix.
inline Matrix stack_items(std::span<const ItemTensor> items, const EncoderConfig& config) {
	Matrix x(config.input.size(), static_cast<Eigen::Index>(items.size()));
	for (std::size_t n = 0; n < items.size(); ++n)
		x.col(static_cast<Eigen::Index>(n)) = flatten(items[n], config);
	return x;
}

namespace detail {

inline void activate(Matrix& a, Activation act) {
	if (act == Activation::relu)
		a = a.cwiseMax(0.0);
	else
		a = a.array().tanh().matrix();
}

/// Multiplies `grad` in place by the activation derivative, given post-activation values.
inline void activation_backward(Matrix& grad, const Matrix& post, Activation act) {
	if (act == Activation::relu)
		grad = (post.array() > 0.0).select(grad, 0.0);
	else
		grad = (grad.array() * (1.0 - post.array().square())).matrix();
}

inline Matrix affine(const Dense& d, const Matrix& x) {
	Matrix out = d.weight * x;
	out.colwise() += d.bias;
	return out;
}

} // namespace detail

/// Activations recorded by forward_batch for backward_batch.
struct ForwardCache {
	/// trunk[0] is the input batch; trunk[l + 1] the output of trunk layer l.
	std::vector<Matrix> trunk;
	/// heads[v][l] is the output of head layer l; the last entry is the D x n embedding.
	std::vector<std::vector<Matrix>> heads;

	const Matrix& shared() const { return trunk.back(); }
	const Matrix& embedding(std::size_t view) const { return heads[view].back(); }
};

/// Encodes a batch of items given as columns of `x`. The shared activation is
/// computed once and fed to every head.
inline ForwardCache forward_batch(const ModelParams& params, const EncoderConfig& config, const Matrix& x) {
	if (x.rows() != config.input.size())
		throw ShapeError("batch rows " + std::to_string(x.rows()) + " != input size " +
						 std::to_string(config.input.size()));
	ForwardCache cache;
	cache.trunk.push_back(x);
	for (const auto& layer : params.trunk) {
		Matrix a = detail::affine(layer, cache.trunk.back());
		detail::activate(a, config.activation);
		cache.trunk.push_back(std::move(a));
	}
	for (const auto& head : params.heads) {
		auto& acts = cache.heads.emplace_back();
		const Matrix* in = &cache.shared();
		for (std::size_t l = 0; l < head.size(); ++l) {
			Matrix a = detail::affine(head[l], *in);
			if (l + 1 < head.size())
				detail::activate(a, config.activation);
			acts.push_back(std::move(a));
			in = &acts.back();
		}
	}
	return cache;
}

/// Accumulates parameter gradients into `grads` given dL/dY for every view
/// (each D x n, matching the cached batch).
inline void backward_batch(const ModelParams& params, const EncoderConfig& config, const ForwardCache& cache,
						   std::span<const Matrix> embedding_grads, ModelParams& grads) {
	Matrix shared_grad = Matrix::Zero(cache.shared().rows(), cache.shared().cols());
	for (std::size_t v = 0; v < params.heads.size(); ++v) {
		const auto& head = params.heads[v];
		const auto& acts = cache.heads[v];
		Matrix g = embedding_grads[v];
		for (std::size_t l = head.size(); l-- > 0;) {
			if (l + 1 < head.size())
				detail::activation_backward(g, acts[l], config.activation);
			const Matrix& in = l == 0 ? cache.shared() : acts[l - 1];
			grads.heads[v][l].weight.noalias() += g * in.transpose();
			grads.heads[v][l].bias += g.rowwise().sum();
			Matrix next = head[l].weight.transpose() * g;
			g = std::move(next);
		}
		shared_grad += g;
	}
	Matrix g = std::move(shared_grad);
	for (std::size_t l = params.trunk.size(); l-- > 0;) {
		detail::activation_backward(g, cache.trunk[l + 1], config.activation);
		grads.trunk[l].weight.noalias() += g * cache.trunk[l].transpose();
		grads.trunk[l].bias += g.rowwise().sum();
		if (l > 0) {
			Matrix next = params.trunk[l].weight.transpose() * g;
			g = std::move(next);
		}
	}
}

/// V x D embedding of a single item; row v is h[v](g(x)).
inline Matrix forward(const ModelParams& params, const EncoderConfig& config, const ItemTensor& item) {
	const Vector x = flatten(item, config);
	const ForwardCache cache = forward_batch(params, config, x);
	Matrix out(config.num_views, config.embed_dim);
	for (int v = 0; v < config.num_views; ++v)
		out.row(v) = cache.embedding(static_cast<std::size_t>(v)).col(0).transpose();
	return out;
}

/// V x D embeddings for many items: element n is the embedding of items[n].
inline std::vector<Matrix> encode_all(const ModelParams& params, const EncoderConfig& config,
									  std::span<const ItemTensor> items) {
	std::vector<Matrix> out;
	out.reserve(items.size());
	constexpr std::size_t chunk = 256;
	for (std::size_t start = 0; start < items.size(); start += chunk) {
		const std::size_t n = std::min(chunk, items.size() - start);
		const ForwardCache cache = forward_batch(params, config, stack_items(items.subspan(start, n), config));
		for (std::size_t i = 0; i < n; ++i) {
			Matrix y(config.num_views, config.embed_dim);
			for (int v = 0; v < config.num_views; ++v)
				y.row(v) = cache.embedding(static_cast<std::size_t>(v)).col(static_cast<Eigen::Index>(i)).transpose();
			out.push_back(std::move(y));
		}
	}
	return out;
}

} // namespace mvt
