// Versioned text checkpoints.
//
//   mvt-checkpoint 1
//   seed <u64>
//   input <height> <width> <channels>
//   trunk_hidden <count> <width>...
//   head_hidden_layers <k>
//   embed_dim <D>
//   views <V>
//   activation <relu|tanh>
//   workers <M>
//   worker <id>                      (M lines)
//   block <name> <rows> <cols>       (then `rows` lines of `cols` hex-floats)
//   ...
//   end
//
// Blocks appear in ModelParams::for_each_block order: trunk.<l>.weight,
// trunk.<l>.bias, head.<v>.<l>.weight, head.<v>.<l>.bias, worker_prefs.
// Hex-float text round-trips every double exactly.
#pragma once

#include <mvt/error.hpp>
#include <mvt/model.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace mvt {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hexfloat(double x) {
	char buf[64];
	std::snprintf(buf, sizeof buf, "%a", x);
	return buf;
}

inline void write_block(std::ostream& out, const std::string& name, const Matrix& m) {
	out << "block " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
	for (Eigen::Index r = 0; r < m.rows(); ++r) {
		for (Eigen::Index c = 0; c < m.cols(); ++c)
			out << (c ? " " : "") << hexfloat(m(r, c));
		out << '\n';
	}
}

/// Line-oriented reader that reports the line number on failure.
class CheckpointReader {
public:
	explicit CheckpointReader(std::istream& in) : in_(in) {}

	std::istringstream next(const std::string& what) {
		std::string line;
		if (!std::getline(in_, line))
			throw LoadError("corrupt checkpoint: unexpected end of file while reading " + what);
		++line_no_;
		return std::istringstream(line);
	}

	/// Reads `key value...` and checks the key.
	std::istringstream field(const std::string& key) {
		auto ls = next(key);
		std::string got;
		ls >> got;
		if (got != key)
			fail(key, "expected '" + key + "', found '" + got + "'");
		return ls;
	}

	template <typename T>
	T scalar(const std::string& key) {
		auto ls = field(key);
		T value{};
		if (!(ls >> value))
			fail(key, "missing or malformed value");
		return value;
	}

	Matrix block(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
		auto header = field("block");
		std::string got;
		Eigen::Index r = -1, c = -1;
		header >> got >> r >> c;
		if (got != name)
			fail(name, "expected block '" + name + "', found '" + got + "'");
		if (r != rows || c != cols)
			throw ShapeError(name + ": checkpoint block is " + std::to_string(r) + "x" + std::to_string(c) +
							 ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
		Matrix m(rows, cols);
		for (Eigen::Index i = 0; i < rows; ++i) {
			auto ls = next(name);
			for (Eigen::Index j = 0; j < cols; ++j) {
				std::string tok;
				if (!(ls >> tok))
					fail(name, "row " + std::to_string(i) + " is truncated");
				errno = 0;
				char* end = nullptr;
				const double v = std::strtod(tok.c_str(), &end);
				if (end != tok.c_str() + tok.size() || errno == ERANGE)
					fail(name, "malformed number '" + tok + "'");
				m(i, j) = v;
			}
		}
		return m;
	}

	[[noreturn]] void fail(const std::string& field, const std::string& msg) const {
		throw LoadError("corrupt checkpoint: " + field + " (line " + std::to_string(line_no_) + "): " + msg);
	}

private:
	std::istream& in_;
	int line_no_ = 0;
};

} // namespace detail

inline void write_checkpoint(std::ostream& out, const ModelParams& params, const EncoderConfig& config) {
	check_shapes(params, config);
	out << "mvt-checkpoint " << kCheckpointVersion << '\n';
	out << "seed " << config.seed << '\n';
	out << "input " << config.input.height << ' ' << config.input.width << ' ' << config.input.channels << '\n';
	out << "trunk_hidden " << config.trunk_hidden.size();
	for (int w : config.trunk_hidden)
		out << ' ' << w;
	out << '\n';
	out << "head_hidden_layers " << config.head_hidden_layers << '\n';
	out << "embed_dim " << config.embed_dim << '\n';
	out << "views " << config.num_views << '\n';
	out << "activation " << to_string(config.activation) << '\n';
	out << "workers " << params.worker_ids.size() << '\n';
	for (const auto& id : params.worker_ids) {
		if (id.empty() || id.find_first_of(" \t\r\n,") != std::string::npos)
			throw ArgumentError("worker id '" + id + "' cannot be stored (empty or contains separators)");
		out << "worker " << id << '\n';
	}
	for (std::size_t l = 0; l < params.trunk.size(); ++l) {
		const std::string base = "trunk." + std::to_string(l);
		detail::write_block(out, base + ".weight", params.trunk[l].weight);
		detail::write_block(out, base + ".bias", params.trunk[l].bias);
	}
	for (std::size_t v = 0; v < params.heads.size(); ++v)
		for (std::size_t l = 0; l < params.heads[v].size(); ++l) {
			const std::string base = "head." + std::to_string(v) + "." + std::to_string(l);
			detail::write_block(out, base + ".weight", params.heads[v][l].weight);
			detail::write_block(out, base + ".bias", params.heads[v][l].bias);
		}
	detail::write_block(out, "worker_prefs", params.worker_prefs);
	out << "end\n";
}

inline void save_checkpoint(const ModelParams& params, const EncoderConfig& config, const std::string& path) {
	std::ostringstream buf;
	write_checkpoint(buf, params, config);
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw LoadError("cannot open '" + path + "' for writing");
	out << buf.str();
	if (!out.flush())
		throw LoadError("write to '" + path + "' failed");
}

inline std::pair<ModelParams, EncoderConfig> read_checkpoint(std::istream& in) {
	detail::CheckpointReader r(in);
	{
		auto ls = r.next("header");
		std::string magic;
		int version = -1;
		ls >> magic >> version;
		if (magic != "mvt-checkpoint")
			r.fail("header", "not a checkpoint file");
		if (version != kCheckpointVersion)
			throw LoadError("version: checkpoint format " + std::to_string(version) + ", supported " +
							std::to_string(kCheckpointVersion));
	}
	EncoderConfig config;
	config.seed = r.scalar<std::uint64_t>("seed");
	{
		auto ls = r.field("input");
		if (!(ls >> config.input.height >> config.input.width >> config.input.channels))
			r.fail("input", "expected three integers");
	}
	{
		auto ls = r.field("trunk_hidden");
		std::size_t n = 0;
		if (!(ls >> n) || n > 1024)
			r.fail("trunk_hidden", "bad layer count");
		config.trunk_hidden.assign(n, 0);
		for (auto& w : config.trunk_hidden)
			if (!(ls >> w))
				r.fail("trunk_hidden", "missing width");
	}
	config.head_hidden_layers = r.scalar<int>("head_hidden_layers");
	config.embed_dim = r.scalar<int>("embed_dim");
	config.num_views = r.scalar<int>("views");
	config.activation = parse_activation(r.scalar<std::string>("activation"));
	try {
		config.validate();
	} catch (const ConfigError& e) {
		r.fail("config", e.what());
	}

	ModelParams params;
	const auto workers = r.scalar<std::size_t>("workers");
	if (workers > 1000000)
		r.fail("workers", "implausible worker count");
	for (std::size_t m = 0; m < workers; ++m)
		params.worker_ids.push_back(r.scalar<std::string>("worker"));

	// Rebuild shapes from the config and read each block against them.
	const ModelParams shape = init_params(config, params.worker_ids, 0);
	for (std::size_t l = 0; l < shape.trunk.size(); ++l) {
		const std::string base = "trunk." + std::to_string(l);
		const auto& d = shape.trunk[l];
		params.trunk.push_back({r.block(base + ".weight", d.weight.rows(), d.weight.cols()),
								r.block(base + ".bias", d.bias.size(), 1)});
	}
	for (std::size_t v = 0; v < shape.heads.size(); ++v) {
		auto& head = params.heads.emplace_back();
		for (std::size_t l = 0; l < shape.heads[v].size(); ++l) {
			const std::string base = "head." + std::to_string(v) + "." + std::to_string(l);
			const auto& d = shape.heads[v][l];
			head.push_back({r.block(base + ".weight", d.weight.rows(), d.weight.cols()),
							r.block(base + ".bias", d.bias.size(), 1)});
		}
	}
	params.worker_prefs =
		r.block("worker_prefs", static_cast<Eigen::Index>(workers), static_cast<Eigen::Index>(config.num_views));
	{
		auto ls = r.next("end");
		std::string tail;
		ls >> tail;
		if (tail != "end")
			r.fail("end", "missing end marker");
	}
	if (!params.all_finite())
		throw LoadError("corrupt checkpoint: non-finite parameter");
	return {std::move(params), std::move(config)};
}

inline std::pair<ModelParams, EncoderConfig> load_checkpoint(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw LoadError("cannot open checkpoint '" + path + "'");
	return read_checkpoint(in);
}

/// Loads a checkpoint and checks it against the architecture the caller expects.
inline std::pair<ModelParams, EncoderConfig> load_checkpoint(const std::string& path, const EncoderConfig& expected) {
	auto loaded = load_checkpoint(path);
	const EncoderConfig& got = loaded.second;
	auto mismatch = [](const std::string& field, auto have, auto want) {
		throw ShapeError(field + ": checkpoint has " + std::to_string(have) + ", requested " + std::to_string(want));
	};
	if (got.num_views != expected.num_views)
		mismatch("views", got.num_views, expected.num_views);
	if (got.embed_dim != expected.embed_dim)
		mismatch("embed_dim", got.embed_dim, expected.embed_dim);
	if (got.input.size() != expected.input.size())
		mismatch("input", got.input.size(), expected.input.size());
	if (got.trunk_hidden != expected.trunk_hidden)
		throw ShapeError("trunk_hidden: checkpoint layer widths differ from the requested ones");
	if (got.head_hidden_layers != expected.head_hidden_layers)
		mismatch("head_hidden_layers", got.head_hidden_layers, expected.head_hidden_layers);
	return loaded;
}

} // namespace mvt
