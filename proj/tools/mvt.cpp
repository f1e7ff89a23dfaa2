// Command-line driver: generate, simulate, train, eval, export, serve.
#include <mvt/checkpoint.hpp>
#include <mvt/crowdsim.hpp>
#include <mvt/dataset_io.hpp>
#include <mvt/eval.hpp>
#include <mvt/png.hpp>
#include <mvt/taskserver.hpp>
#include <mvt/trainer.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mvt;

namespace {

void ensure_dir(const std::string& dir) {
	std::error_code ec;
	fs::create_directories(dir, ec);
	if (ec || !fs::is_directory(dir))
		throw Error("cannot create directory " + dir);
}

void require_file(const std::string& path) {
	if (!fs::is_regular_file(path))
		throw ArgumentError("no such file: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
	std::ofstream out(path, std::ios::binary);
	out << text;
	if (!out.flush())
		throw Error("write failed: " + path.string());
}

std::vector<int> parse_widths(const std::string& spec) {
	std::vector<int> out;
	std::stringstream in(spec);
	std::string field;
	while (std::getline(in, field, ',')) {
		std::size_t used = 0;
		int w = 0;
		try {
			w = std::stoi(field, &used);
		} catch (const std::exception&) {
			used = 0;
		}
		if (used != field.size() || field.empty())
			throw ArgumentError("bad layer width '" + field + "'");
		out.push_back(w);
	}
	return out;
}

struct GenerateArgs {
	std::uint64_t seed = 0;
	int items_per_category = 2;
	std::string out;
};

void cmd_generate(const GenerateArgs& a) {
	const DatasetManifest m = generate_corpus(a.seed, a.items_per_category);
	const ItemStore items = render_items(m);
	ensure_dir(a.out + "/items");
	write_manifest(a.out + "/manifest.txt", m);
	for (const auto& r : m.records)
		write_text(fs::path(a.out) / "items" / (std::to_string(r.id) + ".png"), encode_png(items.get(r.id)));
	std::cout << "generated " << m.records.size() << " items in " << a.out << '\n';
}

struct SimulateArgs {
	int setting = 1;
	std::size_t n_per_worker = 2000;
	std::uint64_t seed = 0;
	std::string manifest;
	std::string split = "train";
	std::string tag;
	std::string out;
};

void cmd_simulate(const SimulateArgs& a) {
	require_file(a.manifest);
	const DatasetManifest m = read_manifest(a.manifest);
	const Split split = parse_split(a.split);
	const auto triplets = sample_triplets(m.split(split), setting_workers(a.setting), a.n_per_worker, a.seed);
	const std::string tag = a.tag.empty() ? "setting" + std::to_string(a.setting) + "-" + a.split : a.tag;
	ensure_dir(a.out);
	const std::string path = a.out + "/triplets-" + tag + ".txt";
	write_triplets(path, triplets);
	std::cout << "wrote " << triplets.size() << " triplets to " << path << '\n';
}

struct TrainArgs {
	std::string manifest;
	std::string triplets;
	int views = 2;
	int dim = 8;
	std::string hidden = "256,64";
	int head_layers = 1;
	std::string activation = "relu";
	int epochs = 100;
	double lr = 1e-3;
	int batch = 64;
	std::string optimizer = "adam";
	std::uint64_t seed = 0;
	bool no_entropy = false;
	bool entropy_stop_grad = false;
	bool deterministic = false;
	int checkpoint_every = 0;
	std::string out;
};

void cmd_train(const TrainArgs& a) {
	require_file(a.manifest);
	require_file(a.triplets);
	const DatasetManifest m = read_manifest(a.manifest);
	const ItemStore items = render_items(m);
	const auto triplets = read_triplets(a.triplets);

	EncoderConfig config;
	config.input = {m.render.height, m.render.width, 3};
	config.trunk_hidden = parse_widths(a.hidden);
	config.head_hidden_layers = a.head_layers;
	config.embed_dim = a.dim;
	config.num_views = a.views;
	config.activation = parse_activation(a.activation);
	config.seed = a.seed;
	config.validate();

	TrainConfig cfg;
	cfg.epochs = a.epochs;
	cfg.learning_rate = a.lr;
	cfg.batch_size = a.batch;
	if (a.optimizer == "adam")
		cfg.optimizer = OptimizerKind::adam;
	else if (a.optimizer == "sgd-momentum")
		cfg.optimizer = OptimizerKind::sgd_momentum;
	else
		throw ArgumentError("optimizer must be adam or sgd-momentum");
	cfg.seed = a.seed;
	cfg.use_entropy = !a.no_entropy;
	cfg.entropy_stop_gradient = a.entropy_stop_grad;
	cfg.deterministic = a.deterministic;
	cfg.checkpoint_every = a.checkpoint_every;
	if (cfg.checkpoint_every < 0)
		throw ArgumentError("checkpoint-every must be >= 0");

	ensure_dir(a.out);
	std::ofstream log(fs::path(a.out) / "loss.log", std::ios::binary);
	if (!log)
		throw Error("cannot write " + a.out + "/loss.log");
	auto progress = [&](const EpochReport& e) {
		char line[64];
		std::snprintf(line, sizeof line, "%d %.17g\n", e.epoch, e.mean_loss);
		log << line << std::flush;
		if (cfg.checkpoint_every > 0 && e.epoch % cfg.checkpoint_every == 0 && e.epoch != cfg.epochs)
			save_checkpoint(*e.params, config, a.out + "/checkpoint-" + std::to_string(e.epoch));
	};
	const TrainResult r = fit(config, items, triplets, cfg, progress);
	const std::string final_path = a.out + "/checkpoint-" + std::to_string(cfg.epochs);
	save_checkpoint(r.params, config, final_path);
	std::cout << "trained " << cfg.epochs << " epochs on " << triplets.size() << " triplets";
	if (!r.loss_history.empty())
		std::cout << ", final loss " << r.loss_history.back();
	std::cout << "; checkpoint " << final_path << '\n';
}

struct EvalArgs {
	std::string checkpoint;
	std::string manifest;
	std::string triplets;
	std::string metrics = "all";
	int anchors_k = 1;
	std::uint64_t seed = 0;
	bool no_entropy = false;
	std::string out;
};

void cmd_eval(const EvalArgs& a) {
	require_file(a.checkpoint);
	require_file(a.manifest);
	const auto [params, config] = load_checkpoint(a.checkpoint);
	const DatasetManifest m = read_manifest(a.manifest);
	if (config.input != InputDims{m.render.height, m.render.width, 3})
		throw ShapeError("checkpoint input dims do not match the manifest images");
	const ItemStore items = render_items(m);
	EvalOptions options;
	options.metrics = parse_metrics(a.metrics);
	options.anchors_k = a.anchors_k;
	options.seed = a.seed;
	options.use_entropy = !a.no_entropy;
	std::vector<TripletAnnotation> triplets;
	if (options.wants(Metric::triplet)) {
		if (a.triplets.empty())
			throw ArgumentError("--triplets is required for the triplet metric");
		require_file(a.triplets);
		triplets = read_triplets(a.triplets);
	}
	const EvalReport report = evaluate(params, config, m, items, triplets, options);
	ensure_dir(a.out);
	write_text(fs::path(a.out) / "eval-report.txt", report.to_text());
	write_text(fs::path(a.out) / "eval-report.json", report.to_json().dump(2) + "\n");
	std::cout << report.to_text();
}

struct ExportArgs {
	std::string checkpoint;
	std::string manifest;
	std::string out;
};

void cmd_export(const ExportArgs& a) {
	require_file(a.checkpoint);
	require_file(a.manifest);
	const auto [params, config] = load_checkpoint(a.checkpoint);
	const DatasetManifest m = read_manifest(a.manifest);
	const ItemStore items = render_items(m);
	const fs::path out(a.out);
	if (out.has_parent_path())
		ensure_dir(out.parent_path().string());
	export_embeddings(params, config, items, m, a.out);
	std::cout << "exported " << m.records.size() * static_cast<std::size_t>(config.num_views) << " rows to "
			  << a.out << '\n';
}

struct ServeArgs {
	std::string manifest;
	std::string host = "127.0.0.1";
	int port = 8080;
	std::string answers_out;
	std::uint64_t seed = 0;
};

TaskServer* g_server = nullptr;

void cmd_serve(const ServeArgs& a) {
	require_file(a.manifest);
	const DatasetManifest m = read_manifest(a.manifest);
	const ItemStore items = render_items(m);
	TaskServer server(m, items, a.answers_out, a.seed);
	const int port = server.bind(a.host, a.port);
	g_server = &server;
	std::signal(SIGINT, [](int) { g_server->stop(); });
	std::signal(SIGTERM, [](int) { g_server->stop(); });
	std::cout << "listening on http://" << a.host << ':' << port << std::endl;
	server.run();
	g_server = nullptr;
}

std::string one_line(std::string s) {
	for (char& c : s)
		if (c == '\n' || c == '\r')
			c = ' ';
	return s;
}

/// Exit codes by error kind; every failure prints one "error <kind>: <message>" line.
int report(const char* kind, int code, const std::string& message) {
	std::cerr << "error " << kind << ": " << one_line(message) << std::endl;
	return code;
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"Multiview triplet embedding toolkit"};
	app.require_subcommand(1);

	GenerateArgs gen;
	auto* g = app.add_subcommand("generate", "Render the synthetic colored-digit corpus");
	g->add_option("--seed", gen.seed);
	g->add_option("--items-per-category", gen.items_per_category)->check(CLI::PositiveNumber);
	g->add_option("--out", gen.out)->required();

	SimulateArgs sim;
	auto* s = app.add_subcommand("simulate", "Answer random triplets with simulated workers");
	s->add_option("--setting", sim.setting)->check(CLI::Range(1, 3));
	s->add_option("--n-per-worker", sim.n_per_worker)->check(CLI::PositiveNumber);
	s->add_option("--seed", sim.seed);
	s->add_option("--manifest", sim.manifest)->required();
	s->add_option("--split", sim.split)->check(CLI::IsMember({"train", "test"}));
	s->add_option("--tag", sim.tag);
	s->add_option("--out", sim.out)->required();

	TrainArgs tr;
	auto* t = app.add_subcommand("train", "Train the encoder and worker preferences");
	t->add_option("--manifest", tr.manifest)->required();
	t->add_option("--triplets", tr.triplets)->required();
	t->add_option("--views", tr.views);
	t->add_option("--dim", tr.dim);
	t->add_option("--hidden", tr.hidden, "comma-separated hidden widths");
	t->add_option("--head-layers", tr.head_layers, "trailing hidden layers owned by each view");
	t->add_option("--activation", tr.activation)->check(CLI::IsMember({"relu", "tanh"}));
	t->add_option("--epochs", tr.epochs);
	t->add_option("--lr", tr.lr);
	t->add_option("--batch", tr.batch);
	t->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "sgd-momentum"}));
	t->add_option("--seed", tr.seed);
	t->add_flag("--no-entropy", tr.no_entropy);
	t->add_flag("--entropy-stop-grad", tr.entropy_stop_grad);
	t->add_flag("--deterministic", tr.deterministic);
	t->add_option("--checkpoint-every", tr.checkpoint_every);
	t->add_option("--out", tr.out)->required();

	EvalArgs ev;
	auto* e = app.add_subcommand("eval", "Score a checkpoint");
	e->add_option("--checkpoint", ev.checkpoint)->required();
	e->add_option("--manifest", ev.manifest)->required();
	e->add_option("--triplets", ev.triplets);
	e->add_option("--metrics", ev.metrics, "all or a list of triplet,kmeans,agglomerative,linear,anchors,preference");
	e->add_option("--anchors-k", ev.anchors_k);
	e->add_option("--seed", ev.seed);
	e->add_flag("--no-entropy", ev.no_entropy);
	e->add_option("--out", ev.out)->required();

	ExportArgs ex;
	auto* x = app.add_subcommand("export", "Write per-view embeddings of every item");
	x->add_option("--checkpoint", ex.checkpoint)->required();
	x->add_option("--manifest", ex.manifest)->required();
	x->add_option("--out", ex.out)->required();

	ServeArgs sv;
	auto* v = app.add_subcommand("serve", "Serve annotation tasks over HTTP");
	v->add_option("--manifest", sv.manifest)->required();
	v->add_option("--host", sv.host);
	v->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
	v->add_option("--answers-out", sv.answers_out)->required();
	v->add_option("--seed", sv.seed);

	try {
		app.parse(argc, argv);
	} catch (const CLI::Success& h) {
		return app.exit(h);
	} catch (const CLI::ParseError& err) {
		return report("usage", 2, err.what());
	}

	try {
		if (*g)
			cmd_generate(gen);
		else if (*s)
			cmd_simulate(sim);
		else if (*t)
			cmd_train(tr);
		else if (*e)
			cmd_eval(ev);
		else if (*x)
			cmd_export(ex);
		else if (*v)
			cmd_serve(sv);
	} catch (const ArgumentError& err) {
		return report("argument", 2, err.what());
	} catch (const ConfigError& err) {
		return report("config", 3, err.what());
	} catch (const LoadError& err) {
		return report("load", 4, err.what());
	} catch (const ReferenceError& err) {
		return report("reference", 5, err.what());
	} catch (const ShapeError& err) {
		return report("shape", 6, err.what());
	} catch (const NumericError& err) {
		return report("numeric", 7, err.what());
	} catch (const std::exception& err) {
		return report("io", 1, err.what());
	}
	return 0;
}
