#include <mvt/checkpoint.hpp>
#include <mvt/dataset_io.hpp>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#ifndef MVT_CLI_PATH
#error "MVT_CLI_PATH must point at the mvt executable"
#endif

namespace mvt {
namespace {

namespace fs = std::filesystem;

struct Outcome {
	int code = -1;
	std::string out;
	std::string err;
};

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

class Cli : public ::testing::Test {
protected:
	static fs::path dir() {
		static const fs::path d = [] {
			const fs::path p = fs::temp_directory_path() / ("mvt-cli-" + std::to_string(::getpid()));
			fs::remove_all(p);
			fs::create_directories(p);
			return p;
		}();
		return d;
	}

	static Outcome mvt(const std::string& args) {
		static int counter = 0;
		const fs::path out = dir() / ("stdout-" + std::to_string(counter));
		const fs::path err = dir() / ("stderr-" + std::to_string(counter++));
		const std::string cmd = std::string(MVT_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
		const int status = std::system(cmd.c_str());
		return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
	}

	/// Shared corpus: generate(seed 0, ipc 2) and setting-1 triplets on both splits.
	static void SetUpTestSuite() {
		const std::string d = dir().string();
		ASSERT_EQ(mvt("generate --seed 0 --items-per-category 2 --out " + d + "/data").code, 0);
		ASSERT_EQ(mvt("simulate --setting 1 --n-per-worker 200 --seed 0 --manifest " + d +
					  "/data/manifest.txt --out " + d + "/data")
					  .code,
				  0);
		ASSERT_EQ(mvt("simulate --setting 1 --n-per-worker 2000 --seed 1 --split test --manifest " + d +
					  "/data/manifest.txt --out " + d + "/data")
					  .code,
				  0);
	}

	static void TearDownTestSuite() { fs::remove_all(dir()); }

	static std::string data(const std::string& name) { return (dir() / "data" / name).string(); }
};

TEST_F(Cli, GenerateLayout) {
	EXPECT_TRUE(fs::is_regular_file(data("manifest.txt")));
	const DatasetManifest m = read_manifest(data("manifest.txt"));
	EXPECT_EQ(m.split(Split::train).size(), 200u);
	EXPECT_EQ(m.split(Split::test).size(), 200u);
	std::size_t pngs = 0;
	for (const auto& e : fs::directory_iterator(dir() / "data" / "items")) {
		EXPECT_EQ(e.path().extension(), ".png");
		EXPECT_EQ(slurp(e.path()).substr(1, 3), "PNG");
		++pngs;
	}
	EXPECT_EQ(pngs, 400u);
}

TEST_F(Cli, SimulateIsByteIdentical) {
	const std::string d = dir().string();
	const std::string args = "simulate --setting 1 --n-per-worker 100 --seed 9 --manifest " + data("manifest.txt");
	ASSERT_EQ(mvt(args + " --out " + d + "/sim1").code, 0);
	ASSERT_EQ(mvt(args + " --out " + d + "/sim2").code, 0);
	const std::string a = slurp(dir() / "sim1" / "triplets-setting1-train.txt");
	EXPECT_EQ(a, slurp(dir() / "sim2" / "triplets-setting1-train.txt"));
	EXPECT_EQ(read_triplets(data("triplets-setting1-train.txt")).size(), 400u);
	EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 200);
}

TEST_F(Cli, TrainIsDeterministicAndLeavesInputsAlone) {
	const std::string d = dir().string();
	const std::string manifest_before = slurp(data("manifest.txt"));
	const std::string triplets_before = slurp(data("triplets-setting1-train.txt"));
	const std::string args = "train --manifest " + data("manifest.txt") + " --triplets " +
							 data("triplets-setting1-train.txt") +
							 " --epochs 3 --checkpoint-every 2 --hidden 32,16 --dim 4 --seed 5 --deterministic";
	ASSERT_EQ(mvt(args + " --out " + d + "/t1").code, 0);
	ASSERT_EQ(mvt(args + " --out " + d + "/t2").code, 0);
	for (const char* f : {"loss.log", "checkpoint-2", "checkpoint-3"}) {
		ASSERT_TRUE(fs::is_regular_file(dir() / "t1" / f)) << f;
		EXPECT_EQ(slurp(dir() / "t1" / f), slurp(dir() / "t2" / f)) << f;
	}
	EXPECT_FALSE(fs::exists(dir() / "t1" / "checkpoint-1"));
	const std::string log = slurp(dir() / "t1" / "loss.log");
	EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
	EXPECT_EQ(log.rfind("1 ", 0), 0u);
	const auto [params, config] = load_checkpoint((dir() / "t1" / "checkpoint-3").string());
	EXPECT_EQ(config.trunk_hidden, (std::vector<int>{32, 16}));
	EXPECT_EQ(config.embed_dim, 4);
	EXPECT_EQ(params.worker_ids, (std::vector<std::string>{"worker1", "worker2"}));
	EXPECT_EQ(slurp(data("manifest.txt")), manifest_before);
	EXPECT_EQ(slurp(data("triplets-setting1-train.txt")), triplets_before);
}

TEST_F(Cli, FreshCheckpointScoresNearChance) {
	const std::string d = dir().string();
	ASSERT_EQ(mvt("train --manifest " + data("manifest.txt") + " --triplets " + data("triplets-setting1-train.txt") +
				  " --epochs 0 --seed 0 --out " + d + "/fresh")
				  .code,
			  0);
	const Outcome r = mvt("eval --checkpoint " + d + "/fresh/checkpoint-0 --manifest " + data("manifest.txt") +
					  " --triplets " + data("triplets-setting1-test.txt") + " --metrics triplet --out " + d + "/fresh");
	ASSERT_EQ(r.code, 0) << r.err;
	const auto report = nlohmann::json::parse(slurp(dir() / "fresh" / "eval-report.json"));
	const double acc = report.at("triplet_accuracy").get<double>();
	EXPECT_LE(acc, 0.45);
	EXPECT_GE(acc, 0.2);
	EXPECT_NE(slurp(dir() / "fresh" / "eval-report.txt").find("triplet_accuracy = "), std::string::npos);
}

TEST_F(Cli, SingleViewReportOmitsPreferences) {
	const std::string d = dir().string();
	ASSERT_EQ(mvt("train --manifest " + data("manifest.txt") + " --triplets " + data("triplets-setting1-train.txt") +
				  " --epochs 1 --views 1 --hidden 16,8 --out " + d + "/v1")
				  .code,
			  0);
	const Outcome r = mvt("eval --checkpoint " + d + "/v1/checkpoint-1 --manifest " + data("manifest.txt") +
					  " --triplets " + data("triplets-setting1-test.txt") + " --out " + d + "/v1");
	ASSERT_EQ(r.code, 0) << r.err;
	EXPECT_EQ(r.out.find("preference"), std::string::npos);
	const auto report = nlohmann::json::parse(slurp(dir() / "v1" / "eval-report.json"));
	EXPECT_FALSE(report.contains("preference_shares"));
	EXPECT_TRUE(report.contains("k_anchors_accuracy"));

	ASSERT_EQ(mvt("train --manifest " + data("manifest.txt") + " --triplets " + data("triplets-setting1-train.txt") +
				  " --epochs 1 --views 2 --hidden 16,8 --out " + d + "/v2")
				  .code,
			  0);
	const Outcome two = mvt("eval --checkpoint " + d + "/v2/checkpoint-1 --manifest " + data("manifest.txt") +
						" --metrics preference --out " + d + "/v2");
	ASSERT_EQ(two.code, 0) << two.err;
	EXPECT_NE(two.out.find("preference.worker1 = "), std::string::npos);
}

TEST_F(Cli, ExportWritesOneRowPerItemAndView) {
	const std::string d = dir().string();
	ASSERT_EQ(mvt("train --manifest " + data("manifest.txt") + " --triplets " + data("triplets-setting1-train.txt") +
				  " --epochs 0 --hidden 8 --head-layers 0 --dim 3 --out " + d + "/ex")
				  .code,
			  0);
	const Outcome r =
		mvt("export --checkpoint " + d + "/ex/checkpoint-0 --manifest " + data("manifest.txt") + " --out " + d +
			"/ex/embeddings.csv");
	ASSERT_EQ(r.code, 0) << r.err;
	const std::string text = slurp(dir() / "ex" / "embeddings.csv");
	EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 800);
	EXPECT_EQ(text.rfind("0,0,Red,0,", 0), 0u);
}

TEST_F(Cli, ErrorsAreOneLineWithNonzeroExit) {
	const std::string d = dir().string();
	const std::vector<std::pair<std::string, int>> cases{
		{"train --manifest " + d + "/missing.txt --triplets x --out " + d + "/e", 2},
		{"simulate --setting 4 --manifest " + data("manifest.txt") + " --out " + d + "/e", 2},
		{"eval --checkpoint " + data("manifest.txt") + " --manifest " + data("manifest.txt") + " --out " + d + "/e", 4},
		{"generate --seed 1", 2},
		{"", 2},
		{"train --manifest " + data("manifest.txt") + " --triplets " + data("triplets-setting1-train.txt") +
			 " --hidden 12,x --out " + d + "/e",
		 2},
		{"train --manifest " + data("manifest.txt") + " --triplets " + data("triplets-setting1-train.txt") +
			 " --batch 0 --out " + d + "/e",
		 3},
	};
	for (const auto& [args, code] : cases) {
		const Outcome r = mvt(args);
		EXPECT_EQ(r.code, code) << args << "\n" << r.err;
		EXPECT_EQ(r.err.rfind("error ", 0), 0u) << r.err;
		EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
	}
}

TEST_F(Cli, ServeAnswersOverHttp) {
	int pipe_fds[2];
	ASSERT_EQ(::pipe(pipe_fds), 0);
	const std::string answers = (dir() / "answers.txt").string();
	const pid_t pid = ::fork();
	ASSERT_GE(pid, 0);
	if (pid == 0) {
		::dup2(pipe_fds[1], STDOUT_FILENO);
		::close(pipe_fds[0]);
		const std::string manifest = data("manifest.txt");
		::execl(MVT_CLI_PATH, MVT_CLI_PATH, "serve", "--manifest", manifest.c_str(), "--port", "0", "--answers-out",
				answers.c_str(), static_cast<char*>(nullptr));
		::_exit(127);
	}
	::close(pipe_fds[1]);
	std::string banner;
	char c = 0;
	while (::read(pipe_fds[0], &c, 1) == 1 && c != '\n')
		banner += c;
	const auto colon = banner.rfind(':');
	ASSERT_NE(colon, std::string::npos) << banner;
	const int port = std::stoi(banner.substr(colon + 1));

	httplib::Client client("127.0.0.1", port);
	auto task = client.Get("/api/task?worker=cli");
	ASSERT_TRUE(task);
	ASSERT_EQ(task->status, 200);
	const auto j = nlohmann::json::parse(task->body);
	const nlohmann::json answer{{"task_id", j["task_id"]}, {"worker", "cli"}, {"choice", "AC"}};
	auto posted = client.Post("/api/answer", answer.dump(), "application/json");
	ASSERT_TRUE(posted);
	EXPECT_EQ(posted->status, 200);

	::kill(pid, SIGTERM);
	int status = 0;
	::waitpid(pid, &status, 0);
	::close(pipe_fds[0]);
	EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0);
	const auto lines = read_triplets(answers);
	ASSERT_EQ(lines.size(), 1u);
	const auto ids = j["items"].get<std::vector<ItemId>>();
	EXPECT_EQ(lines[0], (TripletAnnotation{"cli", ids[0], ids[2], ids[1]}));
}

} // namespace
} // namespace mvt
