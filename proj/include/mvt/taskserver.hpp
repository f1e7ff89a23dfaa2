// HTTP service handing out triplet comparison tasks and recording answers in
// the triplet file format.
//
//   GET  /api/task?worker=ID   -> {"task_id", "worker", "items": [A, B, C], "images": [...], "issued_at"}
//   POST /api/answer           <- {"task_id", "worker", "choice": "AB" | "AC" | "BC"}
//   GET  /api/items/{id}       -> image/png
#pragma once

#include <mvt/crowdsim.hpp>
#include <mvt/dataset_io.hpp>
#include <mvt/error.hpp>
#include <mvt/png.hpp>
#include <mvt/rng.hpp>
#include <mvt/types.hpp>

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>
#include <json.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mvt {

struct TaskRecord {
	std::string task_id;
	std::array<ItemId, 3> items{}; // presentation order A, B, C
	std::int64_t issued_at = 0;    // ms since the Unix epoch
	std::string worker;
};

/// Maps an answer on presentation order (A, B, C) to a triplet line.
inline std::optional<TripletAnnotation> answer_triplet(const TaskRecord& task, std::string_view choice) {
	const auto [a, b, c] = task.items;
	if (choice == "AB")
		return TripletAnnotation{task.worker, a, b, c};
	if (choice == "AC")
		return TripletAnnotation{task.worker, a, c, b};
	if (choice == "BC")
		return TripletAnnotation{task.worker, b, c, a};
	return std::nullopt;
}

enum class AnswerStatus { recorded, bad_request, conflict };

/// Task registry and answer log, independent of the HTTP layer.
class TaskBook {
public:
	/// Tasks draw from `pool`; answers are appended to `answers_path`.
	TaskBook(std::vector<ItemId> pool, const std::string& answers_path, std::uint64_t seed)
		: pool_(std::move(pool)), engine_(derive_seed(seed, stream::tasks)), answers_path_(answers_path) {
		if (pool_.size() < 3)
			throw ArgumentError("task server needs at least three items");
		answers_.open(answers_path, std::ios::app | std::ios::binary);
		if (!answers_)
			throw Error("cannot open answers file " + answers_path);
	}

	TaskRecord issue(const std::string& worker) {
		if (!valid_worker_id(worker))
			throw ArgumentError("invalid worker id");
		std::lock_guard lock(registry_mutex_);
		TaskRecord t;
		std::array<std::size_t, 3> pick{};
		do {
			for (auto& p : pick)
				p = uniform_index(engine_, pool_.size());
		} while (pick[0] == pick[1] || pick[0] == pick[2] || pick[1] == pick[2]);
		for (std::size_t n = 0; n < 3; ++n)
			t.items[n] = pool_[pick[n]];
		char id[40];
		std::snprintf(id, sizeof id, "%08llx-%016llx", static_cast<unsigned long long>(++issued_),
					  static_cast<unsigned long long>(engine_()));
		t.task_id = id;
		t.worker = worker;
		t.issued_at = std::chrono::duration_cast<std::chrono::milliseconds>(
						  std::chrono::system_clock::now().time_since_epoch())
						  .count();
		pending_.emplace(t.task_id, t);
		return t;
	}

	/// Consumes the task and appends one line on success.
	AnswerStatus answer(const std::string& task_id, const std::string& worker, const std::string& choice) {
		TaskRecord task;
		{
			std::lock_guard lock(registry_mutex_);
			auto it = pending_.find(task_id);
			if (it == pending_.end() || it->second.worker != worker)
				return AnswerStatus::conflict;
			if (choice != "AB" && choice != "AC" && choice != "BC")
				return AnswerStatus::bad_request;
			task = std::move(it->second);
			pending_.erase(it);
		}
		const std::string line = format_triplet(*answer_triplet(task, choice)) + "\n";
		std::lock_guard lock(answers_mutex_);
		answers_.write(line.data(), static_cast<std::streamsize>(line.size()));
		answers_.flush();
		if (!answers_)
			throw Error("write failed: " + answers_path_);
		return AnswerStatus::recorded;
	}

	std::size_t pending() const {
		std::lock_guard lock(registry_mutex_);
		return pending_.size();
	}

private:
	std::vector<ItemId> pool_;
	Engine engine_;
	std::uint64_t issued_ = 0;
	std::unordered_map<std::string, TaskRecord> pending_;
	mutable std::mutex registry_mutex_;
	std::string answers_path_;
	std::ofstream answers_;
	std::mutex answers_mutex_;
};

class TaskServer {
public:
	/// Serves every item of the train split (all items when there is none).
	TaskServer(const DatasetManifest& manifest, const ItemStore& items, const std::string& answers_path,
			   std::uint64_t seed = 0)
		: book_(task_pool(manifest), answers_path, seed) {
		for (const auto& r : manifest.records)
			images_.emplace(r.id, encode_png(items.get(r.id)));
		routes();
	}

	/// Binds to `port` (0 picks a free one) and returns the bound port.
	int bind(const std::string& host, int port) {
		const int bound = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
		if (bound < 0)
			throw Error("cannot bind " + host + ":" + std::to_string(port));
		return bound;
	}

	/// Blocks until stop().
	void run() { http_.listen_after_bind(); }
	void stop() { http_.stop(); }
	void wait_until_ready() { http_.wait_until_ready(); }

	TaskBook& book() { return book_; }

private:
	static std::vector<ItemId> task_pool(const DatasetManifest& manifest) {
		std::vector<ItemId> ids;
		for (const auto& r : manifest.split(Split::train))
			ids.push_back(r.id);
		if (ids.empty())
			for (const auto& r : manifest.records)
				ids.push_back(r.id);
		return ids;
	}

	static void error(httplib::Response& res, int status, const std::string& message) {
		res.status = status;
		res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
	}

	void routes() {
		http_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

		http_.Get("/api/task", [this](const httplib::Request& req, httplib::Response& res) {
			const std::string worker = req.get_param_value("worker");
			if (!req.has_param("worker") || !valid_worker_id(worker))
				return error(res, 400, "missing or invalid worker");
			const TaskRecord t = book_.issue(worker);
			nlohmann::json j{{"task_id", t.task_id}, {"worker", t.worker}, {"issued_at", t.issued_at}};
			j["items"] = std::vector<ItemId>(t.items.begin(), t.items.end());
			std::vector<std::string> urls;
			for (ItemId id : t.items)
				urls.push_back("/api/items/" + std::to_string(id));
			j["images"] = urls;
			res.set_content(j.dump(), "application/json");
		});

		http_.Post("/api/answer", [this](const httplib::Request& req, httplib::Response& res) {
			const nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
			if (body.is_discarded() || !body.is_object())
				return error(res, 400, "body must be a JSON object");
			for (const char* key : {"task_id", "worker", "choice"})
				if (!body.contains(key) || !body[key].is_string())
					return error(res, 400, std::string("missing string field '") + key + "'");
			switch (book_.answer(body["task_id"], body["worker"], body["choice"])) {
			case AnswerStatus::recorded:
				res.set_content(R"({"status":"recorded"})", "application/json");
				return;
			case AnswerStatus::bad_request:
				return error(res, 400, "choice must be AB, AC or BC");
			case AnswerStatus::conflict:
				return error(res, 409, "unknown or consumed task");
			}
		});

		http_.Get(R"(/api/items/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
			const std::string digits = req.matches[1].str();
			auto it = images_.end();
			if (digits.size() <= 10) {
				const unsigned long long id = std::stoull(digits);
				if (id <= std::numeric_limits<ItemId>::max())
					it = images_.find(static_cast<ItemId>(id));
			}
			if (it == images_.end())
				return error(res, 404, "unknown item");
			res.set_content(it->second, "image/png");
		});
	}

	TaskBook book_;
	std::unordered_map<ItemId, std::string> images_;
	httplib::Server http_;
};

} // namespace mvt
