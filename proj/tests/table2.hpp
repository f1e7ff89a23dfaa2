// The two worked queries of the simulation settings, with every worker's
// expected per-pair distances and answer.
#pragma once

#include <mvt/crowdsim.hpp>

#include <array>
#include <string>
#include <vector>

namespace mvt::testing {

struct Table2Cell {
	std::string row;                  // e.g. "setting 3 / worker 2 / query B"
	SimWorkerSpec worker;
	std::array<ItemLabel, 3> query;
	std::array<double, 3> distances;  // only checked for distance-based workers
	SimAnswer answer;
};

inline std::vector<Table2Cell> table2_cells() {
	const std::array<ItemLabel, 3> a{ItemLabel{1, ColorId::red}, ItemLabel{2, ColorId::red},
									 ItemLabel{2, ColorId::green}};
	const std::array<ItemLabel, 3> b{ItemLabel{1, ColorId::red}, ItemLabel{2, ColorId::orange},
									 ItemLabel{3, ColorId::green}};
	const auto color_exact = SimWorkerSpec::exact_match(View::color);
	const auto number_exact = SimWorkerSpec::exact_match(View::number);
	const auto color_dist = SimWorkerSpec::distance(View::color);
	const auto number_dist = SimWorkerSpec::distance(View::number);
	const auto w07 = SimWorkerSpec::weighted(0.7);
	const auto w03 = SimWorkerSpec::weighted(0.3);
	constexpr int p12 = 0, p23 = 2;
	return {
		{"setting 1 / worker 1 / query A", color_exact, a, {0, 1, 1}, p12},
		{"setting 1 / worker 1 / query B", color_exact, b, {1, 1, 1}, std::nullopt},
		{"setting 1 / worker 2 / query A", number_exact, a, {1, 1, 0}, p23},
		{"setting 1 / worker 2 / query B", number_exact, b, {1, 1, 1}, std::nullopt},
		{"setting 2 / worker 1 / query A", color_dist, a, {0, 4, 4}, p12},
		{"setting 2 / worker 1 / query B", color_dist, b, {1, 4, 3}, p12},
		{"setting 2 / worker 2 / query A", number_dist, a, {1, 1, 0}, p23},
		{"setting 2 / worker 2 / query B", number_dist, b, {1, 2, 1}, std::nullopt},
		{"setting 3 / worker 1 / query A", color_dist, a, {0, 4, 4}, p12},
		{"setting 3 / worker 1 / query B", color_dist, b, {1, 4, 3}, p12},
		{"setting 3 / worker 2 / query A", w07, a, {0.3, 3.1, 2.8}, p12},
		{"setting 3 / worker 2 / query B", w07, b, {1, 3.4, 2.4}, p12},
		{"setting 3 / worker 3 / query A", w03, a, {0.7, 1.9, 1.2}, p12},
		{"setting 3 / worker 3 / query B", w03, b, {1, 2.6, 1.6}, p12},
		{"setting 3 / worker 4 / query A", number_dist, a, {1, 1, 0}, p23},
		{"setting 3 / worker 4 / query B", number_dist, b, {1, 2, 1}, std::nullopt},
	};
}

/// Checks one cell; returns an empty string on success, else a description.
inline std::string check_table2_cell(const Table2Cell& cell) {
	const auto d = worker_distances(cell.worker, cell.query);
	if (cell.worker.kind != WorkerKind::exact_match)
		for (std::size_t c = 0; c < 3; ++c)
			if (std::abs(d[c] - cell.distances[c]) > 1e-12)
				return cell.row + ": distance " + std::to_string(c) + " = " + std::to_string(d[c]) + ", expected " +
					   std::to_string(cell.distances[c]);
	const SimAnswer got = simulate_answer(cell.worker, cell.query);
	if (got != cell.answer)
		return cell.row + ": answer " + (got ? std::to_string(*got) : "invalid") + ", expected " +
			   (cell.answer ? std::to_string(*cell.answer) : "invalid");
	return {};
}

} // namespace mvt::testing
