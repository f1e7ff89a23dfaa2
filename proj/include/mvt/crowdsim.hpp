// Synthetic colored-digit corpus and simulated crowd workers.
#pragma once

#include <mvt/error.hpp>
#include <mvt/model.hpp>
#include <mvt/rng.hpp>
#include <mvt/types.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mvt {

// ---------------------------------------------------------------------------
// Labels

inline constexpr int kNumColors = 10;
inline constexpr int kNumDigits = 10;

/// Index into the ten-color wheel, in wheel order.
enum class ColorId : int {
	red = 0,
	orange,
	yellow,
	yellow_green,
	green,
	blue_green,
	blue,
	blue_purple,
	purple,
	red_purple,
};

inline constexpr std::array<std::string_view, kNumColors> kColorNames{
	"Red", "Orange", "Yellow", "Yellow-green", "Green", "Blue-green", "Blue", "Blue-purple", "Purple", "Red-purple"};

/// Foreground RGB anchors, one per wheel color.
inline constexpr std::array<std::array<double, 3>, kNumColors> kColorRgb{{
	{1.0, 0.0, 0.0},
	{1.0, 0.5, 0.0},
	{1.0, 1.0, 0.0},
	{0.5, 1.0, 0.0},
	{0.0, 1.0, 0.0},
	{0.0, 0.75, 0.75},
	{0.0, 0.0, 1.0},
	{0.29, 0.0, 0.51},
	{0.5, 0.0, 0.5},
	{0.78, 0.0, 0.38},
}};

inline ColorId color_from_index(int c) {
	if (c < 0 || c >= kNumColors)
		throw ArgumentError("color index " + std::to_string(c) + " out of range");
	return static_cast<ColorId>(c);
}

inline int index_of(ColorId c) { return static_cast<int>(c); }

struct ItemLabel {
	int digit = 0;
	ColorId color = ColorId::red;

	bool operator==(const ItemLabel&) const = default;

	/// Category id in [0, 100): items match iff digit and color both match.
	int category() const { return index_of(color) * kNumDigits + digit; }
};

/// Circular distance on the ten-color wheel.
inline int color_distance(ColorId a, ColorId b) {
	const int d = std::abs(index_of(a) - index_of(b));
	return std::min(d, kNumColors - d);
}

/// |a - b|, not circular: 9 and 0 are 9 apart.
inline int digit_distance(int a, int b) { return std::abs(a - b); }

// ---------------------------------------------------------------------------
// Simulated workers

enum class WorkerKind { exact_match, distance, weighted };
enum class View { color, number };

struct SimWorkerSpec {
	WorkerKind kind = WorkerKind::distance;
	View view = View::color;
	double color_weight = 1.0;
	double number_weight = 0.0;

	static SimWorkerSpec exact_match(View v) { return {WorkerKind::exact_match, v, 0, 0}; }
	static SimWorkerSpec distance(View v) { return {WorkerKind::distance, v, 0, 0}; }
	static SimWorkerSpec weighted(double color_weight) {
		if (!(color_weight >= 0.0 && color_weight <= 1.0))
			throw ArgumentError("color weight must lie in [0, 1]");
		return {WorkerKind::weighted, View::color, color_weight, 1.0 - color_weight};
	}
};

/// Answer slot: 0 = (1,2), 1 = (1,3), 2 = (2,3); nullopt = invalid query.
using SimAnswer = std::optional<int>;

namespace detail {

inline constexpr std::array<std::array<int, 2>, 3> kSlotPairs{{{0, 1}, {0, 2}, {1, 2}}};

/// Index of the strictly unique minimum of three values (within `tol`), or nullopt.
inline SimAnswer unique_min(const std::array<double, 3>& d, double tol) {
	int best = 0;
	for (int c = 1; c < 3; ++c)
		if (d[static_cast<std::size_t>(c)] < d[static_cast<std::size_t>(best)])
			best = c;
	for (int c = 0; c < 3; ++c)
		if (c != best && std::abs(d[static_cast<std::size_t>(c)] - d[static_cast<std::size_t>(best)]) <= tol)
			return std::nullopt;
	return best;
}

inline double view_distance(View v, const ItemLabel& a, const ItemLabel& b) {
	return v == View::color ? color_distance(a.color, b.color) : digit_distance(a.digit, b.digit);
}

} // namespace detail

/// Per-pair distances a simulated worker computes; exact-match workers use 0
/// for a matching attribute and 1 otherwise.
inline std::array<double, 3> worker_distances(const SimWorkerSpec& spec, const std::array<ItemLabel, 3>& labels) {
	std::array<double, 3> d{};
	for (std::size_t c = 0; c < 3; ++c) {
		const auto& a = labels[static_cast<std::size_t>(detail::kSlotPairs[c][0])];
		const auto& b = labels[static_cast<std::size_t>(detail::kSlotPairs[c][1])];
		switch (spec.kind) {
		case WorkerKind::exact_match:
			d[c] = detail::view_distance(spec.view, a, b) == 0 ? 0.0 : 1.0;
			break;
		case WorkerKind::distance:
			d[c] = detail::view_distance(spec.view, a, b);
			break;
		case WorkerKind::weighted:
			d[c] = spec.color_weight * color_distance(a.color, b.color) +
				   spec.number_weight * digit_distance(a.digit, b.digit);
			break;
		}
	}
	return d;
}

inline SimAnswer simulate_answer(const SimWorkerSpec& spec, const std::array<ItemLabel, 3>& labels) {
	const auto d = worker_distances(spec, labels);
	if (spec.kind == WorkerKind::exact_match) {
		// Valid iff exactly one pair shares the attribute.
		const int matches = static_cast<int>(std::count(d.begin(), d.end(), 0.0));
		if (matches != 1)
			return std::nullopt;
		return static_cast<int>(std::find(d.begin(), d.end(), 0.0) - d.begin());
	}
	// Weighted sums of integers: treat values within 1e-9 as ties.
	return detail::unique_min(d, 1e-9);
}

struct NamedWorker {
	std::string id;
	SimWorkerSpec spec;
};

/// Simulated workers of settings 1-3.
inline std::vector<NamedWorker> setting_workers(int setting) {
	switch (setting) {
	case 1:
		return {{"worker1", SimWorkerSpec::exact_match(View::color)},
				{"worker2", SimWorkerSpec::exact_match(View::number)}};
	case 2:
		return {{"worker1", SimWorkerSpec::distance(View::color)}, {"worker2", SimWorkerSpec::distance(View::number)}};
	case 3:
		return {{"worker1", SimWorkerSpec::distance(View::color)},
				{"worker2", SimWorkerSpec::weighted(0.7)},
				{"worker3", SimWorkerSpec::weighted(0.3)},
				{"worker4", SimWorkerSpec::distance(View::number)}};
	default:
		throw ArgumentError("simulation setting must be 1, 2 or 3");
	}
}

/// Weight each worker of a setting puts on color (1 = pure color, 0 = pure number).
inline double color_mixing_weight(const SimWorkerSpec& spec) {
	switch (spec.kind) {
	case WorkerKind::weighted:
		return spec.color_weight;
	default:
		return spec.view == View::color ? 1.0 : 0.0;
	}
}

// ---------------------------------------------------------------------------
// Corpus

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
	if (s == "train")
		return Split::train;
	if (s == "test")
		return Split::test;
	throw ArgumentError("unknown split '" + s + "'");
}

struct ManifestRecord {
	ItemId id = 0;
	ItemLabel label;
	Split split = Split::train;

	bool operator==(const ManifestRecord&) const = default;
};

struct RenderParams {
	int height = 16;
	int width = 16;
	double noise_sigma = 0.02;
	int jitter = 1;

	bool operator==(const RenderParams&) const = default;
};

struct DatasetManifest {
	std::uint64_t seed = 0;
	RenderParams render;
	std::vector<ManifestRecord> records;

	bool operator==(const DatasetManifest&) const = default;

	std::vector<ManifestRecord> split(Split s) const {
		std::vector<ManifestRecord> out;
		for (const auto& r : records)
			if (r.split == s)
				out.push_back(r);
		return out;
	}

	const ManifestRecord& find(ItemId id) const {
		for (const auto& r : records)
			if (r.id == id)
				return r;
		throw ReferenceError("item id " + std::to_string(id) + " not in manifest");
	}
};

/// 5x7 digit glyphs, one string per row, '#' = foreground.
inline constexpr std::array<std::array<std::string_view, 7>, 10> kDigitGlyphs{{
	{".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
	{"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
	{".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
	{"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},
	{"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
	{"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
	{"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
	{"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
	{".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
	{".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
}};

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

/// Renders one item. Position jitter and pixel noise come from the stream
/// derived from (seed, id) only.
inline ItemTensor render_item(std::uint64_t seed, ItemId id, const ItemLabel& label, const RenderParams& params) {
	if (params.jitter < 0 || params.height < kGlyphHeight + params.jitter || params.width < kGlyphWidth + params.jitter)
		throw ConfigError("image too small for the digit glyph");
	if (label.digit < 0 || label.digit >= kNumDigits)
		throw ArgumentError("digit out of range");
	Engine engine(derive_seed(derive_seed(seed, stream::render), id));
	// Offsets span `jitter` pixels around the (possibly half-pixel) center.
	const auto span = static_cast<std::uint64_t>(params.jitter + 1);
	const int dy = static_cast<int>(uniform_index(engine, span));
	const int dx = static_cast<int>(uniform_index(engine, span));
	const int top = (params.height - kGlyphHeight - params.jitter + 1) / 2 + dy;
	const int left = (params.width - kGlyphWidth - params.jitter + 1) / 2 + dx;

	ItemTensor t{params.height, params.width, 3, std::vector<double>(static_cast<std::size_t>(params.height * params.width * 3), 0.0)};
	const auto& rgb = kColorRgb[static_cast<std::size_t>(index_of(label.color))];
	const auto& glyph = kDigitGlyphs[static_cast<std::size_t>(label.digit)];
	for (int r = 0; r < kGlyphHeight; ++r)
		for (int c = 0; c < kGlyphWidth; ++c)
			if (glyph[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == '#')
				for (int ch = 0; ch < 3; ++ch)
					t.at(top + r, left + c, ch) = rgb[static_cast<std::size_t>(ch)];
	for (double& p : t.pixels)
		p = std::clamp(p + params.noise_sigma * standard_normal(engine), 0.0, 1.0);
	return t;
}

/// Label of the n-th item of a split: category n mod 100, digit = category mod 10.
inline ItemLabel label_for_index(std::size_t n) {
	const int category = static_cast<int>(n % 100);
	return {category % kNumDigits, color_from_index(category / kNumDigits)};
}

/// Records for one split: 100 * items_per_category items, every (digit, color)
/// pair equally often. Train ids start at 0, test ids follow the train block.
inline std::vector<ManifestRecord> split_records(int items_per_category, Split split) {
	if (items_per_category < 1)
		throw ArgumentError("items_per_category must be >= 1");
	const std::size_t count = 100 * static_cast<std::size_t>(items_per_category);
	const ItemId first = split == Split::train ? 0 : static_cast<ItemId>(count);
	std::vector<ManifestRecord> out;
	for (std::size_t n = 0; n < count; ++n)
		out.push_back({first + static_cast<ItemId>(n), label_for_index(n), split});
	return out;
}

inline ItemStore render_items(const DatasetManifest& manifest, const std::vector<ManifestRecord>& records) {
	ItemStore store;
	for (const auto& r : records)
		store.add(r.id, render_item(manifest.seed, r.id, r.label, manifest.render));
	return store;
}

inline ItemStore render_items(const DatasetManifest& manifest) { return render_items(manifest, manifest.records); }

/// One split of the synthetic corpus.
inline std::pair<DatasetManifest, ItemStore> generate_dataset(std::uint64_t seed, int items_per_category,
															   Split split = Split::train,
															   const RenderParams& render = {}) {
	DatasetManifest m{seed, render, split_records(items_per_category, split)};
	ItemStore items = render_items(m);
	return {std::move(m), std::move(items)};
}

/// Train and test splits in one manifest.
inline DatasetManifest generate_corpus(std::uint64_t seed, int items_per_category, const RenderParams& render = {}) {
	DatasetManifest m{seed, render, split_records(items_per_category, Split::train)};
	for (auto& r : split_records(items_per_category, Split::test))
		m.records.push_back(r);
	return m;
}

// ---------------------------------------------------------------------------
// Triplet sampling

/// Draws uniformly random distinct item triples for each worker in turn and
/// keeps the valid answers. The chosen pair becomes (i, j) in presentation
/// order and the remaining item k.
inline std::vector<TripletAnnotation> sample_triplets(const std::vector<ManifestRecord>& records,
													  const std::vector<NamedWorker>& workers,
													  std::size_t n_per_worker, std::uint64_t seed) {
	if (records.size() < 3)
		throw ArgumentError("sample_triplets: need at least three items");
	constexpr std::uint64_t kProbeDraws = 1000000;
	std::vector<TripletAnnotation> out;
	Engine engine(derive_seed(seed, stream::triplets));
	for (const auto& worker : workers) {
		std::size_t kept = 0;
		std::uint64_t draws = 0;
		while (kept < n_per_worker) {
			std::array<std::size_t, 3> pick{};
			do {
				for (auto& p : pick)
					p = uniform_index(engine, records.size());
			} while (pick[0] == pick[1] || pick[0] == pick[2] || pick[1] == pick[2]);
			++draws;
			const std::array<ItemLabel, 3> labels{records[pick[0]].label, records[pick[1]].label,
												  records[pick[2]].label};
			if (const SimAnswer a = simulate_answer(worker.spec, labels)) {
				const auto& pair = detail::kSlotPairs[static_cast<std::size_t>(*a)];
				const int rest = 3 - pair[0] - pair[1];
				out.push_back({worker.id, records[pick[static_cast<std::size_t>(pair[0])]].id,
							   records[pick[static_cast<std::size_t>(pair[1])]].id,
							   records[pick[static_cast<std::size_t>(rest)]].id});
				++kept;
			}
			if (draws >= kProbeDraws && kept * 1000 < draws)
				throw ArgumentError("sample_triplets: worker '" + worker.id + "' answered only " +
									std::to_string(kept) + " of " + std::to_string(draws) +
									" draws (valid rate below 0.1%)");
		}
	}
	return out;
}

} // namespace mvt
