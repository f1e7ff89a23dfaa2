// Text formats for manifests and triplet files.
//
// Manifest:
//   # mvt-manifest 1
//   # seed <u64>
//   # size <height> <width>
//   # noise <sigma>
//   # jitter <pixels>
//   <id>,<digit>,<color index>,<train|test>      one line per item
//
// Triplet file, one annotation per line, worker judged (i, j) most similar:
//   <worker>,<i>,<j>,<k>
// Blank lines and lines starting with '#' are ignored.
#pragma once

#include <mvt/crowdsim.hpp>
#include <mvt/error.hpp>
#include <mvt/types.hpp>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace mvt {

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
	std::vector<std::string_view> out;
	std::size_t start = 0;
	while (true) {
		const std::size_t at = line.find(sep, start);
		out.push_back(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
		if (at == std::string_view::npos)
			break;
		start = at + 1;
	}
	return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
	const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
	return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string_view trim_cr(std::string_view s) {
	if (!s.empty() && s.back() == '\r')
		s.remove_suffix(1);
	return s;
}

} // namespace detail

/// Worker ids are stored verbatim in comma-separated files.
inline bool valid_worker_id(std::string_view id) {
	if (id.empty() || id.size() > 128)
		return false;
	for (char c : id)
		if (c == ',' || c == '#' || static_cast<unsigned char>(c) <= ' ' || c == 0x7f)
			return false;
	return true;
}

inline std::string format_triplet(const TripletAnnotation& t) {
	return t.worker + "," + std::to_string(t.i) + "," + std::to_string(t.j) + "," + std::to_string(t.k);
}

inline TripletAnnotation parse_triplet_line(std::string_view line, std::size_t line_no = 0) {
	const auto fields = detail::split_fields(detail::trim_cr(line), ',');
	auto fail = [&](const std::string& msg) -> TripletAnnotation {
		throw LoadError("triplet line " + std::to_string(line_no) + ": " + msg);
	};
	if (fields.size() != 4)
		return fail("expected 4 comma-separated fields");
	TripletAnnotation t;
	t.worker = std::string(fields[0]);
	if (!valid_worker_id(t.worker))
		return fail("invalid worker id");
	if (!detail::parse_number(fields[1], t.i) || !detail::parse_number(fields[2], t.j) ||
		!detail::parse_number(fields[3], t.k))
		return fail("item ids must be non-negative integers");
	if (!t.distinct())
		return fail("item ids must be pairwise distinct");
	return t;
}

inline std::vector<TripletAnnotation> read_triplets(std::istream& in) {
	std::vector<TripletAnnotation> out;
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		const std::string_view view = detail::trim_cr(line);
		if (view.empty() || view.front() == '#')
			continue;
		out.push_back(parse_triplet_line(view, line_no));
	}
	return out;
}

inline std::vector<TripletAnnotation> read_triplets(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw LoadError("cannot open triplet file '" + path + "'");
	return read_triplets(in);
}

inline void write_triplets(std::ostream& out, const std::vector<TripletAnnotation>& triplets) {
	for (const auto& t : triplets) {
		if (!valid_worker_id(t.worker))
			throw ArgumentError("invalid worker id '" + t.worker + "'");
		out << format_triplet(t) << '\n';
	}
}

inline void write_triplets(const std::string& path, const std::vector<TripletAnnotation>& triplets) {
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw LoadError("cannot open '" + path + "' for writing");
	write_triplets(out, triplets);
	if (!out.flush())
		throw LoadError("write to '" + path + "' failed");
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
	out << "# mvt-manifest 1\n";
	out << "# seed " << m.seed << '\n';
	out << "# size " << m.render.height << ' ' << m.render.width << '\n';
	out << "# noise " << std::setprecision(17) << m.render.noise_sigma << '\n';
	out << "# jitter " << m.render.jitter << '\n';
	for (const auto& r : m.records)
		out << r.id << ',' << r.label.digit << ',' << index_of(r.label.color) << ',' << to_string(r.split) << '\n';
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw LoadError("cannot open '" + path + "' for writing");
	write_manifest(out, m);
	if (!out.flush())
		throw LoadError("write to '" + path + "' failed");
}

inline DatasetManifest read_manifest(std::istream& in) {
	DatasetManifest m;
	std::string line;
	std::size_t line_no = 0;
	bool saw_magic = false;
	auto fail = [&](const std::string& msg) -> DatasetManifest {
		throw LoadError("manifest line " + std::to_string(line_no) + ": " + msg);
	};
	while (std::getline(in, line)) {
		++line_no;
		const std::string_view view = detail::trim_cr(line);
		if (view.empty())
			continue;
		if (view.front() == '#') {
			std::istringstream ls{std::string(view.substr(1))};
			std::string key;
			ls >> key;
			if (key == "mvt-manifest") {
				int version = 0;
				ls >> version;
				if (version != 1)
					return fail("unsupported manifest version");
				saw_magic = true;
			} else if (key == "seed") {
				if (!(ls >> m.seed))
					return fail("bad seed");
			} else if (key == "size") {
				if (!(ls >> m.render.height >> m.render.width))
					return fail("bad size");
			} else if (key == "noise") {
				if (!(ls >> m.render.noise_sigma))
					return fail("bad noise");
			} else if (key == "jitter") {
				if (!(ls >> m.render.jitter))
					return fail("bad jitter");
			}
			continue;
		}
		const auto f = detail::split_fields(view, ',');
		if (f.size() != 4)
			return fail("expected id,digit,color,split");
		ManifestRecord r;
		int digit = -1, color = -1;
		if (!detail::parse_number(f[0], r.id) || !detail::parse_number(f[1], digit) ||
			!detail::parse_number(f[2], color) || digit < 0 || digit >= kNumDigits || color < 0 ||
			color >= kNumColors)
			return fail("malformed record");
		r.label = {digit, color_from_index(color)};
		try {
			r.split = parse_split(std::string(f[3]));
		} catch (const ArgumentError& e) {
			return fail(e.what());
		}
		m.records.push_back(r);
	}
	if (!saw_magic)
		throw LoadError("not a manifest file (missing '# mvt-manifest 1')");
	std::vector<ItemId> ids;
	for (const auto& r : m.records)
		ids.push_back(r.id);
	std::sort(ids.begin(), ids.end());
	if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
		throw LoadError("manifest has duplicate item ids");
	return m;
}

inline DatasetManifest read_manifest(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw LoadError("cannot open manifest '" + path + "'");
	return read_manifest(in);
}

} // namespace mvt
