// Minimal 8-bit RGB PNG encoder on top of zlib.
#pragma once

#include <mvt/error.hpp>
#include <mvt/model.hpp>

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace mvt {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
	out.push_back(static_cast<char>(v >> 24));
	out.push_back(static_cast<char>(v >> 16));
	out.push_back(static_cast<char>(v >> 8));
	out.push_back(static_cast<char>(v));
}

inline void put_chunk(std::string& out, const char* type, const std::string& data) {
	put_u32(out, static_cast<std::uint32_t>(data.size()));
	std::string body(type, 4);
	body += data;
	out += body;
	put_u32(out, static_cast<std::uint32_t>(
					 crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

} // namespace detail

/// Encodes a 3-channel item as PNG bytes (values quantized to 0..255).
inline std::string encode_png(const ItemTensor& item) {
	if (item.channels != 3)
		throw ShapeError("encode_png: expected 3 channels");
	std::string raw;
	raw.reserve(static_cast<std::size_t>(item.height) * (static_cast<std::size_t>(item.width) * 3 + 1));
	for (int r = 0; r < item.height; ++r) {
		raw.push_back('\0'); // filter: none
		for (int c = 0; c < item.width; ++c)
			for (int ch = 0; ch < 3; ++ch)
				raw.push_back(static_cast<char>(std::lround(std::clamp(item.at(r, c, ch), 0.0, 1.0) * 255.0)));
	}
	uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
	std::string packed(packed_size, '\0');
	if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
				  static_cast<uLong>(raw.size()), 9) != Z_OK)
		throw Error("encode_png: deflate failed");
	packed.resize(packed_size);

	std::string ihdr;
	detail::put_u32(ihdr, static_cast<std::uint32_t>(item.width));
	detail::put_u32(ihdr, static_cast<std::uint32_t>(item.height));
	ihdr += std::string{'\x08', '\x02', '\0', '\0', '\0'}; // 8-bit, truecolor, deflate, no filter, no interlace

	std::string png("\x89PNG\r\n\x1a\n", 8);
	detail::put_chunk(png, "IHDR", ihdr);
	detail::put_chunk(png, "IDAT", packed);
	detail::put_chunk(png, "IEND", "");
	return png;
}

} // namespace mvt
