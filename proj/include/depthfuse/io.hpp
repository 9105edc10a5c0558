#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "depthfuse/core.hpp"

namespace depthfuse {

// ---------------------------------------------------------------------------
// PFM: grayscale portable float maps.
//
// Layout: "Pf", width, height, scale, then w*h little-endian 32-bit floats in
// left-to-right, bottom-to-top scanline order. A negative scale field marks
// little-endian payloads; positive marks big-endian. Invalid pixels are
// written as NaN and come back masked out.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFF000000u) >> 24) | ((v & 0x00FF0000u) >> 8) | ((v & 0x0000FF00u) << 8) |
         ((v & 0x000000FFu) << 24);
}

inline bool host_little_endian() { return std::endian::native == std::endian::little; }

struct PfmHeader {
  int width = 0;
  int height = 0;
  bool little_endian = true;
  int channels = 1;
  std::size_t payload_offset = 0;
};

inline PfmHeader parse_pfm_header(const std::string& buf, const std::string& path) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError(path + ": " + what + " at byte " + std::to_string(pos));
  };
  auto next_token = [&]() -> std::string {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw fail("truncated PFM header");
    return buf.substr(start, pos - start);
  };

  PfmHeader header;
  const std::string magic = next_token();
  if (magic == "PF") {
    header.channels = 3;
  } else if (magic != "Pf") {
    throw fail("not a PFM file (bad magic '" + magic + "')");
  }

  for (int* dim : {&header.width, &header.height}) {
    const std::string tok = next_token();
    try {
      std::size_t used = 0;
      *dim = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw fail("bad PFM dimension '" + tok + "'");
    }
    if (*dim < 1) throw fail("PFM dimensions must be positive");
  }

  const std::string scale_tok = next_token();
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_tok, &used);
    if (used != scale_tok.size()) throw std::invalid_argument(scale_tok);
  } catch (const std::exception&) {
    throw fail("bad PFM scale '" + scale_tok + "'");
  }
  if (scale == 0.0) throw fail("PFM scale must be nonzero");
  header.little_endian = scale < 0.0;

  if (pos >= buf.size()) throw fail("missing whitespace after PFM scale");
  if (!std::isspace(static_cast<unsigned char>(buf[pos]))) throw fail("bad PFM header terminator");
  header.payload_offset = pos + 1;
  return header;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

}  // namespace detail

/// Reads a grayscale PFM into a raw grid; NaN/Inf entries pass through.
inline Grid<double> read_pfm_grid(const std::string& path) {
  const std::string buf = detail::read_file_bytes(path);
  const detail::PfmHeader header = detail::parse_pfm_header(buf, path);
  if (header.channels != 1) {
    throw DataError(path + ": expected 1 channel (Pf), got a 3-channel PF file");
  }
  const std::size_t pixels =
      static_cast<std::size_t>(header.width) * static_cast<std::size_t>(header.height);
  const std::size_t need = pixels * 4;
  const std::size_t have = buf.size() - header.payload_offset;
  if (have < need) {
    throw DataError(path + ": truncated payload, expected " + std::to_string(need) +
                    " bytes but only " + std::to_string(have) + " remain at byte " +
                    std::to_string(header.payload_offset));
  }

  const bool swap = header.little_endian != detail::host_little_endian();
  Grid<double> grid(header.width, header.height);
  const char* payload = buf.data() + header.payload_offset;
  for (int row = 0; row < header.height; ++row) {
    const int y = header.height - 1 - row;  // file rows run bottom-to-top
    for (int x = 0; x < header.width; ++x) {
      std::uint32_t bits;
      std::memcpy(&bits, payload + (static_cast<std::size_t>(row) * header.width + x) * 4, 4);
      if (swap) bits = detail::byteswap32(bits);
      grid.at(x, y) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return grid;
}

/// Reads a grayscale PFM as a depth map; entries that are not legal values for
/// `unit` are masked invalid.
inline DepthMap read_pfm(const std::string& path, DepthUnit unit = DepthUnit::Meters) {
  Grid<double> grid = read_pfm_grid(path);
  Mask mask(grid.width, grid.height, 0);
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    mask.data[i] = depth_value_ok(unit, grid.data[i]) ? 1 : 0;
  }
  return DepthMap(std::move(grid), std::move(mask), unit);
}

/// Writes a grid as little-endian grayscale PFM. When a mask is given, masked
/// pixels are stored as NaN.
inline void write_pfm_grid(const Grid<double>& grid, const Mask* valid, const std::string& path) {
  if (valid && !grid.same_size(*valid)) throw ParamError("write_pfm: mask dimensions differ");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << "Pf\n" << grid.width << " " << grid.height << "\n-1.0\n";
  std::vector<char> row_bytes(static_cast<std::size_t>(grid.width) * 4);
  for (int row = 0; row < grid.height; ++row) {
    const int y = grid.height - 1 - row;
    for (int x = 0; x < grid.width; ++x) {
      float f;
      if (valid && !valid->at(x, y)) {
        f = std::numeric_limits<float>::quiet_NaN();
      } else {
        f = static_cast<float>(grid.at(x, y));
      }
      std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
      if (!detail::host_little_endian()) bits = detail::byteswap32(bits);
      std::memcpy(row_bytes.data() + static_cast<std::size_t>(x) * 4, &bits, 4);
    }
    out.write(row_bytes.data(), static_cast<std::streamsize>(row_bytes.size()));
  }
  if (!out) throw DataError(path + ": write failed");
}

inline void write_pfm(const DepthMap& map, const std::string& path) {
  write_pfm_grid(map.values, &map.valid, path);
}

// ---------------------------------------------------------------------------
// PNG: 16-bit grayscale depth (millimeter-scaled, 0 = missing) and 8-bit
// intensity frames.
// ---------------------------------------------------------------------------

namespace detail {

struct PngReader {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;

  explicit PngReader(const std::string& path) {
    fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError(path + ": cannot open for reading");
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      close();
      throw DataError(path + ": libpng initialization failed");
    }
  }
  ~PngReader() { close(); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  void close() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    png = nullptr;
    info = nullptr;
    if (fp) std::fclose(fp);
    fp = nullptr;
  }
};

struct PngWriter {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;

  explicit PngWriter(const std::string& path) {
    fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError(path + ": cannot open for writing");
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      close();
      throw DataError(path + ": libpng initialization failed");
    }
  }
  ~PngWriter() { close(); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  void close() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    png = nullptr;
    info = nullptr;
    if (fp) std::fclose(fp);
    fp = nullptr;
  }
};

}  // namespace detail

/// Reads 16-bit grayscale PNG depth: meters = raw * scale_mm_per_unit / 1000,
/// raw 0 marks a missing pixel.
inline DepthMap read_png16(const std::string& path, double scale_mm_per_unit) {
  if (!(scale_mm_per_unit > 0.0)) throw ParamError("read_png16: scale must be positive");
  detail::PngReader reader(path);

  if (setjmp(png_jmpbuf(reader.png))) {
    throw DataError(path + ": malformed PNG");
  }
  png_init_io(reader.png, reader.fp);
  png_read_info(reader.png, reader.info);

  const int bit_depth = png_get_bit_depth(reader.png, reader.info);
  const int color_type = png_get_color_type(reader.png, reader.info);
  if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY) {
    throw DataError(path + ": expected 16-bit grayscale PNG, got bit depth " +
                    std::to_string(bit_depth) + " color type " + std::to_string(color_type));
  }
  const int w = static_cast<int>(png_get_image_width(reader.png, reader.info));
  const int h = static_cast<int>(png_get_image_height(reader.png, reader.info));
  png_set_interlace_handling(reader.png);
  png_read_update_info(reader.png, reader.info);

  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 2);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] = bytes.data() + static_cast<std::size_t>(y) * w * 2;
  }
  png_read_image(reader.png, rows.data());
  png_read_end(reader.png, nullptr);

  Grid<double> values(w, h);
  Mask valid(w, h, 0);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < w; ++x) {
      const std::uint16_t raw = static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
      if (raw == 0) {
        values.at(x, y) = std::numeric_limits<double>::quiet_NaN();
      } else {
        values.at(x, y) = static_cast<double>(raw) * scale_mm_per_unit / 1000.0;
        valid.at(x, y) = 1;
      }
    }
  }
  return DepthMap(std::move(values), std::move(valid), DepthUnit::Meters);
}

/// Writes depth as 16-bit grayscale PNG; invalid pixels become raw 0.
inline void write_png16(const DepthMap& map, const std::string& path, double scale_mm_per_unit) {
  if (!(scale_mm_per_unit > 0.0)) throw ParamError("write_png16: scale must be positive");
  const int w = map.width();
  const int h = map.height();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 2);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = bytes.data() + static_cast<std::size_t>(y) * w * 2;
    rows[static_cast<std::size_t>(y)] = row;
    for (int x = 0; x < w; ++x) {
      std::uint16_t raw = 0;
      if (map.is_valid(x, y)) {
        const double units = map.at(x, y) * 1000.0 / scale_mm_per_unit;
        const long long q = std::llround(units);
        raw = static_cast<std::uint16_t>(std::clamp<long long>(q, 0, 65535));
      }
      row[2 * x] = static_cast<std::uint8_t>(raw >> 8);
      row[2 * x + 1] = static_cast<std::uint8_t>(raw & 0xFF);
    }
  }

  detail::PngWriter writer(path);
  if (setjmp(png_jmpbuf(writer.png))) {
    throw DataError(path + ": PNG write failed");
  }
  png_init_io(writer.png, writer.fp);
  png_set_IHDR(writer.png, writer.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(writer.png, writer.info);
  png_write_image(writer.png, rows.data());
  png_write_end(writer.png, nullptr);
}

/// Reads an 8-bit PNG as an intensity image in [0, 1]. Color inputs collapse
/// to luma; palettes and alpha are expanded/stripped.
inline Image read_png8(const std::string& path) {
  detail::PngReader reader(path);
  if (setjmp(png_jmpbuf(reader.png))) {
    throw DataError(path + ": malformed PNG");
  }
  png_init_io(reader.png, reader.fp);
  png_read_info(reader.png, reader.info);

  png_set_palette_to_rgb(reader.png);
  png_set_expand_gray_1_2_4_to_8(reader.png);
  png_set_strip_16(reader.png);
  png_set_strip_alpha(reader.png);
  png_set_interlace_handling(reader.png);
  png_read_update_info(reader.png, reader.info);

  const int w = static_cast<int>(png_get_image_width(reader.png, reader.info));
  const int h = static_cast<int>(png_get_image_height(reader.png, reader.info));
  const int channels = static_cast<int>(png_get_channels(reader.png, reader.info));
  if (channels != 1 && channels != 3) {
    throw DataError(path + ": unsupported channel count " + std::to_string(channels));
  }

  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] = bytes.data() + static_cast<std::size_t>(y) * w * channels;
  }
  png_read_image(reader.png, rows.data());
  png_read_end(reader.png, nullptr);

  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < w; ++x) {
      double v;
      if (channels == 1) {
        v = row[x] / 255.0;
      } else {
        v = (0.299 * row[3 * x] + 0.587 * row[3 * x + 1] + 0.114 * row[3 * x + 2]) / 255.0;
      }
      img.at(x, y) = v;
    }
  }
  return img;
}

/// Writes an intensity image as 8-bit grayscale PNG; values clamp to [0, 1].
inline void write_png8(const Image& image, const std::string& path) {
  const int w = image.width;
  const int h = image.height;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = bytes.data() + static_cast<std::size_t>(y) * w;
    rows[static_cast<std::size_t>(y)] = row;
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(image.at(x, y), 0.0, 1.0);
      row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }

  detail::PngWriter writer(path);
  if (setjmp(png_jmpbuf(writer.png))) {
    throw DataError(path + ": PNG write failed");
  }
  png_init_io(writer.png, writer.fp);
  png_set_IHDR(writer.png, writer.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(writer.png, writer.info);
  png_write_image(writer.png, rows.data());
  png_write_end(writer.png, nullptr);
}

}  // namespace depthfuse
