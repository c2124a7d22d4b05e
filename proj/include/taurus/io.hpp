#pragma once

#include "mapping.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <variant>

namespace taurus {

using Json = nlohmann::json;

namespace detail {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

inline auto read_file(std::filesystem::path const &p) -> std::string
{
  std::ifstream in{p, std::ios::binary};
  if (!in) { throw Error("cannot open '" + p.string() + "'"); }
  std::ostringstream os;
  os << in.rdbuf();
  return std::move(os).str();
}

inline void write_file(std::filesystem::path const &p, std::string_view data)
{
  if (p.has_parent_path()) { std::filesystem::create_directories(p.parent_path()); }
  std::ofstream out{p, std::ios::binary};
  if (!out) { throw Error("cannot write '" + p.string() + "'"); }
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) { throw Error("write failed for '" + p.string() + "'"); }
}

template <typename T>
void put(std::string &buf, T v)
{
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
auto get(std::string_view buf, size_t off) -> T
{
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

inline auto parse_json(std::string const &text, std::string const &what) -> Json
{
  try {
    return Json::parse(text);
  } catch (Json::parse_error const &e) {
    throw ParseError(what + ": " + e.what(), e.byte);
  }
}

} // namespace detail

/// Path of the JSON sidecar belonging to a data file.
inline auto sidecar_path(std::filesystem::path const &p) -> std::filesystem::path { return p.string() + ".json"; }

/// 64-bit FNV-1a, printed as 16 hex digits.
inline auto fnv1a_hex(std::string_view s) -> std::string
{
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Signal files: "MPIS", u32 version, f64 fs, u64 count, then count f64 samples.

inline constexpr char          kSignalMagic[4] = {'M', 'P', 'I', 'S'};
inline constexpr std::uint32_t kSignalVersion = 1;
inline constexpr size_t        kSignalHeader = 24;

struct SignalFile
{
  SampledSignal signal;
  Json          meta = Json::object();
};

inline auto encode_signal(SampledSignal const &s) -> std::string
{
  std::string buf;
  buf.reserve(kSignalHeader + s.samples.size() * 8);
  buf.append(kSignalMagic, 4);
  detail::put<std::uint32_t>(buf, kSignalVersion);
  detail::put<double>(buf, s.rate);
  detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(s.samples.size()));
  for (double v : s.samples) { detail::put<double>(buf, v); }
  return buf;
}

inline auto decode_signal(std::string_view buf) -> SampledSignal
{
  if (buf.size() < kSignalHeader) { throw ParseError("signal file: truncated header", buf.size()); }
  if (std::memcmp(buf.data(), kSignalMagic, 4) != 0) { throw ParseError("signal file: bad magic", 0); }
  if (detail::get<std::uint32_t>(buf, 4) != kSignalVersion) { throw ParseError("signal file: unsupported version", 4); }
  double const rate = detail::get<double>(buf, 8);
  if (!(rate > 0.0) || !std::isfinite(rate)) { throw ParseError("signal file: sampling rate must be positive", 8); }
  auto const n = detail::get<std::uint64_t>(buf, 16);
  if (n > (buf.size() - kSignalHeader) / 8) { throw ParseError("signal file: fewer samples than the header declares", buf.size()); }
  if (buf.size() != kSignalHeader + n * 8) { throw ParseError("signal file: trailing bytes after the samples", kSignalHeader + n * 8); }
  SampledSignal s{std::vector<double>(n), rate, 0.0};
  if (n > 0) { std::memcpy(s.samples.data(), buf.data() + kSignalHeader, n * 8); }
  return s;
}

/// Writes the binary signal and its sidecar; `t0` is stored in the sidecar next to `meta`.
inline void write_signal(std::filesystem::path const &p, SampledSignal const &s, Json meta = Json::object())
{
  check_signal(s, "write_signal");
  meta["t0"] = s.t0;
  meta["sampling_rate"] = s.rate;
  meta["samples"] = s.samples.size();
  detail::write_file(p, encode_signal(s));
  detail::write_file(sidecar_path(p), meta.dump(2) + "\n");
}

inline auto read_signal(std::filesystem::path const &p) -> SignalFile
{
  SignalFile f;
  f.signal = decode_signal(detail::read_file(p));
  auto const side = sidecar_path(p);
  if (std::filesystem::exists(side)) {
    f.meta = detail::parse_json(detail::read_file(side), "signal sidecar");
    if (!f.meta.is_object()) { throw ParseError("signal sidecar: expected a JSON object", 0); }
    if (f.meta.contains("t0")) {
      if (!f.meta["t0"].is_number()) { throw ValidationError("signal sidecar: t0 must be a number"); }
      f.signal.t0 = f.meta["t0"].get<double>();
    }
    if (f.meta.contains("sampling_rate") && f.meta["sampling_rate"].get<double>() != f.signal.rate) {
      throw ValidationError("signal sidecar: sampling rate disagrees with the file header");
    }
  }
  return f;
}

// ---------------------------------------------------------------------------------------------
// Rasters: nz rows of nx float32 values (row-major in z), sidecar with the geometry.

struct Raster
{
  GridSpec           grid;
  std::vector<float> values;
  Json               meta = Json::object();
};

inline void write_raster(std::filesystem::path const &p, GridSpec const &g, std::span<double const> values, Json meta = Json::object())
{
  if (static_cast<Index>(values.size()) != g.size()) { throw ValidationError("write_raster: value count does not match the grid"); }
  std::string buf;
  buf.reserve(values.size() * 4);
  for (double v : values) { detail::put<float>(buf, static_cast<float>(v)); }
  meta["format"] = "float32-le";
  meta["shape"] = {g.nz, g.nx};
  meta["origin"] = {g.x0, g.z0};
  meta["pixel_size"] = {g.dx, g.dz};
  meta["axes"] = {"z", "x"};
  meta["length_unit"] = "m";
  detail::write_file(p, buf);
  detail::write_file(sidecar_path(p), meta.dump(2) + "\n");
}

inline auto read_raster(std::filesystem::path const &p) -> Raster
{
  Raster r;
  r.meta = detail::parse_json(detail::read_file(sidecar_path(p)), "raster sidecar");
  try {
    auto const shape = r.meta.at("shape");
    r.grid = {shape.at(1).get<Index>(), shape.at(0).get<Index>(), r.meta.at("origin").at(0).get<double>(),
              r.meta.at("origin").at(1).get<double>(), r.meta.at("pixel_size").at(0).get<double>(),
              r.meta.at("pixel_size").at(1).get<double>()};
  } catch (Json::exception const &e) {
    throw ValidationError(std::string("raster sidecar: ") + e.what());
  }
  auto const buf = detail::read_file(p);
  if (static_cast<Index>(buf.size()) != 4 * r.grid.size()) { throw ParseError("raster: size does not match the sidecar shape", buf.size()); }
  r.values.resize(static_cast<size_t>(r.grid.size()));
  std::memcpy(r.values.data(), buf.data(), buf.size());
  return r;
}

// ---------------------------------------------------------------------------------------------
// PNG. Row 0 of the file is the largest z so images appear upright.

struct Image8
{
  Index                     width = 0, height = 0;
  std::vector<std::uint8_t> rgb; // row-major, 3 bytes per pixel
};

inline auto to_image(Overlay const &o) -> Image8
{
  Image8 im{o.grid.nx, o.grid.nz, std::vector<std::uint8_t>(static_cast<size_t>(3 * o.grid.size()))};
  auto   q = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  for (Index r = 0; r < im.height; r++) {
    for (Index c = 0; c < im.width; c++) {
      auto const &px = o.pixels[o.grid.index(c, im.height - 1 - r)];
      auto       *d = im.rgb.data() + 3 * (r * im.width + c);
      d[0] = q(px.r);
      d[1] = q(px.g);
      d[2] = q(px.b);
    }
  }
  return im;
}

inline void write_png(std::filesystem::path const &p, Image8 const &im)
{
  if (im.width < 1 || im.height < 1 || im.rgb.size() != static_cast<size_t>(3 * im.width * im.height)) {
    throw ValidationError("write_png: bad image shape");
  }
  if (p.has_parent_path()) { std::filesystem::create_directories(p.parent_path()); }
  std::unique_ptr<FILE, int (*)(FILE *)> fp{std::fopen(p.c_str(), "wb"), &std::fclose};
  if (!fp) { throw Error("cannot write '" + p.string() + "'"); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop   info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng: failed writing '" + p.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(im.width), static_cast<png_uint_32>(im.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index r = 0; r < im.height; r++) { png_write_row(png, im.rgb.data() + 3 * r * im.width); }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline auto read_png(std::filesystem::path const &p) -> Image8
{
  std::unique_ptr<FILE, int (*)(FILE *)> fp{std::fopen(p.c_str(), "rb"), &std::fclose};
  if (!fp) { throw Error("cannot open '" + p.string() + "'"); }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop   info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng: failed reading '" + p.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Image8 im;
  im.width = png_get_image_width(png, info);
  im.height = png_get_image_height(png, info);
  im.rgb.resize(static_cast<size_t>(3 * im.width * im.height));
  for (Index r = 0; r < im.height; r++) { png_read_row(png, im.rgb.data() + 3 * r * im.width, nullptr); }
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

// ---------------------------------------------------------------------------------------------
// CSV: a comment line carrying the config hash, then "name [unit]" headers.

struct CsvColumn
{
  std::string name;
  std::string unit;
};

class CsvWriter
{
public:
  CsvWriter(std::filesystem::path const &p, std::vector<CsvColumn> columns, std::string_view config_hash)
    : path_{p}
    , columns_{std::move(columns)}
  {
    os_ << "# config_hash=" << config_hash << "\n";
    for (size_t i = 0; i < columns_.size(); i++) {
      os_ << (i ? "," : "") << columns_[i].name;
      if (!columns_[i].unit.empty()) { os_ << " [" << columns_[i].unit << "]"; }
    }
    os_ << "\n";
  }

  using Cell = std::variant<double, Index, std::string>;

  void row(std::vector<Cell> const &cells)
  {
    if (cells.size() != columns_.size()) { throw ValidationError("CSV row has the wrong number of cells"); }
    for (size_t i = 0; i < cells.size(); i++) {
      if (i) { os_ << ','; }
      std::visit(
        [&](auto const &v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>) {
            if (std::isfinite(v)) {
              char b[32];
              std::snprintf(b, sizeof b, "%.10g", v);
              os_ << b;
            } else {
              os_ << (std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf"));
            }
          } else {
            os_ << v;
          }
        },
        cells[i]);
    }
    os_ << '\n';
  }

  void close() { detail::write_file(path_, os_.str()); }

private:
  std::filesystem::path  path_;
  std::vector<CsvColumn> columns_;
  std::ostringstream     os_;
};

struct CsvTable
{
  std::string                           config_hash;
  std::vector<std::string>              header;
  std::vector<std::vector<std::string>> rows;

  auto column(std::string_view name) const -> Index
  {
    for (size_t i = 0; i < header.size(); i++) {
      auto const &h = header[i];
      if (h == name || (h.starts_with(name) && h.size() > name.size() && h[name.size()] == ' ')) { return static_cast<Index>(i); }
    }
    throw ValidationError("CSV has no column '" + std::string(name) + "'");
  }
};

inline auto read_csv(std::filesystem::path const &p) -> CsvTable
{
  std::istringstream in{detail::read_file(p)};
  CsvTable           t;
  std::string        line;
  auto               split = [](std::string const &l) {
    std::vector<std::string> out;
    std::string              cell;
    std::istringstream       ls{l};
    while (std::getline(ls, cell, ',')) { out.push_back(cell); }
    return out;
  };
  if (!std::getline(in, line) || !line.starts_with("# config_hash=")) { throw ParseError("CSV: missing config hash line", 0); }
  t.config_hash = line.substr(14);
  if (!std::getline(in, line)) { throw ParseError("CSV: missing header row", 1); }
  t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) { t.rows.push_back(split(line)); }
  }
  return t;
}

} // namespace taurus
