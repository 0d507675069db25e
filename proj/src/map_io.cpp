#include "gnmap/map_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gnmap/error.hpp"

namespace gnmap {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

constexpr char kRasterMagic[6] = {'\x93', 'G', 'N', 'R', 'S', 'T'};
constexpr std::uint8_t kRasterMajor = 1;
constexpr std::uint8_t kRasterMinor = 0;

std::vector<char> encode_values(int h, int w, int c, double resolution,
                                const std::vector<double>& values) {
  nlohmann::json header = {{"h", h}, {"w", w}, {"c", c}, {"resolution", resolution},
                           {"dtype", "f32"}};
  std::string text = header.dump();
  const std::size_t prefix = 12;
  std::size_t total = prefix + text.size() + 1;
  text.append((16 - total % 16) % 16, ' ');
  text.push_back('\n');

  std::vector<char> out(kRasterMagic, kRasterMagic + 6);
  out.push_back(static_cast<char>(kRasterMajor));
  out.push_back(static_cast<char>(kRasterMinor));
  const auto len = static_cast<std::uint32_t>(text.size());
  const char* lp = reinterpret_cast<const char*>(&len);
  out.insert(out.end(), lp, lp + 4);
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_at = out.size();
  out.resize(payload_at + values.size() * sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(out.data() + payload_at + i * sizeof(float), &f, sizeof(float));
  }
  return out;
}

}  // namespace

nlohmann::json tile_to_json(const VectorTile& tile) {
  nlohmann::json elements = nlohmann::json::array();
  for (const MapElement& e : tile.elements) {
    nlohmann::json pts = nlohmann::json::array();
    for (const Point2& p : e.points) pts.push_back({p.x, p.y});
    elements.push_back({{"category", std::string(category_name(e.category))},
                        {"closed", e.closed},
                        {"points", std::move(pts)}});
  }
  return {{"tile_id", tile.tile_id},
          {"extent", {tile.extent.width_m, tile.extent.height_m}},
          {"elements", std::move(elements)}};
}

VectorTile tile_from_json(const nlohmann::json& j) {
  try {
    VectorTile tile;
    tile.tile_id = j.at("tile_id").get<std::string>();
    const auto& ext = j.at("extent");
    tile.extent = {ext.at(0).get<double>(), ext.at(1).get<double>()};
    for (const auto& je : j.at("elements")) {
      MapElement e;
      e.category = category_from_name(je.at("category").get<std::string>());
      e.closed = je.at("closed").get<bool>();
      for (const auto& jp : je.at("points")) {
        e.points.push_back({jp.at(0).get<double>(), jp.at(1).get<double>()});
      }
      tile.elements.push_back(std::move(e));
    }
    tile.validate();
    return tile;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("malformed tile JSON: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw FormatError(std::string("invalid tile: ") + ex.what());
  }
}

void save_tile(const VectorTile& tile, const std::filesystem::path& path) {
  write_text(path, tile_to_json(tile).dump(1) + "\n");
}

VectorTile load_tile(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_file(path);
  auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw FormatError("cannot parse tile JSON: " + path.string());
  return tile_from_json(j);
}

std::vector<char> encode_raster(const ClassRaster& raster) {
  return encode_values(raster.h, raster.w, raster.c, raster.resolution, raster.values);
}

std::vector<char> encode_raster(const GrayRaster& raster) {
  return encode_values(raster.h, raster.w, 1, raster.resolution, raster.values);
}

ClassRaster decode_raster(const std::vector<char>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kRasterMagic, 6) != 0) {
    throw FormatError("raster: bad magic");
  }
  if (static_cast<std::uint8_t>(bytes[6]) != kRasterMajor) {
    throw FormatError("raster: unsupported version");
  }
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw FormatError("raster: truncated header");
  auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("raster: bad header");

  ClassRaster out;
  try {
    if (header.at("dtype").get<std::string>() != "f32") throw FormatError("raster: dtype must be f32");
    out = ClassRaster(header.at("h").get<int>(), header.at("w").get<int>(),
                      header.at("c").get<int>(), header.at("resolution").get<double>());
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("raster: bad header: ") + ex.what());
  }
  const std::size_t payload_at = 12 + len;
  if (bytes.size() != payload_at + out.values.size() * sizeof(float)) {
    throw FormatError("raster: payload size mismatch");
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + payload_at + i * sizeof(float), sizeof(float));
    out.values[i] = f;
  }
  return out;
}

void save_raster(const ClassRaster& raster, const std::filesystem::path& path) {
  write_file(path, encode_raster(raster));
}

void save_raster(const GrayRaster& raster, const std::filesystem::path& path) {
  write_file(path, encode_raster(raster));
}

ClassRaster load_raster(const std::filesystem::path& path) { return decode_raster(read_file(path)); }

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace gnmap
