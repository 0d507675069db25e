#pragma once

// File formats for tiles and rasters.
//
// Tile: one JSON document
//   {"tile_id": str, "extent": [w_m, h_m],
//    "elements": [{"category": str, "closed": bool, "points": [[x, y], ...]}]}
//
// Raster (.bin): NPY-style container, little-endian
//   bytes 0..5   magic "\x93GNRST"
//   byte  6      major version (1)
//   byte  7      minor version (0)
//   bytes 8..11  uint32 header length H
//   H bytes      JSON header {"h","w","c","resolution","dtype":"f32"},
//                space-padded and '\n'-terminated so the payload starts on a
//                16-byte boundary
//   payload      h*w*c float32, row-major, channels innermost

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/map_model.hpp"

namespace gnmap {

nlohmann::json tile_to_json(const VectorTile& tile);
VectorTile tile_from_json(const nlohmann::json& j);

void save_tile(const VectorTile& tile, const std::filesystem::path& path);
VectorTile load_tile(const std::filesystem::path& path);

std::vector<char> encode_raster(const ClassRaster& raster);
std::vector<char> encode_raster(const GrayRaster& raster);

/// Decodes a raster with any channel count. Values are widened from f32.
/// Throws FormatError on bad magic, version, header, or payload size.
ClassRaster decode_raster(const std::vector<char>& bytes);

void save_raster(const ClassRaster& raster, const std::filesystem::path& path);
void save_raster(const GrayRaster& raster, const std::filesystem::path& path);
ClassRaster load_raster(const std::filesystem::path& path);

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gnmap
