#include "gnmap/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

#include "gnmap/error.hpp"
#include "gnmap/map_io.hpp"

namespace gnmap {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'N', 'M', 'A', 'P', 'C', 'K', 'P'};

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

template <class T>
void put(std::vector<char>& out, T v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(const std::vector<char>& in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

}  // namespace

Checkpoint make_checkpoint(const GnMapNet& net, Phase phase, long step, std::uint64_t seed,
                           nlohmann::json meta) {
  Checkpoint c;
  c.model = net.config();
  c.phase = phase;
  c.step = step;
  c.seed = seed;
  c.meta = std::move(meta);
  for (const nn::Param* p : net.params().all()) c.tensors.emplace(p->name, p->value);
  return c;
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  const nlohmann::json header = {{"version", ckpt.version},
                                 {"model", model_config_to_json(ckpt.model)},
                                 {"phase", std::string(phase_name(ckpt.phase))},
                                 {"step", ckpt.step},
                                 {"seed", ckpt.seed},
                                 {"meta", ckpt.meta},
                                 {"params", std::move(entries)}};
  const std::string text = header.dump();

  std::vector<char> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_at = out.size();
  out.resize(payload_at + offset * sizeof(double));
  std::size_t at = payload_at;
  for (const auto& [name, t] : ckpt.tensors) {
    std::memcpy(out.data() + at, t.data.data(), t.size() * sizeof(double));
    at += t.size() * sizeof(double);
  }
  put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto stored_crc = get<std::uint32_t>(bytes, bytes.size() - 4);
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw FormatError("checkpoint: checksum mismatch (corrupt or truncated file)");
  }
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(bytes, 12);
  if (20 + header_len + 4 > bytes.size()) throw FormatError("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(bytes.begin() + 20,
                                            bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len),
                                            nullptr, false);
  if (header.is_discarded()) throw FormatError("checkpoint: malformed header");

  Checkpoint c;
  try {
    c.version = header.at("version").get<std::uint32_t>();
    c.model = model_config_from_json(header.at("model"));
    c.phase = phase_from_name(header.at("phase").get<std::string>());
    c.step = header.at("step").get<long>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.meta = header.at("meta");
    const std::size_t payload_at = 20 + header_len;
    const std::size_t payload_elems = (bytes.size() - 4 - payload_at) / sizeof(double);
    for (const auto& e : header.at("params")) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      nn::Shape shape = e.at("shape").get<nn::Shape>();
      if (offset + count > payload_elems || nn::shape_size(shape) != count) {
        throw FormatError("checkpoint: parameter blob out of range");
      }
      std::vector<double> data(count);
      std::memcpy(data.data(), bytes.data() + payload_at + offset * sizeof(double),
                  count * sizeof(double));
      c.tensors.emplace(e.at("name").get<std::string>(), nn::Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("checkpoint: malformed header: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw FormatError(std::string("checkpoint: ") + ex.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void load_into(GnMapNet& net, const Checkpoint& ckpt) {
  if (!(ckpt.model == net.config())) throw ConfigError("checkpoint model config differs from the net");
  for (nn::Param* p : net.params().all()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) throw FormatError("checkpoint lacks parameter " + p->name);
    if (it->second.shape != p->value.shape) throw FormatError("checkpoint shape mismatch for " + p->name);
    p->value = it->second;
  }
}

std::vector<std::string> carry_shared(GnMapNet& net, const Checkpoint& ckpt) {
  const ModelConfig& a = net.config();
  const ModelConfig& b = ckpt.model;
  if (a.model_dim != b.model_dim || a.num_heads != b.num_heads ||
      a.encoder_layers != b.encoder_layers || a.decoder_layers != b.decoder_layers) {
    throw ConfigError("checkpoint encoder/decoder architecture differs from the model config");
  }
  if (!(a.geometry == b.geometry) || a.patch_h != b.patch_h || a.patch_w != b.patch_w) {
    throw ConfigError("checkpoint raster/patch geometry differs from the model config");
  }
  std::vector<std::string> carried;
  for (const std::string& name : net.shared_param_names()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw FormatError("checkpoint lacks shared parameter " + name);
    nn::Param& p = net.params().at(name);
    if (it->second.shape != p.value.shape) throw ConfigError("shape mismatch for " + name);
    p.value = it->second;
    carried.push_back(name);
  }
  return carried;
}

}  // namespace gnmap
