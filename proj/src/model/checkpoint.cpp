#include "sned/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sned {

static_assert(std::endian::native == std::endian::little, "SNW1 I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'S', 'N', 'W', '1'};
}

void write_snw(const std::filesystem::path& path, const SnwFile& file) {
  nlohmann::json layers = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : file.arrays) {
    layers.push_back({{"name", a.name}, {"shape", a.value.shape()}, {"offset", offset}, {"count", a.value.numel()}});
    offset += static_cast<std::uint64_t>(a.value.numel()) * sizeof(float);
  }
  nlohmann::json header{{"format", "SNW1"}, {"config", file.config}, {"meta", file.meta}, {"layers", layers}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : file.arrays) {
    out.write(reinterpret_cast<const char*>(a.value.data()), static_cast<std::streamsize>(a.value.numel() * sizeof(float)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

SnwFile read_snw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(path.string() + ": bad magic");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 4, sizeof(len));
  if (len > bytes.size() - 12) throw CheckpointError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  const std::size_t payload = 12 + len;
  SnwFile f;
  f.config = header.value("config", nlohmann::json::object());
  f.meta = header.value("meta", nlohmann::json::object());
  std::uint64_t expected = 0;
  for (const auto& l : header.at("layers")) {
    const Shape shape = l.at("shape").get<Shape>();
    const auto off = l.at("offset").get<std::uint64_t>();
    const auto count = l.at("count").get<std::int64_t>();
    if (count != shape_numel(shape) || off != expected) {
      throw CheckpointError(path.string() + ": manifest entry " + l.at("name").get<std::string>() + " is inconsistent");
    }
    const std::uint64_t nbytes = static_cast<std::uint64_t>(count) * sizeof(float);
    if (payload + off + nbytes > bytes.size()) throw CheckpointError(path.string() + ": truncated payload");
    Tensor<float> t(shape);
    std::memcpy(t.data(), bytes.data() + payload + off, nbytes);
    f.arrays.push_back(NamedArray{l.at("name").get<std::string>(), std::move(t)});
    expected += nbytes;
  }
  if (payload + expected != bytes.size()) throw CheckpointError(path.string() + ": trailing bytes after payload");
  return f;
}

Supernet network_from_arrays(const ModelConfig& config, std::vector<NamedArray> arrays) {
  const Layout full = build_layout(config);
  Supernet net{config, {}, {}};
  for (auto& a : arrays) {
    const auto id = full.find(a.name);
    if (!id) throw CheckpointError("layer " + a.name + " does not exist in this model layout");
    LayerDesc d = full.layers[static_cast<std::size_t>(*id)];
    if (a.value.rank() != d.shape.size()) throw CheckpointError("layer " + a.name + " has wrong rank");
    for (std::size_t ax = 0; ax < d.shape.size(); ++ax) {
      if (a.value.shape()[ax] > d.shape[ax] || (!d.axes[ax].elastic() && a.value.shape()[ax] != d.shape[ax])) {
        throw CheckpointError("layer " + a.name + " shape " + shape_str(a.value.shape()) + " incompatible with " + shape_str(d.shape));
      }
    }
    d.shape = a.value.shape();
    net.layout.add(std::move(d));
    net.weights.push_back(std::move(a.value));
  }
  net.layout.blocks = full.blocks;
  return net;
}

void save_network(const std::filesystem::path& path, const Supernet& net, const std::optional<SubnetSpec>& native,
                  nlohmann::json meta) {
  SnwFile f;
  f.config = net.config;
  meta["kind"] = "weights";
  if (native) meta["native_spec"] = *native;
  f.meta = std::move(meta);
  for (std::size_t i = 0; i < net.weights.size(); ++i) f.arrays.push_back(NamedArray{net.layout.layers[i].name, net.weights[i]});
  write_snw(path, f);
}

Supernet load_network(const std::filesystem::path& path, std::optional<SubnetSpec>* native) {
  SnwFile f = read_snw(path);
  ModelConfig cfg = f.config.get<ModelConfig>();
  cfg.validate();
  if (native) {
    *native = std::nullopt;
    if (f.meta.contains("native_spec")) *native = f.meta["native_spec"].get<SubnetSpec>();
  }
  return network_from_arrays(cfg, std::move(f.arrays));
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace sned
