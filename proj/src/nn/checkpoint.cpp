#include "famarl/nn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "famarl/errors.hpp"

namespace famarl::nn {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'M', 'A', 'R', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += width;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ConfigError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& b : spec.layers) {
    nlohmann::json l{{"kind", to_string(b.kind)},
                     {"in_width", b.in_width},
                     {"out_width", b.out_width}};
    if (b.kind == BlockKind::Conv1d || b.kind == BlockKind::ConvTranspose1d) {
      l["in_channels"] = b.in_channels;
      l["out_channels"] = b.out_channels;
      l["kernel"] = b.kernel;
      l["stride"] = b.stride;
    }
    layers.push_back(std::move(l));
  }
  return {{"seed", spec.seed}, {"layers", std::move(layers)}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  try {
    NetworkSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& l : j.at("layers")) {
      BlockSpec b;
      b.kind = block_kind_from_string(l.at("kind").get<std::string>());
      b.in_width = l.at("in_width").get<std::size_t>();
      b.out_width = l.at("out_width").get<std::size_t>();
      b.in_channels = l.value("in_channels", std::size_t{0});
      b.out_channels = l.value("out_channels", std::size_t{0});
      b.kernel = l.value("kernel", std::size_t{0});
      b.stride = l.value("stride", std::size_t{1});
      spec.layers.push_back(b);
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network spec: ") + e.what());
  }
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["networks"] = nlohmann::json::object();
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, net] : networks) {
    header["networks"][name] = to_json(net.spec());
    for (const auto& t : net.params().tensors)
      header["tensors"].push_back({{"name", name + "/" + t.name}, {"shape", t.shape}});
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, net] : networks)
    for (const auto& t : net.params().tensors)
      for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(8) != std::string(kMagic, 8)) throw ConfigError("not a checkpoint file");
  const auto version = r.uint(4);
  if (version != kVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = r.uint(8);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.metadata = header.value("metadata", nlohmann::json::object());
  // Tensors are stored in the same (sorted) network order used by serialize.
  std::size_t next = 0;
  const auto& dir = header.at("tensors");
  for (const auto& [name, spec_json] : header.at("networks").items()) {
    NetworkSpec spec = network_spec_from_json(spec_json);
    ParamSet ps = init_params(spec);
    for (auto& t : ps.tensors) {
      if (next >= dir.size()) throw ConfigError("checkpoint tensor directory too short");
      const auto& entry = dir[next++];
      if (entry.at("name").get<std::string>() != name + "/" + t.name ||
          entry.at("shape").get<std::vector<std::size_t>>() != t.shape)
        throw ConfigError("checkpoint tensor mismatch at " + name + "/" + t.name);
      for (auto& v : t.values) v = std::bit_cast<double>(r.uint(8));
    }
    ck.networks.emplace(name, Network(std::move(spec), std::move(ps)));
  }
  if (next != dir.size() || !r.done()) throw ConfigError("checkpoint has trailing data");
  return ck;
}

void Checkpoint::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {
std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}
}  // namespace

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  return deserialize(slurp(path));
}

std::string fnv1a_digest(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  return fnv1a_digest(slurp(path));
}

}  // namespace famarl::nn
