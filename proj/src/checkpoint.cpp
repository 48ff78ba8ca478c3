#include "gcrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gcrl {
namespace {

constexpr char kMagic[8] = {'G', 'C', 'R', 'L', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CheckpointError("checkpoint truncated while reading " + what);
  }
  return v;
}

std::string get_string(std::istream& is, std::uint64_t len, const std::string& what) {
  if (len > (1u << 26)) throw CheckpointError("checkpoint: implausible length for " + what);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len))) {
    throw CheckpointError("checkpoint truncated while reading " + what);
  }
  return s;
}

}  // namespace

Checkpoint capture(GcrlModel& model, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  for (auto& [p, g] : model.params()) {
    c.tensors[p->name] = p->tensor.value();
    c.groups[p->name] = g;
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.config_text.size());
  os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    auto g = ckpt.groups.find(name);
    if (g == ckpt.groups.end()) throw CheckpointError("checkpoint: no partition tag for " + name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(g->second));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_text = get_string(is, get<std::uint64_t>(is, "config length"), "config");
  const auto count = get<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<std::uint32_t>(is, "name length"), "tensor name");
    const auto group = get<std::uint8_t>(is, "partition tag");
    if (group > static_cast<std::uint8_t>(ParamGroup::kPriorZ)) {
      throw CheckpointError("checkpoint: bad partition tag for " + name);
    }
    const auto rows = get<std::uint64_t>(is, "rows"), cols = get<std::uint64_t>(is, "cols");
    if (rows * cols > (1u << 26)) throw CheckpointError("checkpoint: implausible shape for " + name);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (m.size() &&
        !is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw CheckpointError("checkpoint truncated in tensor " + name);
    }
    c.groups[name] = static_cast<ParamGroup>(group);
    c.tensors[name] = std::move(m);
  }
  return c;
}

void restore(GcrlModel& model, const Checkpoint& ckpt) {
  auto refs = model.params();
  if (refs.size() != ckpt.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model expects " + std::to_string(refs.size()));
  }
  for (auto& [p, g] : refs) {
    auto it = ckpt.groups.find(p->name);
    if (it == ckpt.groups.end()) throw CheckpointError("checkpoint lacks tensor " + p->name);
    if (it->second != g) throw CheckpointError("partition tag mismatch for " + p->name);
  }
  model.load_state(ckpt.tensors);
}

std::uint64_t z_branch_hash(GcrlModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const void* data, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (auto& [p, g] : model.params()) {
    if (!is_z_branch(g)) continue;
    feed(p->name.data(), p->name.size());
    const Matrix& m = p->tensor.value();
    feed(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return h;
}

}  // namespace gcrl
