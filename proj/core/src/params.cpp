#include "tpc/params.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "tpc/errors.hpp"

namespace tpc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

Tensor& ParamRegistry::add(std::string name, Tensor tensor, bool trainable) {
  if (!tensor.defined() || !tensor.is_leaf()) {
    throw ContractError("ParamRegistry::add: '" + name + "' must be a defined leaf");
  }
  if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(trainable);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor), trainable});
  return entries_.back().tensor;
}

std::size_t ParamRegistry::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamRegistry::contains(std::string_view name) const { return index_.find(name) != index_.end(); }
Tensor& ParamRegistry::get(std::string_view name) { return entries_[index_of(name)].tensor; }
const Tensor& ParamRegistry::get(std::string_view name) const {
  return entries_[index_of(name)].tensor;
}
bool ParamRegistry::trainable(std::string_view name) const {
  return entries_[index_of(name)].trainable;
}

std::size_t ParamRegistry::set_trainable(std::string_view prefix, bool trainable) {
  std::size_t matched = 0;
  for (auto& e : entries_) {
    if (std::string_view(e.name).starts_with(prefix)) {
      e.trainable = trainable;
      e.tensor.set_requires_grad(trainable);
      if (!trainable) e.tensor.zero_grad();
      ++matched;
    }
  }
  return matched;
}

void ParamRegistry::set_entry_trainable(std::string_view name, bool trainable) {
  auto& e = entries_[index_of(name)];
  e.trainable = trainable;
  e.tensor.set_requires_grad(trainable);
  if (!trainable) e.tensor.zero_grad();
}

std::vector<Tensor> ParamRegistry::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::size_t ParamRegistry::total_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParamRegistry::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.size();
  return n;
}

namespace {

struct Fnv1a {
  std::uint64_t state = 1469598103934665603ULL;
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 1099511628211ULL;
    }
  }
  template <typename T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
};

}  // namespace

std::uint64_t ParamRegistry::fingerprint(std::string_view prefix) const {
  Fnv1a h;
  for (const auto& e : entries_) {
    if (!std::string_view(e.name).starts_with(prefix)) continue;
    h.bytes(e.name.data(), e.name.size());
    h.value(static_cast<std::uint64_t>(e.tensor.rows()));
    h.value(static_cast<std::uint64_t>(e.tensor.cols()));
    auto v = e.tensor.values();
    h.bytes(v.data(), v.size() * sizeof(double));
  }
  return h.state;
}

void ParamRegistry::copy_values_from(const ParamRegistry& other) {
  if (other.entries_.size() != entries_.size()) {
    throw ContractError("copy_values_from: registries differ in size");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries_[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || src.tensor.size() != dst.tensor.size()) {
      throw ContractError("copy_values_from: mismatch at '" + dst.name + "'");
    }
    auto sv = src.tensor.values();
    std::copy(sv.begin(), sv.end(), dst.tensor.mutable_values().begin());
  }
}

ParamRegistry ParamRegistry::clone() const {
  ParamRegistry out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.detach(), e.trainable);
  return out;
}

std::string_view param_group(std::string_view name) {
  const auto dot = name.find('.');
  return dot == std::string_view::npos ? name : name.substr(0, dot);
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'P', 'C', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

Checkpoint snapshot(const ParamRegistry& registry, std::string metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& e : registry.entries()) {
    auto v = e.tensor.values();
    ck.items.push_back({e.name, e.trainable, e.tensor.rows(), e.tensor.cols(),
                        std::vector<double>(v.begin(), v.end())});
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put(os, kCheckpointVersion);
  put(os, static_cast<std::uint64_t>(ck.metadata.size()));
  os.write(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));
  put(os, static_cast<std::uint64_t>(ck.items.size()));
  for (const auto& item : ck.items) {
    put(os, static_cast<std::uint32_t>(item.name.size()));
    os.write(item.name.data(), static_cast<std::streamsize>(item.name.size()));
    put(os, static_cast<std::uint8_t>(item.trainable ? 1 : 0));
    put(os, static_cast<std::uint64_t>(item.rows));
    put(os, static_cast<std::uint64_t>(item.cols));
    os.write(reinterpret_cast<const char*>(item.values.data()),
             static_cast<std::streamsize>(item.values.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.metadata = get_string(is, get<std::uint64_t>(is, path), path);
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    Checkpoint::Item item;
    item.name = get_string(is, get<std::uint32_t>(is, path), path);
    item.trainable = get<std::uint8_t>(is, path) != 0;
    item.rows = get<std::uint64_t>(is, path);
    item.cols = get<std::uint64_t>(is, path);
    item.values.resize(item.rows * item.cols);
    is.read(reinterpret_cast<char*>(item.values.data()),
            static_cast<std::streamsize>(item.values.size() * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint " + path.string());
    ck.items.push_back(std::move(item));
  }
  return ck;
}

void restore(ParamRegistry& registry, const Checkpoint& ck) {
  if (ck.items.size() != registry.entries().size()) {
    throw DataError("checkpoint holds " + std::to_string(ck.items.size()) +
                    " parameters, model expects " + std::to_string(registry.entries().size()));
  }
  for (const auto& item : ck.items) {
    if (!registry.contains(item.name)) throw DataError("checkpoint has unknown parameter '" + item.name + "'");
    Tensor& t = registry.get(item.name);
    if (t.rows() != item.rows || t.cols() != item.cols) {
      throw DataError("shape mismatch for '" + item.name + "'");
    }
    std::copy(item.values.begin(), item.values.end(), t.mutable_values().begin());
    registry.set_entry_trainable(item.name, item.trainable);
  }
}

}  // namespace tpc
