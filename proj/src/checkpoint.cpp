#include "kt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

namespace kt::nn {

namespace {

constexpr char kMagic[8] = {'K', 'T', 'C', 'K', 'P', 'T', '\0', '\1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  auto bits = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("checkpoint is truncated");
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

std::string get_string(std::istream& in, std::uint64_t length) {
  if (length > (1ULL << 32)) throw std::runtime_error("checkpoint string length is implausible");
  std::string s(length, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(length))) throw std::runtime_error("checkpoint is truncated");
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out.write(kMagic, sizeof(kMagic));
  const std::string header = checkpoint.header.dump();
  put_le<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_le<std::uint64_t>(out, checkpoint.blocks.size());
  for (const auto& [name, tensor] : checkpoint.blocks) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_le<std::uint64_t>(out, d);
    for (double v : tensor.values()) put_le<double>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, checkpoint);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(get_string(in, get_le<std::uint64_t>(in)));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint header is malformed: ") + e.what());
  }
  const auto count = get_le<std::uint64_t>(in);
  for (std::uint64_t b = 0; b < count; ++b) {
    std::string name = get_string(in, get_le<std::uint32_t>(in));
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("checkpoint block " + name + " has implausible rank");
    Tensor::Shape shape(rank);
    std::size_t size = 1;
    for (auto& d : shape) {
      d = get_le<std::uint64_t>(in);
      size *= d;
    }
    if (size > (1ULL << 32)) throw std::runtime_error("checkpoint block " + name + " is implausibly large");
    std::vector<double> values(size);
    for (double& v : values) v = get_le<double>(in);
    ck.blocks.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

void load_parameters(ParameterStore& store, const Checkpoint& checkpoint) {
  std::set<std::string> seen;
  for (const auto& [name, tensor] : checkpoint.blocks) {
    Parameter* p = store.find(name);
    if (!p) throw std::runtime_error("checkpoint block " + name + " matches no parameter");
    if (!p->value.same_shape(tensor))
      throw std::runtime_error("checkpoint block " + name + " has shape " + num::shape_string(tensor.shape()) +
                               ", expected " + num::shape_string(p->value.shape()));
    if (!tensor.all_finite()) throw std::runtime_error("checkpoint block " + name + " holds non-finite values");
    p->value = tensor;
    seen.insert(name);
  }
  for (const Parameter* p : store.all())
    if (!seen.count(p->name)) throw std::runtime_error("checkpoint lacks parameter " + p->name);
}

std::vector<std::pair<std::string, Tensor>> parameter_blocks(const ParameterStore& store) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Parameter* p : store.all()) out.emplace_back(p->name, p->value);
  return out;
}

}  // namespace kt::nn
