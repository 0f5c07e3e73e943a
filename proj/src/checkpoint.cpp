#include "mmgl/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace mmgl::ckpt {

namespace {

constexpr char kMagic[5] = {'M', 'M', 'G', 'L', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated while reading u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated while reading u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f32(std::ostream& os, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, int> seen;
  for (const NamedTensor& nt : tensors)
    if (++seen[nt.name] > 1)
      throw std::invalid_argument("checkpoint: duplicate tensor name " + nt.name);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 5);
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    put_u32(os, static_cast<uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put_u32(os, static_cast<uint32_t>(nt.tensor.shape().size()));
    for (std::size_t d : nt.tensor.shape()) put_u64(os, d);
    for (std::size_t i = 0; i < nt.tensor.size(); ++i)
      put_f32(os, static_cast<float>(nt.tensor.data()[i]));
  }
  if (!os) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

std::vector<LoadedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw std::runtime_error("checkpoint: " + path + " does not start with the MMGL1 magic");
  uint32_t count = get_u32(is);
  std::vector<LoadedTensor> out;
  out.reserve(count);
  for (uint32_t t = 0; t < count; ++t) {
    LoadedTensor lt;
    uint32_t name_len = get_u32(is);
    lt.name.resize(name_len);
    is.read(lt.name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor name in " + path);
    uint32_t rank = get_u32(is);
    std::size_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      lt.shape.push_back(static_cast<std::size_t>(get_u64(is)));
      n *= lt.shape.back();
    }
    lt.data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) lt.data.push_back(static_cast<double>(get_f32(is)));
    out.push_back(std::move(lt));
  }
  return out;
}

void restore_into(const std::vector<LoadedTensor>& loaded, std::vector<NamedTensor>& tensors) {
  if (loaded.size() != tensors.size())
    throw std::runtime_error("checkpoint: holds " + std::to_string(loaded.size()) +
                             " tensors, model registers " + std::to_string(tensors.size()));
  std::map<std::string, const LoadedTensor*> by_name;
  for (const LoadedTensor& lt : loaded) {
    if (!by_name.emplace(lt.name, &lt).second)
      throw std::runtime_error("checkpoint: duplicate tensor name " + lt.name);
  }
  for (NamedTensor& nt : tensors) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: tensor " + nt.name + " missing");
    const LoadedTensor& lt = *it->second;
    if (lt.shape != nt.tensor.shape())
      throw std::runtime_error("checkpoint: tensor " + nt.name + " has shape " +
                               shape_str(lt.shape) + ", model expects " +
                               shape_str(nt.tensor.shape()));
    std::copy(lt.data.begin(), lt.data.end(), nt.tensor.data());
  }
}

}  // namespace mmgl::ckpt
