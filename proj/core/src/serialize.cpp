#include "seqdet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace seqdet {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'D', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "tensor container writes little-endian data as-is");

template <typename T>
std::vector<unsigned char> to_bytes(const Tensor<T>& t) {
  std::vector<unsigned char> out(sizeof(T) * static_cast<size_t>(t.numel()));
  std::memcpy(out.data(), t.data(), out.size());
  return out;
}

}  // namespace

void TensorArchive::put(const std::string& name, const Tensor<float>& t) {
  entries_[name] = Entry{"float32", t.shape(), to_bytes(t)};
}

void TensorArchive::put(const std::string& name, const Tensor<double>& t) {
  entries_[name] = Entry{"float64", t.shape(), to_bytes(t)};
}

bool TensorArchive::has(const std::string& name) const { return entries_.count(name) != 0; }

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const Shape& TensorArchive::shape_of(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("archive: no tensor named " + name);
  return it->second.shape;
}

std::string TensorArchive::dtype_of(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("archive: no tensor named " + name);
  return it->second.dtype;
}

Tensor<float> TensorArchive::get_f32(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("archive: no tensor named " + name);
  const Entry& e = it->second;
  if (e.dtype != "float32")
    throw std::runtime_error("archive: " + name + " has dtype " + e.dtype + ", wanted float32");
  std::vector<float> data(e.bytes.size() / sizeof(float));
  std::memcpy(data.data(), e.bytes.data(), e.bytes.size());
  return Tensor<float>::from_data(e.shape, std::move(data));
}

Tensor<double> TensorArchive::get_f64(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::runtime_error("archive: no tensor named " + name);
  const Entry& e = it->second;
  if (e.dtype != "float64")
    throw std::runtime_error("archive: " + name + " has dtype " + e.dtype + ", wanted float64");
  std::vector<double> data(e.bytes.size() / sizeof(double));
  std::memcpy(data.data(), e.bytes.data(), e.bytes.size());
  return Tensor<double>::from_data(e.shape, std::move(data));
}

void TensorArchive::save(const std::string& path) const {
  nlohmann::json header;
  header["byte_order"] = "little";
  header["meta"] = meta;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    nlohmann::json row;
    row["name"] = name;
    row["dtype"] = e.dtype;
    row["shape"] = e.shape;
    row["offset"] = offset;
    row["bytes"] = e.bytes.size();
    table.push_back(row);
    offset += e.bytes.size();
  }
  header["tensors"] = table;
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("archive: cannot write " + path);
  os.write(kMagic, 4);
  const std::uint32_t ver = kVersion;
  os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const std::uint64_t hlen = hs.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, e] : entries_)
    os.write(reinterpret_cast<const char*>(e.bytes.data()),
             static_cast<std::streamsize>(e.bytes.size()));
  if (!os) throw std::runtime_error("archive: write failed for " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("archive: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("archive: bad magic in " + path);
  std::uint32_t ver = 0;
  is.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != kVersion) throw std::runtime_error("archive: unsupported version in " + path);
  std::uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("archive: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  TensorArchive arc;
  arc.meta = header.value("meta", nlohmann::json::object());
  const std::uint64_t blob_start = 4 + sizeof(ver) + sizeof(hlen) + hlen;
  for (const auto& row : header.at("tensors")) {
    Entry e;
    e.dtype = row.at("dtype").get<std::string>();
    e.shape = row.at("shape").get<Shape>();
    const std::uint64_t offset = row.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = row.at("bytes").get<std::uint64_t>();
    e.bytes.resize(nbytes);
    is.seekg(static_cast<std::streamoff>(blob_start + offset));
    is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!is) throw std::runtime_error("archive: truncated data in " + path);
    arc.entries_[row.at("name").get<std::string>()] = std::move(e);
  }
  return arc;
}

}  // namespace seqdet
