#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqdet/tensor.hpp"

namespace seqdet {

// Flat binary tensor container: magic + version, a JSON header describing
// byte order, free-form metadata and the tensor table, then raw
// little-endian data. Used for checkpoints and any on-disk tensors.
class TensorArchive {
 public:
  nlohmann::json meta;

  void put(const std::string& name, const Tensor<float>& t);
  void put(const std::string& name, const Tensor<double>& t);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  const Shape& shape_of(const std::string& name) const;
  std::string dtype_of(const std::string& name) const;

  Tensor<float> get_f32(const std::string& name) const;
  Tensor<double> get_f64(const std::string& name) const;

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  struct Entry {
    std::string dtype;  // "float32" or "float64"
    Shape shape;
    std::vector<unsigned char> bytes;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace seqdet
