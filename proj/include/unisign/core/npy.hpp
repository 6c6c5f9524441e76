// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include "unisign/core/error.hpp"
#include "unisign/tensor/tensor.hpp"

namespace unisign::npy {

// Minimal reader/writer for the NumPy .npy container (little-endian, C order).

struct Array {
  std::string descr;  // "<f4", "<f8" or "|u1"
  Shape shape;
  std::vector<char> bytes;
};

inline Array read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFile("cannot open " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw MalformedFile(path + ": not an .npy file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::uint32_t header_len = 0;
  if (version[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw MalformedFile(path + ": truncated header");

  Array a;
  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']+)')"))) throw MalformedFile(path + ": missing descr");
  a.descr = m[1];
  if (std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*True)"))) throw MalformedFile(path + ": Fortran order unsupported");
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) throw MalformedFile(path + ": missing shape");
  const std::string dims = m[1];
  const std::regex number(R"(\d+)");
  std::sregex_iterator it(dims.begin(), dims.end(), number), end;
  for (; it != end; ++it) a.shape.push_back(std::stoll(it->str()));

  std::size_t item = 0;
  if (a.descr == "<f4") item = 4;
  else if (a.descr == "<f8") item = 8;
  else if (a.descr == "|u1" || a.descr == "<u1") item = 1;
  else throw MalformedFile(path + ": unsupported dtype " + a.descr);
  const auto count = static_cast<std::size_t>(numel(a.shape));
  a.bytes.resize(count * item);
  in.read(a.bytes.data(), static_cast<std::streamsize>(a.bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != a.bytes.size()) throw MalformedFile(path + ": truncated payload");
  return a;
}

/// Values of a float32/float64 array converted to float.
inline std::vector<float> as_float(const Array& a) {
  const auto count = static_cast<std::size_t>(numel(a.shape));
  std::vector<float> out(count);
  if (a.descr == "<f4") {
    std::memcpy(out.data(), a.bytes.data(), count * 4);
  } else if (a.descr == "<f8") {
    for (std::size_t i = 0; i < count; ++i) {
      double d;
      std::memcpy(&d, a.bytes.data() + i * 8, 8);
      out[i] = static_cast<float>(d);
    }
  } else {
    throw MalformedFile("expected a floating point array, got " + a.descr);
  }
  return out;
}

inline void write(const std::string& path, const std::string& descr, const Shape& shape, const void* data, std::size_t bytes) {
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) dict += ",";
  dict += "), }";
  // Pad so the payload starts on a 64-byte boundary.
  std::size_t total = 10 + dict.size() + 1;
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(dict.size());
  const char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(lb, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw Error("failed writing " + path);
}

inline void write_f32(const std::string& path, const Shape& shape, const std::vector<float>& values) {
  write(path, "<f4", shape, values.data(), values.size() * sizeof(float));
}

inline void write_u8(const std::string& path, const Shape& shape, const std::vector<std::uint8_t>& values) {
  write(path, "|u1", shape, values.data(), values.size());
}

}  // namespace unisign::npy
