#include "latent_forge/npy.hpp"

#include <cstring>
#include <fstream>
#include <regex>
#include <string>

#include "latent_forge/binary_io.hpp"

namespace latent_forge {

Matrix read_npy_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  const std::string where = path.string() + ": ";

  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, "\x93NUMPY", 6) != 0) {
    throw FormatError(where + "not a .npy file");
  }
  std::uint8_t major = 0, minor = 0;
  binio::read_le(in, major);
  binio::read_le(in, minor);
  std::uint32_t header_len = 0;
  if (major == 1) {
    std::uint16_t h = 0;
    if (!binio::read_le(in, h)) throw FormatError(where + "truncated header");
    header_len = h;
  } else if (major == 2 || major == 3) {
    if (!binio::read_le(in, header_len)) throw FormatError(where + "truncated header");
  } else {
    throw FormatError(where + "unsupported .npy version " + std::to_string(major));
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len)) throw FormatError(where + "truncated header");

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')"))) {
    throw FormatError(where + "header lacks descr");
  }
  const std::string descr = m[1];
  if (std::regex_search(header, std::regex(R"('fortran_order'\s*:\s*True)"))) {
    throw FormatError(where + "Fortran-ordered arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))"))) {
    throw FormatError(where + "expected a 2-D array (T, d)");
  }
  Matrix out;
  out.rows = std::stoull(m[1]);
  out.cols = std::stoull(m[2]);
  const std::size_t n = out.rows * out.cols;
  out.data.resize(n);
  if (descr == "<f4") {
    if (!binio::read_floats(in, out.data)) throw FormatError(where + "truncated data");
  } else if (descr == "<f8") {
    std::vector<double> tmp(n);
    if (!in.read(reinterpret_cast<char*>(tmp.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw FormatError(where + "truncated data");
    }
    for (std::size_t i = 0; i < n; ++i) out.data[i] = static_cast<float>(tmp[i]);
  } else {
    throw FormatError(where + "unsupported dtype '" + descr + "' (need <f4 or <f8)");
  }
  return out;
}

}  // namespace latent_forge
