#include "comet/binary_io.hpp"
#include "comet/nets.hpp"

#include <fstream>
#include <sstream>

namespace comet {

std::string serialize_checkpoint(const ModelParams& params) {
  std::ostringstream os(std::ios::binary);
  io::put_magic(os, "CMTP");
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (Index d : e.tensor.shape()) io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < e.tensor.size(); ++i) io::put_f64(os, e.tensor[i]);
  }
  return std::move(os).str();
}

ModelParams deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "CMTP");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = io::get_le<std::uint32_t>(is);
  ModelParams params;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = io::get_bytes(is, io::get_le<std::uint32_t>(is));
    const auto rank = io::get_le<std::uint32_t>(is);
    if (rank > 8) throw FormatError("implausible rank in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(io::get_le<std::uint64_t>(is));
    Array values(numel(shape));
    for (Index i = 0; i < values.size(); ++i) values[i] = io::get_f64(is);
    params.add(std::move(name), Tensor::parameter(shape, std::move(values)));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(params);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace comet
