#include "comet/binary_io.hpp"
#include "comet/data.hpp"

#include <fstream>
#include <sstream>

namespace comet {

namespace {

void put_bits(std::ostream& os, const Mask& m) {
  const Index n = m.size();
  std::string bytes(static_cast<std::size_t>((n + 7) / 8), '\0');
  for (Index i = 0; i < n; ++i)
    if (m.data()[i]) bytes[static_cast<std::size_t>(i / 8)] |= static_cast<char>(1u << (i % 8));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Mask get_bits(std::istream& is, Index h, Index w) {
  const Index n = h * w;
  const std::string bytes = io::get_bytes(is, static_cast<std::size_t>((n + 7) / 8));
  Mask m(h, w);
  for (Index i = 0; i < n; ++i)
    m.data()[i] = (static_cast<unsigned char>(bytes[static_cast<std::size_t>(i / 8)]) >> (i % 8)) & 1u;
  return m;
}

int parse_int_field(const std::string& meta, const std::string& key) {
  const std::string probe = key + "=";
  std::size_t pos = 0;
  while (pos < meta.size()) {
    std::size_t end = meta.find(';', pos);
    if (end == std::string::npos) end = meta.size();
    if (meta.compare(pos, probe.size(), probe) == 0)
      return std::stoi(meta.substr(pos + probe.size(), end - pos - probe.size()));
    pos = end + 1;
  }
  return -1;
}

}  // namespace

std::string serialize_dataset(const Dataset& data) {
  std::ostringstream os(std::ios::binary);
  io::put_magic(os, "CMDS");
  io::put_le<std::uint32_t>(os, kDatasetVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.classes));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.height));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.width));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.channels));
  if (static_cast<Index>(data.q.size()) != data.channels) throw DimensionError("q has wrong channel count");
  for (double v : data.q) io::put_f64(os, v);
  io::put_le<std::uint64_t>(os, data.samples.size());
  const Index per = data.channels * data.height * data.width;
  for (const auto& s : data.samples) {
    if (s.image.size() != per) throw DimensionError("sample image has wrong size");
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.label));
    io::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.split));
    for (Index i = 0; i < per; ++i) io::put_f32(os, s.image[i]);
    put_bits(os, s.gt_mask);
    put_bits(os, s.fg_mask);
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.meta.size()));
    os.write(s.meta.data(), static_cast<std::streamsize>(s.meta.size()));
  }
  return std::move(os).str();
}

Dataset deserialize_dataset(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "CMDS");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  Dataset d;
  d.classes = static_cast<int>(io::get_le<std::uint32_t>(is));
  d.height = io::get_le<std::uint32_t>(is);
  d.width = io::get_le<std::uint32_t>(is);
  d.channels = io::get_le<std::uint32_t>(is);
  if (d.height * d.width * d.channels > (Index{1} << 26)) throw FormatError("implausible image size");
  d.q.resize(static_cast<std::size_t>(d.channels));
  for (auto& v : d.q) v = io::get_f64(is);
  const auto count = io::get_le<std::uint64_t>(is);
  const Index per = d.channels * d.height * d.width;
  for (std::uint64_t k = 0; k < count; ++k) {
    Sample s;
    s.label = static_cast<int>(io::get_le<std::uint32_t>(is));
    const auto split = io::get_le<std::uint8_t>(is);
    if (split > 2) throw FormatError("bad split tag");
    s.split = static_cast<Split>(split);
    s.image.resize(per);
    for (Index i = 0; i < per; ++i) s.image[i] = io::get_f32(is);
    s.gt_mask = get_bits(is, d.height, d.width);
    s.fg_mask = get_bits(is, d.height, d.width);
    s.meta = io::get_bytes(is, io::get_le<std::uint32_t>(is));
    s.scene_label = parse_int_field(s.meta, "scene");
    d.scene_classes = std::max(d.scene_classes, parse_int_field(s.meta, "scenes"));
    d.samples.push_back(std::move(s));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in dataset file");
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  const std::string bytes = serialize_dataset(data);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return deserialize_dataset(buf.str());
}

}  // namespace comet
