#include <fstream>
#include <sstream>

#include "bssd/dataset.hpp"
#include "bssd/error.hpp"

namespace bssd {

namespace {

[[noreturn]] void idx_fail(const std::string& what, std::size_t offset) {
  throw FormatError("idx: " + what + " at byte offset " + std::to_string(offset));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("idx: cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

IdxArray parse_idx(std::string_view bytes) {
  if (bytes.size() < 4) idx_fail("file shorter than the 4-byte magic", bytes.size());
  const auto u8 = [&](std::size_t i) { return static_cast<std::uint8_t>(bytes[i]); };
  if (u8(0) != 0 || u8(1) != 0) idx_fail("bad magic, leading bytes must be zero", 0);
  if (u8(2) != kIdxUnsignedByte) idx_fail("unsupported element type " + std::to_string(u8(2)), 2);
  const std::size_t ndims = u8(3);
  if (ndims == 0) idx_fail("zero dimensions", 3);
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) idx_fail("truncated dimension header", bytes.size());

  IdxArray out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t at = 4 + 4 * d;
    const std::uint32_t v = (std::uint32_t{u8(at)} << 24) | (std::uint32_t{u8(at + 1)} << 16) |
                            (std::uint32_t{u8(at + 2)} << 8) | std::uint32_t{u8(at + 3)};
    out.dims.push_back(v);
    count *= v;
  }
  if (bytes.size() < header + count) idx_fail("truncated payload", bytes.size());
  if (bytes.size() > header + count) idx_fail("trailing bytes after payload", header + count);
  out.data.assign(reinterpret_cast<const std::uint8_t*>(bytes.data()) + header,
                  reinterpret_cast<const std::uint8_t*>(bytes.data()) + header + count);
  return out;
}

std::string encode_idx(const IdxArray& array) {
  std::size_t count = 1;
  for (auto d : array.dims) count *= d;
  if (array.dims.empty() || array.dims.size() > 255) throw ValidationError("idx: need 1..255 dimensions");
  if (count != array.data.size()) throw ValidationError("idx: dims do not match payload size");
  std::string out;
  out.reserve(4 + 4 * array.dims.size() + count);
  out.push_back('\0');
  out.push_back('\0');
  out.push_back(static_cast<char>(kIdxUnsignedByte));
  out.push_back(static_cast<char>(array.dims.size()));
  for (std::uint32_t d : array.dims) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((d >> shift) & 0xFF));
  }
  out.append(reinterpret_cast<const char*>(array.data.data()), array.data.size());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) { return parse_idx(slurp(path)); }

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const std::string bytes = encode_idx(array);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("idx: cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> num_classes) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (lab.dims.size() != 1) idx_fail("labels file must be one-dimensional", 3);
  if (img.dims.front() != lab.dims.front()) {
    idx_fail("image count " + std::to_string(img.dims.front()) + " does not match label count " +
                 std::to_string(lab.dims.front()),
             4);
  }
  Shape shape(img.dims.begin(), img.dims.end());
  Tensor inputs(shape);
  for (std::size_t i = 0; i < img.data.size(); ++i) inputs[i] = static_cast<double>(img.data[i]) / 255.0;

  Dataset ds;
  std::size_t max_label = 0;
  for (auto v : lab.data) {
    ds.train.labels.push_back(v);
    max_label = std::max<std::size_t>(max_label, v);
  }
  ds.train.inputs = std::move(inputs);
  ds.num_classes = num_classes.value_or(std::max<std::size_t>(2, max_label + 1));
  ds.test.inputs = Tensor(Shape{0});
  ds.validate();
  return ds;
}

}  // namespace bssd
