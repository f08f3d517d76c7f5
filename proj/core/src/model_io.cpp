#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bssd/error.hpp"
#include "bssd/model.hpp"

// Model container, all integers little-endian:
//   "BSSDMODL" | u32 version | u64 seed | u32 n + run id bytes
//   | u32 rank + u64 input dims | u64 classes
//   | u32 layers, each: u8 kind, u8 activation, u64 units, u64 kernel, u64 padding
//   | u32 tensors, each: u32 rank + u64 dims + f64 values

namespace bssd {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'S', 'D', 'M', 'O', 'D', 'L'};

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("model file (format version " + std::to_string(version) + "): " + msg + " at byte " +
                      std::to_string(pos_));
  }

  std::uint32_t version = 0;

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

void put_shape(Writer& w, const Shape& s) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  for (std::size_t d : s) w.put<std::uint64_t>(d);
}

Shape get_shape(Reader& r) {
  const auto rank = r.get<std::uint32_t>("rank");
  if (rank > 8) r.fail("implausible rank " + std::to_string(rank));
  Shape s(rank);
  for (auto& d : s) d = r.get<std::uint64_t>("dimension");
  return s;
}

}  // namespace

std::string serialize_model(const ClassifierModel& model) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kModelFormatVersion);
  w.put<std::uint64_t>(model.provenance().seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.provenance().run_id.size()));
  w.bytes(model.provenance().run_id.data(), model.provenance().run_id.size());

  const ClassifierSpec& spec = model.spec();
  put_shape(w, spec.input_shape);
  w.put<std::uint64_t>(spec.num_classes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.layers.size()));
  for (const LayerSpec& l : spec.layers) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
    w.put<std::uint64_t>(l.units);
    w.put<std::uint64_t>(l.kernel);
    w.put<std::uint64_t>(l.padding);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
  for (const Tensor& p : model.parameters()) {
    put_shape(w, p.shape());
    w.bytes(p.data(), p.size() * sizeof(double));
  }
  return w.take();
}

ClassifierModel deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.empty()) r.fail("empty input");
  if (r.take(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic))) r.fail("bad magic");
  r.version = r.get<std::uint32_t>("version");
  if (r.version != kModelFormatVersion) {
    r.fail("unsupported version, this build reads version " + std::to_string(kModelFormatVersion));
  }
  Provenance prov;
  prov.seed = r.get<std::uint64_t>("seed");
  const auto id_len = r.get<std::uint32_t>("run id length");
  prov.run_id = std::string(r.take(id_len, "run id"));

  ClassifierSpec spec;
  spec.input_shape = get_shape(r);
  spec.num_classes = r.get<std::uint64_t>("class count");
  const auto n_layers = r.get<std::uint32_t>("layer count");
  if (n_layers > 1024) r.fail("implausible layer count");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec l;
    const auto kind = r.get<std::uint8_t>("layer kind");
    const auto act = r.get<std::uint8_t>("activation");
    if (kind > static_cast<std::uint8_t>(LayerKind::Flatten)) r.fail("unknown layer kind");
    if (act > static_cast<std::uint8_t>(Activation::Tanh)) r.fail("unknown activation");
    l.kind = static_cast<LayerKind>(kind);
    l.activation = static_cast<Activation>(act);
    l.units = r.get<std::uint64_t>("units");
    l.kernel = r.get<std::uint64_t>("kernel");
    l.padding = r.get<std::uint64_t>("padding");
    spec.layers.push_back(l);
  }
  const auto n_params = r.get<std::uint32_t>("tensor count");
  std::vector<Tensor> params;
  for (std::uint32_t i = 0; i < n_params; ++i) {
    Shape s = get_shape(r);
    const std::size_t n = volume(s);
    auto raw = r.take(n * sizeof(double), "parameter values");
    std::vector<double> values(n);
    std::memcpy(values.data(), raw.data(), raw.size());
    params.emplace_back(std::move(s), std::move(values));
  }
  if (!r.done()) r.fail("trailing bytes");
  try {
    return ClassifierModel(std::move(spec), std::move(params), std::move(prov));
  } catch (const Error& e) {
    r.fail(std::string("incompatible contents: ") + e.what());
  }
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("save_model: cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("save_model: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_model: cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace bssd
