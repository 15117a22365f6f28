#include "rwm/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace rwm {
namespace {

using json = nlohmann::json;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, const char* what) : data_(data), what_(what) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const std::string& field) const {
    if (remaining() < n)
      throw FormatError(std::string(what_) + ": truncated " + field + " at byte " + std::to_string(pos_) +
                            ": expected " + std::to_string(n) + " bytes, got " + std::to_string(remaining()),
                        static_cast<std::int64_t>(pos_));
  }
  std::string bytes(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16(const std::string& field) {
    need(2, field);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(data_[pos_ + i]) << (8 * i));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32_unchecked() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return std::bit_cast<float>(v);
  }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError(std::string(what_) + ": " + msg + " at byte " + std::to_string(at), static_cast<std::int64_t>(at));
  }

 private:
  const std::string& data_;
  const char* what_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& r, const char* magic) {
  const std::size_t at = r.pos();
  if (r.remaining() < 4 || r.bytes(4, "magic") != magic)
    r.fail(std::string("not a ") + magic + " file (bad magic)", at);
}

void check_version(Reader& r, std::uint16_t supported) {
  const std::size_t at = r.pos();
  const std::uint16_t v = r.u16("version");
  if (v != supported)
    r.fail("unsupported version " + std::to_string(v) + " (this build reads " + std::to_string(supported) + ")", at);
}

void write_records(Writer& w, const std::vector<NamedTensor<Real>>& tensors) {
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (Index d : t.shape()) {
      if (d < 0 || d > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("tensor dimension out of range");
      w.u32(static_cast<std::uint32_t>(d));
    }
    const auto& v = t.data();
    for (Index i = 0; i < v.size(); ++i) w.f32(static_cast<float>(v[i]));
  }
}

std::vector<NamedTensor<Real>> read_records(Reader& r) {
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor<Real>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string tag = "tensor " + std::to_string(k);
    const std::uint32_t name_len = r.u32(tag + " name length");
    std::string name = r.bytes(name_len, tag + " name");
    const std::uint32_t ndim = r.u32(tag + " rank");
    if (ndim > 8) r.fail(tag + ": rank " + std::to_string(ndim) + " exceeds 8", r.pos() - 4);
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(r.u32(tag + " dims"));
      numel = std::min<std::uint64_t>(numel * static_cast<std::uint64_t>(shape.back()), std::uint64_t{1} << 48);
    }
    if (numel > r.remaining() / 4) r.need(static_cast<std::size_t>(numel) * 4, tag + " payload");
    Tensor<Real>::Array values(static_cast<Index>(numel));
    for (Index i = 0; i < values.size(); ++i) values[i] = static_cast<Real>(r.f32_unchecked());
    out.push_back({std::move(name), Tensor<Real>(shape, std::move(values))});
  }
  return out;
}

void check_end(const Reader& r) {
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes", r.pos());
}

json config_to_json(const DetectorConfig& c) {
  return json{{"channels", c.channels},       {"height", c.height},   {"width", c.width},
              {"channel_widths", c.channel_widths}, {"kernel_size", c.kernel_size}, {"strides", c.strides},
              {"head_dim", c.head_dim},       {"seed", c.seed}};
}

DetectorConfig config_from_json(const json& j) {
  DetectorConfig c;
  c.channels = j.at("channels").get<Index>();
  c.height = j.at("height").get<Index>();
  c.width = j.at("width").get<Index>();
  c.channel_widths = j.at("channel_widths").get<std::vector<Index>>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.strides = j.at("strides").get<std::vector<int>>();
  c.head_dim = j.at("head_dim").get<Index>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string encode_tensors(const std::vector<NamedTensor<Real>>& tensors) {
  Writer w;
  w.bytes("RTNS", 4);
  w.u16(kTensorFileVersion);
  write_records(w, tensors);
  return w.take();
}

std::vector<NamedTensor<Real>> decode_tensors(const std::string& bytes) {
  Reader r(bytes, "RTNS");
  check_magic(r, "RTNS");
  check_version(r, kTensorFileVersion);
  auto out = read_records(r);
  check_end(r);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw std::runtime_error(path.string() + ": read failed");
  return data;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

namespace {
template <typename F>
auto with_path(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}
}  // namespace

void save_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor<Real>>& tensors) {
  write_file(path, encode_tensors(tensors));
}

std::vector<NamedTensor<Real>> load_tensor_file(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  return with_path(path, [&] { return decode_tensors(data); });
}

Tensor<Real> find_tensor(const std::vector<NamedTensor<Real>>& tensors, const std::string& name) {
  if (name.empty()) {
    if (tensors.size() != 1)
      throw FormatError("expected exactly one tensor, found " + std::to_string(tensors.size()));
    return tensors.front().value;
  }
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw FormatError("no tensor named '" + name + "'");
}

std::string encode_checkpoint(const DetectorModel<Real>& model, const std::map<std::string, std::string>& metadata) {
  json header{{"architecture", config_to_json(model.config())}, {"metadata", metadata}};
  const std::string text = header.dump();
  Writer w;
  w.bytes("RSWT", 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  write_records(w, model.named_parameters());
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes, "RSWT");
  check_magic(r, "RSWT");
  check_version(r, kCheckpointVersion);
  const std::uint32_t len = r.u32("header length");
  const std::size_t header_at = r.pos();
  const std::string text = r.bytes(len, "header");

  DetectorConfig config;
  std::map<std::string, std::string> metadata;
  try {
    const json header = json::parse(text);
    config = config_from_json(header.at("architecture"));
    config.validate();
    metadata = header.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    r.fail(std::string("bad header: ") + e.what(), header_at);
  } catch (const InvalidArgument& e) {
    r.fail(std::string("bad architecture: ") + e.what(), header_at);
  }

  const std::size_t body_at = r.pos();
  auto params = read_records(r);
  check_end(r);

  const auto expected = build_detector<Real>(config).named_parameters();
  if (params.size() != expected.size())
    r.fail("architecture expects " + std::to_string(expected.size()) + " tensors, file has " +
               std::to_string(params.size()),
           body_at);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name != expected[i].name || params[i].value.shape() != expected[i].value.shape())
      r.fail("tensor " + std::to_string(i) + " is " + params[i].name + " " + shape_str(params[i].value.shape()) +
                 ", architecture expects " + expected[i].name + " " + shape_str(expected[i].value.shape()),
             body_at);
  return {DetectorModel<Real>(config, std::move(params)), std::move(metadata)};
}

void save_checkpoint(const DetectorModel<Real>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata) {
  write_file(path, encode_checkpoint(model, metadata));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  return with_path(path, [&] { return decode_checkpoint(data); });
}

}  // namespace rwm
