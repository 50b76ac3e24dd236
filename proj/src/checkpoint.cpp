#include <bit>
#include <cstring>

#include <zlib.h>

#include "grasp/error.hpp"
#include "grasp/model.hpp"

namespace grasp {
namespace {

constexpr std::string_view kMagic = "GCPN1";
constexpr std::uint16_t kVersion = 1;

enum Flag : std::uint8_t {
  kUseNormals = 1,
  kInputTnet = 2,
  kFeatureTnet = 4,
};

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }

  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu));
    }
  }

  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

  void widths(const std::vector<std::size_t>& w) {
    uint(static_cast<std::uint32_t>(w.size()));
    for (std::size_t v : w) uint(static_cast<std::uint32_t>(v));
  }

  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename U>
  U uint() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

  std::vector<std::size_t> widths() {
    const auto n = uint<std::uint32_t>();
    need(std::size_t{n} * 4);
    std::vector<std::size_t> w(n);
    for (auto& v : w) v = uint<std::uint32_t>();
    return w;
  }

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw Error(Errc::Truncated, "checkpoint ends at byte " + std::to_string(data_.size()) +
                                       ", needed " + std::to_string(n) + " more at " +
                                       std::to_string(pos_));
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::string_view data) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

void write_config(Writer& w, const PointNetConfig& c) {
  std::uint8_t flags = 0;
  if (c.use_normals) flags |= kUseNormals;
  if (c.use_input_tnet) flags |= kInputTnet;
  if (c.use_feature_tnet) flags |= kFeatureTnet;
  w.uint(flags);
  w.uint(static_cast<std::uint32_t>(c.num_classes));
  w.uint(static_cast<std::uint32_t>(c.points_per_cloud));
  w.f64(c.tnet_reg_weight);
  w.f64(c.dropout_keep);
  w.f64(c.bn_momentum);
  w.f64(c.bn_epsilon);
  w.widths(c.mlp1);
  w.widths(c.mlp2);
  w.widths(c.head);
  w.widths(c.tnet_mlp);
  w.widths(c.tnet_head);
}

PointNetConfig read_config(Reader& r) {
  PointNetConfig c;
  const auto flags = r.uint<std::uint8_t>();
  c.use_normals = flags & kUseNormals;
  c.use_input_tnet = flags & kInputTnet;
  c.use_feature_tnet = flags & kFeatureTnet;
  c.num_classes = r.uint<std::uint32_t>();
  c.points_per_cloud = r.uint<std::uint32_t>();
  c.tnet_reg_weight = r.f64();
  c.dropout_keep = r.f64();
  c.bn_momentum = r.f64();
  c.bn_epsilon = r.f64();
  c.mlp1 = r.widths();
  c.mlp2 = r.widths();
  c.head = r.widths();
  c.tnet_mlp = r.widths();
  c.tnet_head = r.widths();
  return c;
}

std::vector<nn::Tensor<float>*> all_tensors(PointNet<float>& model) {
  std::vector<nn::Tensor<float>*> out;
  for (auto* p : model.parameters()) out.push_back(&p->value);
  for (auto* b : model.buffers()) out.push_back(b);
  return out;
}

}  // namespace

std::string save_checkpoint(const PointNet<float>& model) {
  Writer w;
  w.bytes(kMagic);
  w.uint(kVersion);
  write_config(w, model.config());
  w.uint(static_cast<std::uint64_t>(model.global_step));
  std::vector<const nn::Tensor<float>*> tensors;
  for (const auto* p : model.parameters()) tensors.push_back(&p->value);
  for (const auto* b : model.buffers()) tensors.push_back(b);
  w.uint(static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    w.uint(static_cast<std::uint32_t>(t->size()));
    for (float v : t->values()) w.f32(v);
  }
  w.uint(crc(w.str()));
  return std::move(w.str());
}

PointNet<float> load_checkpoint(std::string_view bytes, const PointNetConfig* expected) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw Error(Errc::BadMagic, "not a checkpoint: missing GCPN1 magic");
  }
  Reader header(bytes.substr(kMagic.size()));
  const auto version = header.uint<std::uint16_t>();
  if (version != kVersion) {
    throw Error(Errc::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                           ", this build reads " + std::to_string(kVersion));
  }
  if (bytes.size() < kMagic.size() + 2 + 4) {
    throw Error(Errc::Truncated, "checkpoint has no checksum trailer");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader trailer(bytes.substr(bytes.size() - 4));
  if (trailer.uint<std::uint32_t>() != crc(body)) {
    throw Error(Errc::ChecksumMismatch, "checkpoint checksum does not match its contents");
  }

  Reader r(body.substr(kMagic.size() + 2));
  const PointNetConfig config = read_config(r);
  if (expected && !(*expected == config)) {
    throw Error(Errc::ShapeMismatch,
                std::string("checkpoint was saved for a different model configuration (") +
                    (config.use_normals ? "extended" : "basic") + " input)");
  }
  PointNet<float> model(config);
  model.global_step = static_cast<std::int64_t>(r.uint<std::uint64_t>());
  const auto tensors = all_tensors(model);
  const auto count = r.uint<std::uint32_t>();
  if (count != tensors.size()) {
    throw Error(Errc::ShapeMismatch, "checkpoint holds " + std::to_string(count) +
                                         " tensors, configuration needs " +
                                         std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto n = r.uint<std::uint32_t>();
    if (n != tensors[i]->size()) {
      throw Error(Errc::ShapeMismatch, "tensor " + std::to_string(i) + " has " +
                                           std::to_string(n) + " values, expected " +
                                           std::to_string(tensors[i]->size()));
    }
    r.need(std::size_t{n} * 4);
    for (auto& v : tensors[i]->values()) v = r.f32();
  }
  if (r.remaining() != 0) {
    throw Error(Errc::ShapeMismatch, "checkpoint has " + std::to_string(r.remaining()) +
                                         " trailing bytes");
  }
  return model;
}

}  // namespace grasp
