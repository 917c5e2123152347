#include "g2s/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <set>

#include "g2s/error.hpp"

namespace g2s {

namespace {

const char* const kGaussianFields[] = {"mu", "quat", "log_scale", "color_logit",
                                       "opacity_logit"};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void bytes(void* dst, std::size_t n, const char* field) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(path_, field, "unexpected end of file");
    }
  }
  std::uint32_t u32(const char* field) {
    unsigned char b[4];
    bytes(b, 4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* field) {
    unsigned char b[8];
    bytes(b, 8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::string text(std::uint64_t n, const char* field) {
    if (n > (1u << 30)) throw FormatError(path_, field, "implausible length");
    std::string s(n, '\0');
    bytes(s.data(), n, field);
    return s;
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

const Blob* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

void Checkpoint::add(const std::string& name, const Tensor& t) {
  Blob b{name, t.shape(), {}};
  b.data.reserve(t.numel());
  for (double v : t.data()) b.data.push_back(static_cast<float>(v));
  blobs.push_back(std::move(b));
}

void Checkpoint::add_gaussians(std::size_t index, const std::string& scene,
                               const GaussianSet& gs) {
  const std::string prefix = "gs." + std::to_string(index) + ".";
  for (const auto& p : gs.parameters()) add(prefix + p.name, p.tensor);
  config.set(prefix + "scene", scene);
}

std::vector<std::size_t> Checkpoint::gaussian_indices() const {
  std::set<std::size_t> out;
  for (const auto& b : blobs) {
    if (!b.name.starts_with("gs.")) continue;
    const auto dot = b.name.find('.', 3);
    const std::string id = b.name.substr(3, dot == std::string::npos ? 0 : dot - 3);
    if (id.empty() || !std::all_of(id.begin(), id.end(), ::isdigit)) continue;
    out.insert(std::stoull(id));
  }
  return {out.begin(), out.end()};
}

GaussianSet Checkpoint::gaussians(std::size_t index) const {
  const std::string prefix = "gs." + std::to_string(index) + ".";
  Tensor parts[5];
  for (int f = 0; f < 5; ++f) {
    const Blob* b = find(prefix + kGaussianFields[f]);
    if (!b) throw FormatError(source, prefix + kGaussianFields[f], "missing Gaussian blob");
    parts[f] = Tensor::from(b->shape, std::vector<double>(b->data.begin(), b->data.end()));
  }
  GaussianSet gs{parts[0], parts[1], parts[2], parts[3], parts[4]};
  try {
    gs.validate();
  } catch (const std::exception& e) {
    throw FormatError(source, prefix + "mu", e.what());
  }
  return gs;
}

std::string Checkpoint::gaussian_scene(std::size_t index) const {
  return config.get("gs." + std::to_string(index) + ".scene", "");
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path, "<file>", "cannot open for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  const std::string text = config.to_text();
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u64(out, blobs.size());
  for (const auto& b : blobs) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put_u64(out, d);
    for (float f : b.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw FormatError(path, "<file>", "write failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "<file>", "cannot open");
  Reader r(in, path);
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(path, "magic", "not a checkpoint file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path, "version", "unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.source = path;
  ck.config = KeyValueFile::parse(r.text(r.u64("config"), "config"), path);
  const std::uint64_t count = r.u64("blob_count");
  for (std::uint64_t i = 0; i < count; ++i) {
    Blob b;
    b.name = r.text(r.u32("name"), "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError(path, b.name, "implausible rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      b.shape.push_back(r.u64("shape"));
      n *= b.shape.back();
    }
    if (n > (std::size_t{1} << 32)) throw FormatError(path, b.name, "implausible size");
    b.data.resize(n);
    for (auto& f : b.data) {
      const std::uint32_t bits = r.u32(b.name.c_str());
      std::memcpy(&f, &bits, 4);
    }
    ck.blobs.push_back(std::move(b));
  }
  return ck;
}

void load_parameters(const Checkpoint& ckpt, const std::vector<NamedTensor>& params) {
  for (const auto& p : params) {
    const Blob* b = ckpt.find(p.name);
    if (!b) throw FormatError(ckpt.source, p.name, "parameter missing from checkpoint");
    if (b->shape != p.tensor.shape()) {
      throw FormatError(ckpt.source, p.name,
                        "shape " + shape_str(b->shape) + " differs from " +
                            shape_str(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    auto dst = t.mutable_data();
    std::copy(b->data.begin(), b->data.end(), dst.begin());
  }
}

}  // namespace g2s
