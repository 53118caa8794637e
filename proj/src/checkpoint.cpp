#include "mpser/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mpser/errors.hpp"

namespace mpser {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'K'};

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

Checkpoint Checkpoint::from_model(const ModelParams& params, const LSLRTable* lslr) {
  Checkpoint c;
  c.tensors.emplace_back("layer_weights", params.layer_weights);
  c.tensors.emplace_back("linear1.weight", params.w1);
  c.tensors.emplace_back("linear1.bias", params.b1);
  c.tensors.emplace_back("linear2.weight", params.w2);
  c.tensors.emplace_back("linear2.bias", params.b2);
  if (lslr != nullptr) c.tensors.emplace_back("lslr.rates", lslr->rates);
  return c;
}

ModelParams Checkpoint::to_model() const {
  const char* names[5] = {"layer_weights", "linear1.weight", "linear1.bias", "linear2.weight",
                          "linear2.bias"};
  ModelParams p;
  Tensor* slots[5] = {&p.layer_weights, &p.w1, &p.b1, &p.w2, &p.b2};
  for (int i = 0; i < 5; ++i) {
    const Tensor* t = find(names[i]);
    if (t == nullptr) {
      throw IoError(std::string("checkpoint is missing tensor '") + names[i] + "'");
    }
    *slots[i] = *t;
  }
  return p;
}

bool Checkpoint::has_lslr() const { return find("lslr.rates") != nullptr; }

LSLRTable Checkpoint::to_lslr() const {
  const Tensor* t = find("lslr.rates");
  if (t == nullptr) throw IoError("checkpoint has no LSLR table");
  LSLRTable table;
  table.rates = *t;
  return table;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 4);
  put_u16(out, ckpt.version);
  put_u64(out, ckpt.config_digest);
  put_u64(out, ckpt.seed);
  put_u64(out, ckpt.step);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f64(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("'" + path + "' is not an MPCK checkpoint");
  }
  Checkpoint c;
  c.version = get_u16(in);
  if (c.version != 1) {
    throw IoError("'" + path + "' has unsupported checkpoint version " +
                  std::to_string(c.version));
  }
  c.config_digest = get_u64(in);
  c.seed = get_u64(in);
  c.step = get_u64(in);
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = get_u32(in);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = get_u32(in);
    Tensor t(shape);
    for (std::size_t j = 0; j < t.numel(); ++j) t[j] = get_f64(in);
    if (!in) throw IoError("'" + path + "' truncated in tensor '" + name + "'");
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace mpser
