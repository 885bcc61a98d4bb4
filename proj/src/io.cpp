#include "crclip/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace crclip {

namespace {

constexpr char kMatrixMagic[4] = {'C', 'R', 'M', 'X'};
constexpr std::uint16_t kMatrixVersion = 1;
constexpr std::uint8_t kDtypeFloat64 = 0x01;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

// Bounds-checked little-endian reader over an in-memory buffer.
class Reader {
 public:
  Reader(const std::string& buf, const std::string& what) : buf_(buf), what_(what) {}

  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t pos() const { return pos_; }

  void need(std::size_t n) {
    if (remaining() < n)
      throw IoError(IoErrorKind::Truncated,
                    what_ + ": wanted " + std::to_string(n) + " more bytes, " +
                        std::to_string(remaining()) + " left");
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::FileAccess, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_all(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::FileAccess, "cannot open " + path + " for write");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorKind::FileAccess, "short write to " + path);
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size())));
}

void encode_tensor_payload(std::string& out, const Tensor& t) {
  out.push_back(static_cast<char>(kDtypeFloat64));
  for (double v : t.data()) put_f64(out, v);
}

}  // namespace

void write_matrix(const std::string& path, const Tensor& m) {
  if (!m.defined() || !m.is_matrix())
    throw InputError("write_matrix: expected a matrix");
  std::string out;
  out.append(kMatrixMagic, 4);
  put_u16(out, kMatrixVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  encode_tensor_payload(out, m);
  write_all(path, out);
}

Tensor read_matrix(const std::string& path) {
  const std::string buf = read_all(path);
  Reader r(buf, path);
  if (r.bytes(4) != std::string(kMatrixMagic, 4))
    throw IoError(IoErrorKind::BadMagic, path + " is not a CRMX matrix file");
  const std::uint16_t version = r.u16();
  if (version != kMatrixVersion)
    throw IoError(IoErrorKind::BadVersion,
                  path + ": version " + std::to_string(version));
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (r.u8() != kDtypeFloat64)
    throw IoError(IoErrorKind::BadDtype, path + ": expected float64 payload");
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  r.need(n * 8);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = r.f64();
  return Tensor(Shape{rows, cols}, std::move(data));
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& named) {
  std::set<std::string> seen;
  for (const auto& [name, t] : named) {
    if (!seen.insert(name).second)
      throw ContractError("save_checkpoint: duplicate tensor name " + name);
    if (!t.defined()) throw ContractError("save_checkpoint: undefined tensor " + name);
  }
  std::string out;
  put_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    encode_tensor_payload(out, t);
  }
  put_u32(out, crc_of(out));
  write_all(path, out);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  const std::string buf = read_all(path);
  if (buf.size() < 8)
    throw IoError(IoErrorKind::Truncated, path + ": too small for a checkpoint");
  const std::string body = buf.substr(0, buf.size() - 4);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(
                  static_cast<std::uint8_t>(buf[body.size() + i]))
              << (8 * i);
  if (crc_of(body) != stored)
    throw IoError(IoErrorKind::ChecksumMismatch, path + ": checkpoint corrupted");

  Reader r(body, path);
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> named;
  named.reserve(count);
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    if (!seen.insert(name).second)
      throw IoError(IoErrorKind::KeyMismatch, path + ": duplicate tensor " + name);
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = r.u32();
      n *= shape[d];
    }
    if (r.u8() != kDtypeFloat64)
      throw IoError(IoErrorKind::BadDtype, path + ": tensor " + name);
    r.need(n * 8);
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = r.f64();
    named.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0)
    throw IoError(IoErrorKind::Truncated, path + ": trailing bytes after payload");
  return named;
}

void restore_into(std::vector<std::pair<std::string, Tensor>>& params,
                  const std::vector<std::pair<std::string, Tensor>>& loaded) {
  std::set<std::string> want, have;
  for (const auto& [name, t] : params) want.insert(name);
  for (const auto& [name, t] : loaded) have.insert(name);
  if (want != have) {
    std::string msg = "parameter names do not match checkpoint;";
    for (const auto& n : want)
      if (!have.count(n)) msg += " missing:" + n;
    for (const auto& n : have)
      if (!want.count(n)) msg += " extra:" + n;
    throw IoError(IoErrorKind::KeyMismatch, msg);
  }
  for (auto& [name, t] : params) {
    const auto it = std::find_if(loaded.begin(), loaded.end(),
                                 [&](const auto& kv) { return kv.first == name; });
    if (it->second.shape() != t.shape())
      throw IoError(IoErrorKind::KeyMismatch,
                    "tensor " + name + " has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(t.shape()));
    t.mutable_data() = it->second.data();
  }
}

std::string read_text_file(const std::string& path) { return read_all(path); }

void write_text_file(const std::string& path, const std::string& content) {
  write_all(path, content);
}

}  // namespace crclip
