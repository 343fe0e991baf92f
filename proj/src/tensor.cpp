#include "ranmtl/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <stdexcept>

namespace ranmtl {

// Little-endian wire format for named tensor sets:
//   u32 count, then per tensor: u16 name length, name bytes, u8 rank,
//   u32 per dim, f64 payload. Used for transfer byte accounting and for
//   round-tripping parameter sets between nodes.

namespace {
template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("tensor wire: truncated buffer");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}
}  // namespace

std::vector<std::uint8_t> encode_named(
    const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::vector<std::uint8_t> out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("tensor wire: name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t->shape.size()));
    for (std::size_t d : t->shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t->data) put<double>(out, v);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> decode_named(const std::vector<std::uint8_t>& buf) {
  std::size_t pos = 0;
  const std::uint32_t count = take<std::uint32_t>(buf, pos);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t nl = take<std::uint16_t>(buf, pos);
    if (pos + nl > buf.size()) throw std::runtime_error("tensor wire: truncated name");
    std::string name(reinterpret_cast<const char*>(buf.data() + pos), nl);
    pos += nl;
    const std::uint8_t rank = take<std::uint8_t>(buf, pos);
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      shape.push_back(take<std::uint32_t>(buf, pos));
      n *= shape.back();
    }
    Tensor t;
    t.shape = shape;
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.data[k] = take<double>(buf, pos);
    out.emplace_back(std::move(name), std::move(t));
  }
  if (pos != buf.size()) throw std::runtime_error("tensor wire: trailing bytes");
  return out;
}

}  // namespace ranmtl
