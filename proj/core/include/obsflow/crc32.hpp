#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace obsflow {

/// IEEE 802.3 CRC-32 (reflected, polynomial 0xEDB88320), the zlib variant.
/// Used as the trailing checksum of the OBSF1 / OBSP1 containers.
class Crc32 {
public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = state_;
    for (std::size_t i = 0; i < len; ++i)
      c = table()[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    state_ = c;
  }

  std::uint32_t value() const { return state_ ^ 0xffffffffu; }

  static std::uint32_t of(const void* data, std::size_t len) {
    Crc32 c;
    c.update(data, len);
    return c.value();
  }

private:
  static const std::array<std::uint32_t, 256>& table() {
    static const std::array<std::uint32_t, 256> t = [] {
      std::array<std::uint32_t, 256> a{};
      for (std::uint32_t n = 0; n < 256; ++n) {
        std::uint32_t c = n;
        for (int k = 0; k < 8; ++k)
          c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
        a[n] = c;
      }
      return a;
    }();
    return t;
  }

  std::uint32_t state_ = 0xffffffffu;
};

}  // namespace obsflow
