#include "ltx/pruning.hpp"

#include "ltx/serial.hpp"

namespace ltx {

namespace {
constexpr uint16_t kMaskVersion = 1;
}

void save_masks(const std::string& path, const MaskSet& masks) {
  serial::atomic_write_file(path, [&](std::ostream& os) {
    serial::write_magic(os, "LTMK");
    serial::write_le<uint16_t>(os, kMaskVersion);
    serial::write_le<uint32_t>(os, static_cast<uint32_t>(masks.size()));
    for (const auto& e : masks.entries()) {
      serial::write_string(os, e.name);
      const auto& shape = e.mask.shape();
      serial::write_le<uint8_t>(os, static_cast<uint8_t>(shape.size()));
      for (int64_t ext : shape)
        serial::write_le<uint32_t>(os, static_cast<uint32_t>(ext));
      std::vector<uint8_t> packed(
          static_cast<size_t>((e.mask.numel() + 7) / 8), 0);
      for (int64_t i = 0; i < e.mask.numel(); ++i)
        if (e.mask.data()[i])
          packed[static_cast<size_t>(i / 8)] |=
              static_cast<uint8_t>(1u << (i % 8));
      serial::write_bytes(os, packed.data(), packed.size());
    }
  });
}

MaskSet load_masks(const std::string& path) {
  auto is = serial::open_input(path);
  serial::expect_magic(is, "LTMK", "mask file");
  const auto version = serial::read_le<uint16_t>(is, "mask version");
  if (version != kMaskVersion)
    throw io_error(io_error::Kind::bad_version,
                   "unsupported mask version " + std::to_string(version));
  const auto count = serial::read_le<uint32_t>(is, "mask count");
  MaskSet out;
  for (uint32_t t = 0; t < count; ++t) {
    std::string name = serial::read_string(is, "mask name");
    const auto rank = serial::read_le<uint8_t>(is, "mask rank");
    Shape shape(rank);
    for (auto& ext : shape)
      ext = serial::read_le<uint32_t>(is, "mask extent");
    Mask m(shape);
    std::vector<uint8_t> packed(static_cast<size_t>((m.numel() + 7) / 8));
    serial::read_bytes(is, packed.data(), packed.size(), "mask payload");
    for (int64_t i = 0; i < m.numel(); ++i)
      m.data()[i] = (packed[static_cast<size_t>(i / 8)] >> (i % 8)) & 1u;
    out.add(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace ltx
