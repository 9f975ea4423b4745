#include "snnrtrl/raster.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "snnrtrl/errors.hpp"

namespace snnrtrl {

namespace {

constexpr std::uint32_t kBinaryMajorVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

Raster::Raster(int steps, int channels) : steps_(steps), channels_(channels) {
  if (steps < 0 || channels < 0) throw ShapeError("Raster: negative dimension");
  bits_.assign(static_cast<std::size_t>(steps) * static_cast<std::size_t>(channels), 0);
}

std::size_t Raster::index(int t, int i) const {
  if (t < 0 || t >= steps_ || i < 0 || i >= channels_) {
    throw ShapeError("Raster: index (" + std::to_string(t) + ", " + std::to_string(i) +
                     ") outside " + std::to_string(steps_) + "x" + std::to_string(channels_));
  }
  return static_cast<std::size_t>(t) * static_cast<std::size_t>(channels_) +
         static_cast<std::size_t>(i);
}

Eigen::VectorXd Raster::row(int t) const {
  Eigen::VectorXd v(channels_);
  if (t < 0 || t >= steps_) throw ShapeError("Raster: row " + std::to_string(t) + " out of range");
  const std::size_t base = static_cast<std::size_t>(t) * static_cast<std::size_t>(channels_);
  for (int i = 0; i < channels_; ++i) v[i] = bits_[base + static_cast<std::size_t>(i)];
  return v;
}

std::int64_t Raster::spike_count() const {
  std::int64_t n = 0;
  for (auto b : bits_) n += b;
  return n;
}

void write_raster_text(std::ostream& out, const Raster& raster) {
  out << "SNNRASTER v1 " << raster.steps() << ' ' << raster.channels() << '\n';
  for (int t = 0; t < raster.steps(); ++t) {
    for (int i = 0; i < raster.channels(); ++i) {
      if (raster.at(t, i)) out << t << ' ' << i << '\n';
    }
  }
}

Raster read_raster_text(std::istream& in) {
  std::string magic, version;
  long long steps = -1, channels = -1;
  in >> magic >> version >> steps >> channels;
  if (!in || magic != "SNNRASTER") throw IoError("raster: missing SNNRASTER header");
  if (version.size() < 2 || version[0] != 'v') throw IoError("raster: malformed version " + version);
  if (version != "v1") throw IoError("raster: unsupported major version " + version);
  if (steps < 0 || channels < 0) throw IoError("raster: negative dimensions in header");
  Raster raster(static_cast<int>(steps), static_cast<int>(channels));
  long long t = 0, i = 0;
  int line = 1;
  while (in >> t) {
    ++line;
    if (!(in >> i)) throw IoError("raster: truncated event on line " + std::to_string(line));
    if (t < 0 || t >= steps || i < 0 || i >= channels) {
      throw IoError("raster: event (" + std::to_string(t) + ", " + std::to_string(i) +
                    ") out of range on line " + std::to_string(line));
    }
    raster.set(static_cast<int>(t), static_cast<int>(i));
  }
  if (!in.eof()) throw IoError("raster: malformed event after line " + std::to_string(line));
  return raster;
}

void write_raster_binary(std::ostream& out, const Raster& raster) {
  out.write("SNNR", 4);
  put_u32(out, static_cast<std::uint32_t>(raster.steps()));
  put_u32(out, static_cast<std::uint32_t>(raster.channels()));
  put_u32(out, kBinaryMajorVersion);
  const std::size_t nbits =
      static_cast<std::size_t>(raster.steps()) * static_cast<std::size_t>(raster.channels());
  std::string payload((nbits + 7) / 8, '\0');
  std::size_t bit = 0;
  for (int t = 0; t < raster.steps(); ++t) {
    for (int i = 0; i < raster.channels(); ++i, ++bit) {
      if (raster.at(t, i)) payload[bit / 8] = static_cast<char>(payload[bit / 8] | (1 << (bit % 8)));
    }
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

Raster read_raster_binary(std::istream& in) {
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) throw IoError("raster: short binary header");
  if (std::memcmp(header, "SNNR", 4) != 0) throw IoError("raster: bad binary magic");
  const std::uint32_t steps = get_u32(header + 4);
  const std::uint32_t channels = get_u32(header + 8);
  const std::uint32_t flags = get_u32(header + 12);
  if ((flags & 0xffu) != kBinaryMajorVersion) {
    throw IoError("raster: unsupported binary major version " + std::to_string(flags & 0xffu));
  }
  if ((flags >> 8) != 0) throw IoError("raster: reserved flag bits set");
  Raster raster(static_cast<int>(steps), static_cast<int>(channels));
  const std::size_t nbits = static_cast<std::size_t>(steps) * channels;
  std::string payload((nbits + 7) / 8, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
    throw IoError("raster: truncated binary payload");
  }
  std::size_t bit = 0;
  for (std::uint32_t t = 0; t < steps; ++t) {
    for (std::uint32_t i = 0; i < channels; ++i, ++bit) {
      if ((static_cast<unsigned char>(payload[bit / 8]) >> (bit % 8)) & 1u) {
        raster.set(static_cast<int>(t), static_cast<int>(i));
      }
    }
  }
  return raster;
}

void save_raster(const std::filesystem::path& path, const Raster& raster) {
  const bool binary = path.extension() == ".snnr";
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (binary) {
    write_raster_binary(out, raster);
  } else {
    write_raster_text(out, raster);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Raster load_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  // The text header also starts with "SNNR", so look further.
  char magic[9] = {};
  in.read(magic, 9);
  in.clear();
  in.seekg(0);
  if (std::memcmp(magic, "SNNRASTER", 9) == 0) return read_raster_text(in);
  return read_raster_binary(in);
}

}  // namespace snnrtrl
