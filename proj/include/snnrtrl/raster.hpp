#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

namespace snnrtrl {

// Binary spike raster, T timesteps by n channels, row-major.
class Raster {
 public:
  Raster() = default;
  Raster(int steps, int channels);

  int steps() const { return steps_; }
  int channels() const { return channels_; }

  bool at(int t, int i) const { return bits_[index(t, i)] != 0; }
  void set(int t, int i, bool v = true) { bits_[index(t, i)] = v ? 1 : 0; }

  Eigen::VectorXd row(int t) const;
  std::int64_t spike_count() const;

  bool operator==(const Raster& other) const = default;

 private:
  std::size_t index(int t, int i) const;

  int steps_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Text form: "SNNRASTER v1 <T> <n>" followed by "t neuron_id" lines.
void write_raster_text(std::ostream& out, const Raster& raster);
Raster read_raster_text(std::istream& in);

// Binary form: 16-byte header (magic "SNNR", u32 T, u32 n, u32 flags) and
// a row-major, LSB-first bit-packed payload. The low byte of flags carries
// the major format version.
void write_raster_binary(std::ostream& out, const Raster& raster);
Raster read_raster_binary(std::istream& in);

void save_raster(const std::filesystem::path& path, const Raster& raster);
// Dispatches on the leading magic bytes, so either form can be loaded.
Raster load_raster(const std::filesystem::path& path);

}  // namespace snnrtrl
