#include "saldist/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "saldist/errors.hpp"

namespace saldist {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) fail(std::string(field) + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + field, start);
    return value;
  }

  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw FormatError("netpbm: " + what + " at byte offset " + std::to_string(at));
  }

  void expect_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("expected whitespace after maxval", pos_);
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::round(v * 255.0)); }

}  // namespace

Grid decode_netpbm(std::span<const std::uint8_t> bytes) {
  HeaderReader reader(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    reader.fail("unsupported magic (expected P5 or P6)", 0);
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  const std::size_t width = reader.number("width");
  const std::size_t height = reader.number("height");
  const std::size_t maxval_at = reader.offset();
  const std::size_t maxval = reader.number("maxval");
  if (maxval != 255) reader.fail("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_at);
  if (width == 0 || height == 0) reader.fail("zero-sized image", maxval_at);
  reader.expect_single_space();

  const std::size_t start = reader.offset();
  const std::size_t need = width * height * channels;
  if (bytes.size() - start < need) {
    reader.fail("truncated payload: need " + std::to_string(need) + " bytes, have " +
                    std::to_string(bytes.size() - start),
                bytes.size());
  }
  Grid image(Shape{channels, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        image.at(c, y, x) = static_cast<double>(bytes[start + (y * width + x) * channels + c]) / 255.0;
  return image;
}

std::vector<std::uint8_t> encode_netpbm(const Grid& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ShapeError("netpbm encoding needs 1 or 3 channels, got " + image.shape().str());
  }
  for (double v : image.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("netpbm encoding: values must lie in [0, 1]");
  }
  const std::string header = std::string(image.channels() == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.size());
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < image.channels(); ++c) out.push_back(quantize(image.at(c, y, x)));
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Grid read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_netpbm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_image(const Grid& image, const std::filesystem::path& path) {
  write_file_bytes(path, encode_netpbm(image));
}

}  // namespace saldist
