#include "selfcolor/imageio.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace selfcolor {

static std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                              std::istreambuf_iterator<char>());
}

static void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

// ---------------------------------------------------------------------------
// PNM (P5 / P6)

static size_t pnm_header(const std::vector<uint8_t>& b, const std::string& path,
                         const char* magic, int* w, int* h) {
  size_t pos = 0;
  auto skip_ws = [&]() {
    for (;;) {
      while (pos < b.size() && (b[pos] == ' ' || b[pos] == '\t' || b[pos] == '\n' ||
                                b[pos] == '\r'))
        ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() {
    skip_ws();
    int v = 0;
    bool any = false;
    while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
      v = v * 10 + (b[pos] - '0');
      ++pos;
      any = true;
    }
    if (!any) throw std::runtime_error("malformed PNM header: " + path);
    return v;
  };
  if (b.size() < 2 || b[0] != static_cast<uint8_t>(magic[0]) ||
      b[1] != static_cast<uint8_t>(magic[1]))
    throw std::runtime_error(std::string("not a ") + magic + " file: " + path);
  pos = 2;
  *w = read_int();
  *h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw std::runtime_error("only maxval 255 PNM supported: " + path);
  ++pos;  // single whitespace before raster
  return pos;
}

Image read_ppm(const std::string& path) {
  auto bytes = read_file(path);
  int w = 0, h = 0;
  size_t pos = pnm_header(bytes, path, "P6", &w, &h);
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (bytes.size() - pos < need) throw std::runtime_error("truncated PPM: " + path);
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = bytes[pos + (static_cast<size_t>(y) * w + x) * 3 + c] / 255.f;
  return img;
}

void write_ppm(const std::string& path, const Image& rgb) {
  check(rgb.channels == 3, "write_ppm: expected 3 channels");
  std::string header =
      "P6\n" + std::to_string(rgb.width) + " " + std::to_string(rgb.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<size_t>(rgb.width) * rgb.height * 3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = rgb.at(c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        out.push_back(static_cast<uint8_t>(v * 255.f + 0.5f));
      }
  write_file(path, out);
}

std::vector<uint8_t> read_mask_pgm(const std::string& path, int* h, int* w) {
  auto bytes = read_file(path);
  size_t pos = pnm_header(bytes, path, "P5", w, h);
  const size_t need = static_cast<size_t>(*w) * *h;
  if (bytes.size() - pos < need) throw std::runtime_error("truncated PGM: " + path);
  return std::vector<uint8_t>(bytes.begin() + pos, bytes.begin() + pos + need);
}

void write_mask_pgm(const std::string& path, const std::vector<uint8_t>& mask, int h,
                    int w) {
  check(static_cast<size_t>(h) * w == mask.size(), "write_mask_pgm: size mismatch");
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), mask.begin(), mask.end());
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// PNG

static uint32_t be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

static void push_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

static const uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

static int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

Image read_png(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path);

  uint32_t w = 0, h = 0;
  int bit_depth = 0, color_type = -1;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("truncated PNG: " + path);
    const std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    const uint8_t* data = &bytes[pos + 8];
    if (type == "IHDR") {
      w = be32(data);
      h = be32(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw std::runtime_error("interlaced PNG unsupported: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (w == 0 || h == 0) throw std::runtime_error("PNG missing IHDR: " + path);
  if (bit_depth != 8) throw std::runtime_error("only 8-bit PNG supported: " + path);
  int nch;
  switch (color_type) {
    case 0: nch = 1; break;
    case 2: nch = 3; break;
    case 6: nch = 4; break;
    default:
      throw std::runtime_error("unsupported PNG color type: " + path);
  }

  const size_t rowbytes = static_cast<size_t>(w) * nch;
  std::vector<uint8_t> raw((rowbytes + 1) * h);
  uLongf raw_len = raw.size();
  if (uncompress(raw.data(), &raw_len, idat.data(), idat.size()) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("PNG inflate failed: " + path);

  // Undo per-row filters in place.
  std::vector<uint8_t> pix(rowbytes * h);
  for (uint32_t y = 0; y < h; ++y) {
    const uint8_t filter = raw[y * (rowbytes + 1)];
    const uint8_t* src = &raw[y * (rowbytes + 1) + 1];
    uint8_t* dst = &pix[y * rowbytes];
    const uint8_t* up = y > 0 ? &pix[(y - 1) * rowbytes] : nullptr;
    for (size_t i = 0; i < rowbytes; ++i) {
      const int a = i >= static_cast<size_t>(nch) ? dst[i - nch] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<size_t>(nch)) ? up[i - nch] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw std::runtime_error("bad PNG filter byte: " + path);
      }
      dst[i] = static_cast<uint8_t>(v);
    }
  }

  // Grayscale replicates to RGB; alpha is dropped.
  Image img(3, static_cast<int>(h), static_cast<int>(w));
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x) {
      const uint8_t* p = &pix[y * rowbytes + static_cast<size_t>(x) * nch];
      const float r = p[0] / 255.f;
      const float g = nch >= 3 ? p[1] / 255.f : r;
      const float b = nch >= 3 ? p[2] / 255.f : r;
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

void write_png(const std::string& path, const Image& img) {
  check(img.channels == 1 || img.channels == 3, "write_png: expected 1 or 3 channels");
  const int nch = img.channels;
  const size_t rowbytes = static_cast<size_t>(img.width) * nch;
  std::vector<uint8_t> raw((rowbytes + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw[y * (rowbytes + 1)] = 0;  // filter: none
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < nch; ++c) {
        float v = img.at(c, y, x);
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        raw[y * (rowbytes + 1) + 1 + static_cast<size_t>(x) * nch + c] =
            static_cast<uint8_t>(v * 255.f + 0.5f);
      }
  }
  uLongf comp_len = compressBound(raw.size());
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), raw.size(), 6) != Z_OK)
    throw std::runtime_error("PNG deflate failed: " + path);
  comp.resize(comp_len);

  std::vector<uint8_t> out(kPngSig, kPngSig + 8);
  auto chunk = [&out](const char* type, const std::vector<uint8_t>& data) {
    push_be32(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    push_be32(out, crc);
  };
  std::vector<uint8_t> ihdr;
  push_be32(ihdr, static_cast<uint32_t>(img.width));
  push_be32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                       // bit depth
  ihdr.push_back(nch == 1 ? 0 : 2);        // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);                       // no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});
  write_file(path, out);
}

Image read_image(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "png" || ext == "PNG") return read_png(path);
  if (ext == "ppm" || ext == "PPM") return read_ppm(path);
  throw std::runtime_error("unsupported image extension: " + path);
}

}  // namespace selfcolor
