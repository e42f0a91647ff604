#pragma once

// Pixel-domain operations on HWC float images in [0,255]. Shared by the
// range-prior augmentations and the input-transformation defenses.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "gduap/errors.hpp"
#include "gduap/tensor.hpp"

namespace gduap::img {

inline float at_clamped(const Image& im, int y, int x, int c) {
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  y = std::clamp(y, 0, H - 1);
  x = std::clamp(x, 0, W - 1);
  return im[(static_cast<std::size_t>(y) * W + x) * C + c];
}

inline Image clamp_pixels(Image im) {
  for (auto& v : im.data) v = std::clamp(v, 0.0f, 255.0f);
  return im;
}

inline Image crop(const Image& im, int y0, int x0, int h, int w) {
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  if (y0 < 0 || x0 < 0 || y0 + h > H || x0 + w > W) throw InvalidInput("crop window out of bounds");
  Image out({h, w, C});
  for (int y = 0; y < h; ++y)
    std::copy_n(im.data.begin() + ((static_cast<std::ptrdiff_t>(y0 + y) * W + x0) * C), w * C,
                out.data.begin() + static_cast<std::ptrdiff_t>(y) * w * C);
  return out;
}

inline Image flip_horizontal(const Image& im) {
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  Image out(im.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) out[(y * W + x) * C + c] = im[(y * W + (W - 1 - x)) * C + c];
  return out;
}

// Half-pixel-centre bilinear resize.
inline Image resize_bilinear(const Image& im, int h, int w) {
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  Image out({h, w, C});
  for (int y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) * H / h - 0.5, 0.0, H - 1.0);
    const int y0 = static_cast<int>(sy);
    const double fy = sy - y0;
    for (int x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) * W / w - 0.5, 0.0, W - 1.0);
      const int x0 = static_cast<int>(sx);
      const double fx = sx - x0;
      for (int c = 0; c < C; ++c) {
        const double v = (1 - fy) * ((1 - fx) * at_clamped(im, y0, x0, c) + fx * at_clamped(im, y0, x0 + 1, c)) +
                         fy * ((1 - fx) * at_clamped(im, y0 + 1, x0, c) + fx * at_clamped(im, y0 + 1, x0 + 1, c));
        out[(y * w + x) * C + c] = static_cast<float>(v);
      }
    }
  }
  return out;
}

// Rotation about the image centre, bilinear, edge replication.
inline Image rotate(const Image& im, double degrees) {
  if (degrees == 0.0) return im;
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  const double a = degrees * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  Image out(im.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      // inverse map destination -> source
      const double dy = y - cy, dx = x - cx;
      const double sx = std::clamp(ca * dx + sa * dy + cx, 0.0, W - 1.0);
      const double sy = std::clamp(-sa * dx + ca * dy + cy, 0.0, H - 1.0);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < C; ++c) {
        const double v = (1 - fy) * ((1 - fx) * at_clamped(im, y0, x0, c) + fx * at_clamped(im, y0, x0 + 1, c)) +
                         fy * ((1 - fx) * at_clamped(im, y0 + 1, x0, c) + fx * at_clamped(im, y0 + 1, x0 + 1, c));
        out[(y * W + x) * C + c] = static_cast<float>(v);
      }
    }
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = sigma > 0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0;
  std::vector<double> k(2 * r + 1, 1.0);
  if (r == 0) return k;
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with edge replication. Radius is ceil(3 sigma);
// sigma 0 is the identity.
inline Image gaussian_blur(const Image& im, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  if (r == 0) return im;
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  Image tmp(im.shape), out(im.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * at_clamped(im, y, x + i, c);
        tmp[(y * W + x) * C + c] = static_cast<float>(s);
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * at_clamped(tmp, y + i, x, c);
        out[(y * W + x) * C + c] = static_cast<float>(s);
      }
  return out;
}

inline Image median_filter(const Image& im, int k) {
  if (k < 1 || k % 2 == 0) throw ConfigError("median window must be odd and >= 1");
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2], r = k / 2;
  Image out(im.shape);
  std::vector<float> win(static_cast<std::size_t>(k) * k);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        std::size_t n = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) win[n++] = at_clamped(im, y + dy, x + dx, c);
        std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(n / 2), win.end());
        out[(y * W + x) * C + c] = win[n / 2];
      }
  return out;
}

// Bilateral filter with a joint (all-channel) range kernel. Window radius is
// ceil(2 sigma_spatial).
inline Image bilateral_filter(const Image& im, double sigma_spatial, double sigma_range) {
  if (sigma_spatial <= 0 || sigma_range <= 0) throw ConfigError("bilateral sigmas must be positive");
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  const int r = static_cast<int>(std::ceil(2.0 * sigma_spatial));
  Image out(im.shape);
  std::vector<double> acc(C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double wsum = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          double d2 = 0;
          for (int c = 0; c < C; ++c) {
            const double d = at_clamped(im, y + dy, x + dx, c) - at_clamped(im, y, x, c);
            d2 += d * d;
          }
          const double w = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma_spatial * sigma_spatial) -
                                    0.5 * d2 / (sigma_range * sigma_range));
          wsum += w;
          for (int c = 0; c < C; ++c) acc[c] += w * at_clamped(im, y + dy, x + dx, c);
        }
      for (int c = 0; c < C; ++c) out[(y * W + x) * C + c] = static_cast<float>(acc[c] / wsum);
    }
  return out;
}

// Keeps the top `bits` bits of each pixel: floor(x / 2^(8-bits)) * 2^(8-bits).
inline Image bit_reduce(const Image& im, int bits) {
  if (bits < 1 || bits > 7) throw ConfigError("bit depth must be in [1,7]");
  const float step = static_cast<float>(1 << (8 - bits));
  Image out(im.shape);
  for (std::size_t i = 0; i < im.size(); ++i)
    out[i] = std::floor(std::clamp(im[i], 0.0f, 255.0f) / step) * step;
  return out;
}

// 8-bit conversion used before any codec: round half away from zero, clamp.
inline cv::Mat to_mat_u8(const Image& im) {
  const int H = im.shape[0], W = im.shape[1], C = im.shape[2];
  if (C != 1 && C != 3) throw InvalidInput("only 1- or 3-channel images can be encoded");
  cv::Mat m(H, W, C == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < H; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        // OpenCV stores BGR
        const int src_c = C == 3 ? 2 - c : c;
        row[x * C + c] = static_cast<unsigned char>(
            std::lround(std::clamp(im[(y * W + x) * C + src_c], 0.0f, 255.0f)));
      }
  }
  return m;
}

inline Image from_mat_u8(const cv::Mat& m) {
  if (m.depth() != CV_8U || (m.channels() != 1 && m.channels() != 3))
    throw IngestionError("expected an 8-bit 1- or 3-channel image");
  const int H = m.rows, W = m.cols, C = m.channels();
  Image out({H, W, C});
  for (int y = 0; y < H; ++y) {
    const auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) out[(y * W + x) * C + (C == 3 ? 2 - c : c)] = row[x * C + c];
  }
  return out;
}

// Baseline JPEG encode + decode at the given quality (libjpeg through OpenCV).
inline Image jpeg_roundtrip(const Image& im, int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must be in [1,100]");
  std::vector<unsigned char> buf;
  if (!cv::imencode(".jpg", to_mat_u8(im), buf, {cv::IMWRITE_JPEG_QUALITY, quality}))
    throw Error("jpeg encode failed");
  cv::Mat dec = cv::imdecode(buf, im.shape[2] == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (dec.empty()) throw Error("jpeg decode failed");
  return from_mat_u8(dec);
}

}  // namespace gduap::img
