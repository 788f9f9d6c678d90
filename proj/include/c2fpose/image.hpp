#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "c2fpose/errors.hpp"
#include "c2fpose/pose.hpp"

namespace c2fpose {

/// Raster image with channels in [0,1]; pixels laid out (h*w) x c with the
/// spatial index flattened row-major (row = i*w + j).
template <typename S>
struct Image {
  int h = 0, w = 0, c = 0;
  MatX<S> pixels;

  S at(int i, int j, int ch) const { return pixels(i * w + j, ch); }
  S& at(int i, int j, int ch) { return pixels(i * w + j, ch); }
};

namespace detail {

inline void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in, const std::string& origin) {
  skip_pnm_whitespace(in);
  int v = 0;
  if (!(in >> v)) throw ParseError(origin + ": bad image header");
  return v;
}

}  // namespace detail

/// Binary PPM (P6, maxval 255).
template <typename S>
Image<S> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(path + ": expected P6 image");
  const int w = detail::read_pnm_int(in, path);
  const int h = detail::read_pnm_int(in, path);
  const int maxval = detail::read_pnm_int(in, path);
  if (w < 1 || h < 1) throw ParseError(path + ": bad image dimensions");
  if (maxval != 255) throw ParseError(path + ": only maxval 255 supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw ParseError(path + ": truncated pixel data");
  }
  Image<S> img;
  img.h = h;
  img.w = w;
  img.c = 3;
  img.pixels.resize(Eigen::Index(h) * w, 3);
  for (Eigen::Index p = 0; p < Eigen::Index(h) * w; ++p) {
    for (int ch = 0; ch < 3; ++ch) img.pixels(p, ch) = S(raw[p * 3 + ch]) / S(255);
  }
  return img;
}

template <typename S>
void write_ppm(const std::string& path, const Image<S>& img) {
  if (img.c != 3) throw ConfigError("write_ppm: need 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P6\n" << img.w << ' ' << img.h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.h) * img.w * 3);
  for (Eigen::Index p = 0; p < Eigen::Index(img.h) * img.w; ++p) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(double(img.pixels(p, ch)), 0.0, 1.0);
      raw[p * 3 + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed: " + path);
}

/// Binary PGM (P5) of a single-channel grid with values in [0,1].
template <typename S>
void write_pgm(const std::string& path, const MatX<S>& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P5\n" << grid.cols() << ' ' << grid.rows() << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(grid.size()));
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    for (Eigen::Index j = 0; j < grid.cols(); ++j) {
      const double v = std::clamp(double(grid(i, j)), 0.0, 1.0);
      raw[at++] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed: " + path);
}

/// Binary PGM (P5) back into a grid of values in [0,1].
template <typename S>
MatX<S> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw ParseError(path + ": expected P5 image");
  const int w = detail::read_pnm_int(in, path);
  const int h = detail::read_pnm_int(in, path);
  const int maxval = detail::read_pnm_int(in, path);
  if (w < 1 || h < 1) throw ParseError(path + ": bad image dimensions");
  if (maxval != 255) throw ParseError(path + ": only maxval 255 supported");
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw ParseError(path + ": truncated pixel data");
  }
  MatX<S> grid(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) grid(i, j) = S(raw[std::size_t(i) * w + j]) / S(255);
  }
  return grid;
}

/// Bilinear resample of an h x w grid (pixel-center convention).
template <typename S>
MatX<S> bilinear_resize_grid(const MatX<S>& grid, int oh, int ow) {
  if (oh < 1 || ow < 1) throw ConfigError("bilinear_resize_grid: bad output size");
  const int h = static_cast<int>(grid.rows());
  const int w = static_cast<int>(grid.cols());
  MatX<S> out(oh, ow);
  const double sy = double(h) / oh;
  const double sx = double(w) / ow;
  for (int i = 0; i < oh; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const S wy = S(fy - y0);
    for (int j = 0; j < ow; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const S wx = S(fx - x0);
      const S top = grid(y0, x0) * (S(1) - wx) + grid(y0, x1) * wx;
      const S bot = grid(y1, x0) * (S(1) - wx) + grid(y1, x1) * wx;
      out(i, j) = top * (S(1) - wy) + bot * wy;
    }
  }
  return out;
}

template <typename S>
Image<S> resize(const Image<S>& img, int oh, int ow) {
  Image<S> out;
  out.h = oh;
  out.w = ow;
  out.c = img.c;
  out.pixels.resize(Eigen::Index(oh) * ow, img.c);
  for (int ch = 0; ch < img.c; ++ch) {
    MatX<S> grid(img.h, img.w);
    for (int i = 0; i < img.h; ++i) {
      for (int j = 0; j < img.w; ++j) grid(i, j) = img.pixels(i * img.w + j, ch);
    }
    const MatX<S> rg = bilinear_resize_grid(grid, oh, ow);
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) out.pixels(i * ow + j, ch) = rg(i, j);
    }
  }
  return out;
}

/// Scale so the smaller edge equals `target` (upscales undersized images).
template <typename S>
Image<S> resize_short_edge(const Image<S>& img, int target) {
  const double scale = double(target) / std::min(img.h, img.w);
  const int oh = std::max(target, static_cast<int>(std::lround(img.h * scale)));
  const int ow = std::max(target, static_cast<int>(std::lround(img.w * scale)));
  return resize(img, oh, ow);
}

template <typename S>
Image<S> crop(const Image<S>& img, int top, int left, int size) {
  if (top < 0 || left < 0 || top + size > img.h || left + size > img.w) {
    throw ConfigError("crop: window out of bounds");
  }
  Image<S> out;
  out.h = out.w = size;
  out.c = img.c;
  out.pixels.resize(Eigen::Index(size) * size, img.c);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      out.pixels.row(i * size + j) = img.pixels.row((top + i) * img.w + (left + j));
    }
  }
  return out;
}

template <typename S>
Image<S> center_crop(const Image<S>& img, int size) {
  return crop(img, (img.h - size) / 2, (img.w - size) / 2, size);
}

/// Photometric jitter with explicit factors (1.0 = no change); output clamped
/// to [0,1]. Contrast blends toward the image's gray mean, saturation toward
/// the per-pixel luma.
template <typename S>
Image<S> adjust_colors(const Image<S>& img, S brightness, S contrast, S saturation) {
  if (img.c != 3) throw ConfigError("adjust_colors: need 3 channels");
  Image<S> out = img;
  out.pixels *= brightness;
  VecX<S> luma = out.pixels.col(0) * S(0.299) + out.pixels.col(1) * S(0.587) +
                 out.pixels.col(2) * S(0.114);
  for (int ch = 0; ch < 3; ++ch) {
    out.pixels.col(ch) = luma + (out.pixels.col(ch) - luma) * saturation;
  }
  const S gray = (out.pixels.col(0) * S(0.299) + out.pixels.col(1) * S(0.587) +
                  out.pixels.col(2) * S(0.114))
                     .mean();
  out.pixels = ((out.pixels.array() - gray) * contrast + gray)
                   .cwiseMax(S(0))
                   .cwiseMin(S(1))
                   .matrix();
  return out;
}

}  // namespace c2fpose
