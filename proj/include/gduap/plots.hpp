#pragma once

// Minimal static PNG charts rendered with OpenCV.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gduap/errors.hpp"

namespace gduap::plot {

struct Frame {
  int width = 640, height = 420;
  int left = 70, right = 20, top = 40, bottom = 70;
};

namespace detail {

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Axes {
  Frame f;
  double x0, x1, y0, y1;
  cv::Point map(double x, double y) const {
    const double px = f.left + (x - x0) / (x1 - x0) * (f.width - f.left - f.right);
    const double py = f.height - f.bottom - (y - y0) / (y1 - y0) * (f.height - f.top - f.bottom);
    return {static_cast<int>(std::lround(px)), static_cast<int>(std::lround(py))};
  }
};

inline std::pair<double, double> padded(double lo, double hi) {
  if (lo == hi) return {lo - 1, hi + 1};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline cv::Mat canvas(const Axes& ax, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      bool numeric_x) {
  const auto& f = ax.f;
  cv::Mat img(f.height, f.width, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar ink(40, 40, 40), grid(225, 225, 225);
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  for (int i = 0; i <= 4; ++i) {
    const double y = ax.y0 + (ax.y1 - ax.y0) * i / 4.0;
    const auto p = ax.map(ax.x0, y);
    cv::line(img, {f.left, p.y}, {f.width - f.right, p.y}, grid, 1);
    cv::putText(img, tick(y), {4, p.y + 4}, font, 0.4, ink, 1, cv::LINE_AA);
    if (numeric_x) {
      const double x = ax.x0 + (ax.x1 - ax.x0) * i / 4.0;
      const auto q = ax.map(x, ax.y0);
      cv::putText(img, tick(x), {q.x - 12, f.height - f.bottom + 18}, font, 0.4, ink, 1, cv::LINE_AA);
    }
  }
  cv::rectangle(img, {f.left, f.top}, {f.width - f.right, f.height - f.bottom}, ink, 1);
  cv::putText(img, title, {f.left, 25}, font, 0.55, ink, 1, cv::LINE_AA);
  cv::putText(img, xlabel, {f.width / 2 - 40, f.height - 12}, font, 0.45, ink, 1, cv::LINE_AA);
  cv::putText(img, ylabel, {4, f.top - 8}, font, 0.45, ink, 1, cv::LINE_AA);
  return img;
}

inline void save(const cv::Mat& img, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), img)) throw Error("could not write plot " + path.string());
}

}  // namespace detail

// Values over categorical x positions (e.g. layer ids).
inline void line_plot(const std::vector<std::pair<std::string, double>>& series, const std::string& title,
                      const std::string& ylabel, const std::filesystem::path& path, Frame frame = {}) {
  if (series.empty()) throw ContractError("line plot needs at least one point");
  double lo = series[0].second, hi = lo;
  for (const auto& [_, v] : series) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const auto [y0, y1] = detail::padded(std::min(lo, 0.0), hi);
  detail::Axes ax{frame, -0.5, static_cast<double>(series.size()) - 0.5, y0, y1};
  cv::Mat img = detail::canvas(ax, title, "", ylabel, false);
  const cv::Scalar line(180, 90, 30);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto p = ax.map(static_cast<double>(i), series[i].second);
    if (i > 0) cv::line(img, ax.map(static_cast<double>(i - 1), series[i - 1].second), p, line, 2, cv::LINE_AA);
    cv::circle(img, p, 4, line, cv::FILLED, cv::LINE_AA);
    cv::putText(img, series[i].first, {p.x - 20, frame.height - frame.bottom + 18 + 14 * static_cast<int>(i % 2)},
                cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(40, 40, 40), 1, cv::LINE_AA);
  }
  detail::save(img, path);
}

inline void scatter_plot(const std::vector<std::pair<double, double>>& points, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel, const std::filesystem::path& path,
                         Frame frame = {}) {
  if (points.empty()) throw ContractError("scatter plot needs at least one point");
  double xl = points[0].first, xh = xl, yl = points[0].second, yh = yl;
  for (const auto& [x, y] : points) {
    xl = std::min(xl, x);
    xh = std::max(xh, x);
    yl = std::min(yl, y);
    yh = std::max(yh, y);
  }
  const auto [x0, x1] = detail::padded(xl, xh);
  const auto [y0, y1] = detail::padded(yl, yh);
  detail::Axes ax{frame, x0, x1, y0, y1};
  cv::Mat img = detail::canvas(ax, title, xlabel, ylabel, true);
  for (const auto& [x, y] : points) cv::circle(img, ax.map(x, y), 3, cv::Scalar(30, 90, 200), cv::FILLED, cv::LINE_AA);
  detail::save(img, path);
}

}  // namespace gduap::plot
