// PNG io via OpenCV. Tensors are (3,H,W), RGB order, values in [0,1].
// 8-bit files scale by 1/255, 16-bit by 1/65535. Values are clamped to [0,1]
// only here, at save time; in-memory tensors may exceed the range.
#pragma once

#include <filesystem>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hcd/common.hpp"
#include "hcd/image.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

inline Tensor load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image: " + path);
  if (m.channels() == 4) throw FormatError("alpha channel not supported: " + path);
  if (m.channels() != 1 && m.channels() != 3)
    throw FormatError("unsupported channel count " + std::to_string(m.channels()) + ": " + path);

  double scale;
  if (m.depth() == CV_8U)
    scale = 1.0 / 255.0;
  else if (m.depth() == CV_16U)
    scale = 1.0 / 65535.0;
  else
    throw FormatError("unsupported bit depth: " + path);

  const int h = m.rows, w = m.cols;
  Tensor out = Tensor::chw(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double r, g, b;
      if (m.channels() == 1) {
        double v = (m.depth() == CV_8U) ? m.at<uchar>(y, x) : m.at<uint16_t>(y, x);
        r = g = b = v;
      } else if (m.depth() == CV_8U) {
        auto px = m.at<cv::Vec3b>(y, x);  // OpenCV stores BGR
        b = px[0], g = px[1], r = px[2];
      } else {
        auto px = m.at<cv::Vec3w>(y, x);
        b = px[0], g = px[1], r = px[2];
      }
      out.at(0, y, x) = r * scale;
      out.at(1, y, x) = g * scale;
      out.at(2, y, x) = b * scale;
    }
  }
  return out;
}

inline void save_image(const Tensor& img, const std::string& path) {
  ensure_chw(img, "save_image");
  require(img.channels() == 3, "save_image: expected 3 channels, got " + img.shape_str());
  ensure_finite(img, "save_image");
  const int h = img.height(), w = img.width();
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto to8 = [](double v) {
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        return static_cast<uchar>(std::lround(v * 255.0));
      };
      m.at<cv::Vec3b>(y, x) =
          cv::Vec3b(to8(img.at(2, y, x)), to8(img.at(1, y, x)), to8(img.at(0, y, x)));
    }
  }
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  if (!cv::imwrite(path, m)) throw IoError("cannot write image: " + path);
}

}  // namespace hcd
