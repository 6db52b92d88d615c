// Batch evaluation over a dataset root, JSON/CSV reports, and training-curve
// rendering from metrics CSV files.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hcd/common.hpp"
#include "hcd/dataset.hpp"
#include "hcd/image.hpp"
#include "hcd/metrics.hpp"
#include "hcd/network.hpp"
#include "hcd/tensor.hpp"

namespace hcd {

// Single-image inference: reflect-pad to a multiple of four, run without a
// tape, crop the full-resolution output back to the input size. Unclamped;
// callers clamp for metrics or let save_image clamp for files.
inline Tensor dehaze_image(const Hdn& model, const Tensor& hazy) {
  ensure_chw(hazy, "dehaze_image");
  require(hazy.channels() == 3, "dehaze_image: expected 3 channels");
  const int h = hazy.height(), w = hazy.width();
  const int ph = (4 - h % 4) % 4, pw = (4 - w % 4) % 4;
  Tensor in = (ph || pw) ? pad_reflect(hazy, 0, ph, 0, pw) : hazy;
  NoGradGuard ng;
  auto out = model.forward(in);
  Tensor a1 = out[0].val();
  return (ph || pw) ? crop(a1, 0, 0, h, w) : a1;
}

inline std::array<Tensor, 3> dehaze_image_scales(const Hdn& model, const Tensor& hazy) {
  const int h = hazy.height(), w = hazy.width();
  const int ph = (4 - h % 4) % 4, pw = (4 - w % 4) % 4;
  Tensor in = (ph || pw) ? pad_reflect(hazy, 0, ph, 0, pw) : hazy;
  NoGradGuard ng;
  auto out = model.forward(in);
  auto ceil_div = [](int a, int d) { return (a + d - 1) / d; };
  return {crop(out[0].val(), 0, 0, h, w),
          crop(out[1].val(), 0, 0, ceil_div(h, 2), ceil_div(w, 2)),
          crop(out[2].val(), 0, 0, ceil_div(h, 4), ceil_div(w, 4))};
}

struct EvalRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string config_fingerprint;
  std::string checkpoint;
  std::string mode;
  std::vector<EvalRow> rows;      // sorted by name
  std::vector<std::string> skipped;  // unpaired names

  bool empty() const { return rows.empty(); }
  double mean_psnr() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.psnr_db;
    return s / static_cast<double>(rows.size());
  }
  double mean_ssim() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.ssim;
    return s / static_cast<double>(rows.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
      rows_j.push_back({{"name", r.name}, {"psnr_db", r.psnr_db}, {"ssim", r.ssim}});
    return {{"config_fingerprint", config_fingerprint},
            {"checkpoint", checkpoint},
            {"mode", mode},
            {"rows", rows_j},
            {"mean_psnr_db", rows.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean_psnr())},
            {"mean_ssim", rows.empty() ? nlohmann::json(nullptr) : nlohmann::json(mean_ssim())},
            {"skipped", skipped}};
  }
};

inline EvalReport evaluate_dir(const Hdn& model, const std::string& data_root, PsnrMode mode,
                               const std::string& checkpoint_name,
                               const std::string& fingerprint) {
  PairListing listing = list_pairs(data_root);
  EvalReport rep;
  rep.config_fingerprint = fingerprint;
  rep.checkpoint = checkpoint_name;
  rep.mode = (mode == PsnrMode::Rgb) ? "rgb" : "y-channel";
  rep.skipped = listing.unpaired;
  for (const auto& p : listing.pairs) {
    HazePairRecord rec = load_pair(p);
    Tensor out = clamp01(dehaze_image(model, rec.hazy));
    EvalRow row;
    row.name = rec.name;
    row.psnr_db = psnr(out, rec.clear, mode);
    row.ssim = ssim(out, rec.clear);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

inline void write_eval_report(const EvalReport& rep, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream js(out_dir + "/report.json", std::ios::trunc);
    if (!js) throw IoError("cannot write: " + out_dir + "/report.json");
    js << rep.to_json().dump(2) << "\n";
  }
  std::ofstream csv(out_dir + "/report.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write: " + out_dir + "/report.csv");
  csv << "name,psnr_db,ssim\n";
  char buf[128];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", r.name.c_str(), r.psnr_db, r.ssim);
    csv << buf;
  }
}

// ---- training curves ----

constexpr const char* kMetricsHeader = "step,lr,char,hcl,total,val_psnr,wall_ms";

struct CurveSeries {
  std::string label;
  std::vector<std::pair<double, double>> pts;  // (step, value)
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double parse_csv_number(const std::string& s, const std::string& file, int line_no) {
  try {
    size_t idx = 0;
    double v = std::stod(s, &idx);
    if (idx != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(file + ": line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

// Reads one metrics CSV into (loss, psnr) series. Rows with a total are
// training rows; rows with a val_psnr are validation rows.
inline void read_metrics_csv(const std::string& path, CurveSeries& loss, CurveSeries& psnr_s) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read csv: " + path);
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file (missing header)");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader)
    throw ParseError(path + ": line 1: bad header (expected '" + std::string(kMetricsHeader) + "')");
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 7)
      throw ParseError(path + ": line " + std::to_string(line_no) + ": expected 7 fields, got " +
                       std::to_string(f.size()));
    const double step = parse_csv_number(f[0], path, line_no);
    if (!f[4].empty()) loss.pts.emplace_back(step, parse_csv_number(f[4], path, line_no));
    if (!f[5].empty()) psnr_s.pts.emplace_back(step, parse_csv_number(f[5], path, line_no));
  }
}

inline void render_curve_plot(const std::string& path, const std::string& title,
                              const std::string& y_label,
                              const std::vector<CurveSeries>& series) {
  const int W = 960, H = 600;
  const int ml = 80, mr = 200, mt = 50, mb = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.pts) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad, y1 += ypad;

  auto px = [&](double x) { return ml + static_cast<int>((x - x0) / (x1 - x0) * (W - ml - mr)); };
  auto py = [&](double y) { return H - mb - static_cast<int>((y - y0) / (y1 - y0) * (H - mt - mb)); };

  const cv::Scalar axis(40, 40, 40), grid(225, 225, 225);
  char buf[64];
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    cv::line(img, {px(xv), mt}, {px(xv), H - mb}, grid, 1);
    cv::line(img, {ml, py(yv)}, {W - mr, py(yv)}, grid, 1);
    std::snprintf(buf, sizeof(buf), "%.4g", xv);
    cv::putText(img, buf, {px(xv) - 18, H - mb + 22}, cv::FONT_HERSHEY_SIMPLEX, 0.42, axis, 1,
                cv::LINE_AA);
    std::snprintf(buf, sizeof(buf), "%.4g", yv);
    cv::putText(img, buf, {8, py(yv) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.42, axis, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {ml, mt}, {W - mr, H - mb}, axis, 1);
  cv::putText(img, title, {ml, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.6, axis, 1, cv::LINE_AA);
  cv::putText(img, "step", {(ml + W - mr) / 2 - 18, H - 16}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis,
              1, cv::LINE_AA);
  cv::putText(img, y_label, {8, mt - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1, cv::LINE_AA);

  static const cv::Scalar palette[6] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},
                                        {40, 39, 214},  {189, 103, 148}, {75, 86, 140}};
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const cv::Scalar col = palette[si % 6];
    for (size_t i = 0; i + 1 < s.pts.size(); ++i)
      cv::line(img, {px(s.pts[i].first), py(s.pts[i].second)},
               {px(s.pts[i + 1].first), py(s.pts[i + 1].second)}, col, 2, cv::LINE_AA);
    if (s.pts.size() == 1)
      cv::circle(img, {px(s.pts[0].first), py(s.pts[0].second)}, 3, col, cv::FILLED);
    cv::putText(img, s.label, {W - mr + 10, mt + 20 + static_cast<int>(si) * 22},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, col, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path, img)) throw IoError("cannot write plot: " + path);
}

inline nlohmann::json series_stats(const CurveSeries& s) {
  if (s.pts.empty())
    return {{"label", s.label}, {"count", 0},          {"initial", nullptr},
            {"final", nullptr}, {"min", nullptr},      {"max", nullptr}};
  double mn = 1e300, mx = -1e300;
  for (const auto& [x, y] : s.pts) mn = std::min(mn, y), mx = std::max(mx, y);
  return {{"label", s.label}, {"count", s.pts.size()},      {"initial", s.pts.front().second},
          {"final", s.pts.back().second}, {"min", mn}, {"max", mx}};
}

}  // namespace detail

// Reads one or more metrics CSVs, renders overlaid loss and validation-PSNR
// curves, and writes summary.json with per-series stats. Files with no data
// rows contribute null-field summaries and no plot.
inline nlohmann::json emit_curves(const std::vector<std::string>& csv_paths,
                                  const std::string& out_dir) {
  require(!csv_paths.empty(), "emit_curves: need at least one csv path");
  std::filesystem::create_directories(out_dir);
  std::vector<CurveSeries> losses, psnrs;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& path : csv_paths) {
    const std::string base = std::filesystem::path(path).stem().string();
    files.push_back(base);
    CurveSeries l{"loss:" + base, {}}, p{"psnr:" + base, {}};
    detail::read_metrics_csv(path, l, p);
    losses.push_back(std::move(l));
    psnrs.push_back(std::move(p));
  }
  nlohmann::json series = nlohmann::json::array();
  for (const auto& s : losses) series.push_back(detail::series_stats(s));
  for (const auto& s : psnrs) series.push_back(detail::series_stats(s));

  auto has_data = [](const std::vector<CurveSeries>& v) {
    for (const auto& s : v)
      if (!s.pts.empty()) return true;
    return false;
  };
  if (has_data(losses))
    detail::render_curve_plot(out_dir + "/loss_curve.png", "training loss", "total", losses);
  if (has_data(psnrs))
    detail::render_curve_plot(out_dir + "/psnr_curve.png", "validation psnr", "db", psnrs);

  nlohmann::json summary = {{"files", files}, {"series", series}};
  std::ofstream out(out_dir + "/summary.json", std::ios::trunc);
  if (!out) throw IoError("cannot write: " + out_dir + "/summary.json");
  out << summary.dump(2) << "\n";
  return summary;
}

}  // namespace hcd
