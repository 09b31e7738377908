#include "polytrans/image.hpp"

#include <algorithm>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "polytrans/errors.hpp"

namespace fs = std::filesystem;

namespace polytrans {

cv::Mat read_image_u8(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("image file not found: " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot decode image: " + path.string());
  if (raw.depth() != CV_8U) throw IoError("not an 8-bit image: " + path.string());
  cv::Mat out;
  switch (raw.channels()) {
    case 1: out = raw; break;
    case 3: cv::cvtColor(raw, out, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, out, cv::COLOR_BGRA2RGB); break;
    default: throw IoError("unsupported channel count in " + path.string());
  }
  return out;
}

ImageTensor preprocess(const cv::Mat& raw, int target_size) {
  if (raw.empty() || raw.rows < 1 || raw.cols < 1) throw ContractError("preprocess: empty image");
  if (raw.depth() != CV_8U || (raw.channels() != 1 && raw.channels() != 3)) {
    throw ContractError("preprocess: expected 8-bit image with 1 or 3 channels");
  }
  if (target_size < 1) throw ContractError("preprocess: target_size must be positive");

  const int side = std::min(raw.rows, raw.cols);
  const cv::Rect crop((raw.cols - side) / 2, (raw.rows - side) / 2, side, side);
  cv::Mat square;
  raw(crop).convertTo(square, CV_32F);
  cv::Mat resized;
  if (side == target_size) {
    resized = square;
  } else {
    cv::resize(square, resized, cv::Size(target_size, target_size), 0, 0, cv::INTER_AREA);
  }
  resized = resized.clone();
  const int c = raw.channels();
  auto hwc = torch::from_blob(resized.data, {target_size, target_size, c}, torch::kFloat32);
  return (hwc.permute({2, 0, 1}).contiguous() / 127.5f - 1.0f).clamp(-1.0f, 1.0f);
}

ImageTensor load_image(const fs::path& path, int target_size) {
  return preprocess(read_image_u8(path), target_size);
}

cv::Mat to_u8(const ImageTensor& image) {
  if (image.dim() != 3) throw ContractError("to_u8: expected a CHW tensor");
  const auto c = image.size(0);
  auto hwc = ((image.detach().to(torch::kFloat64) + 1.0) * 127.5)
                 .round()
                 .clamp(0, 255)
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat out(static_cast<int>(image.size(1)), static_cast<int>(image.size(2)),
              c == 1 ? CV_8UC1 : CV_8UC3);
  std::memcpy(out.data, hwc.data_ptr<std::uint8_t>(), static_cast<std::size_t>(hwc.numel()));
  return out;
}

void write_png(const fs::path& path, const cv::Mat& rgb_or_gray) {
  cv::Mat bgr;
  if (rgb_or_gray.channels() == 3) {
    cv::cvtColor(rgb_or_gray, bgr, cv::COLOR_RGB2BGR);
  } else {
    bgr = rgb_or_gray;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Fixed compression settings keep repeated renders byte-identical.
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6, cv::IMWRITE_PNG_STRATEGY,
                                cv::IMWRITE_PNG_STRATEGY_DEFAULT};
  if (!cv::imwrite(path.string(), bgr, params)) throw IoError("cannot write " + path.string());
}

std::vector<fs::path> list_image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() && !entry.is_symlink()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

ImageTensor load_image_folder(const fs::path& dir, int target_size, std::vector<std::string>* stems) {
  const auto files = list_image_files(dir);
  if (files.empty()) throw IoError("no images in " + dir.string());
  std::vector<torch::Tensor> images;
  images.reserve(files.size());
  for (const auto& f : files) {
    images.push_back(load_image(f, target_size));
    if (stems) stems->push_back(f.stem().string());
  }
  return torch::stack(images);
}

}  // namespace polytrans
