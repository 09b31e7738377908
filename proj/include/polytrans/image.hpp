#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

namespace polytrans {

/// Images are CHW (or NCHW batches) float tensors with values in [-1, 1].
using ImageTensor = torch::Tensor;

/// Reads an 8-bit image from disk, keeping 1 or 3 channels (RGB order).
/// Throws IoError naming the file when it is missing or cannot be decoded.
cv::Mat read_image_u8(const std::filesystem::path& path);

/// Center-crops `raw` to a square, resizes it to target_size x target_size with
/// area averaging and maps [0, 255] linearly onto [-1, 1].
ImageTensor preprocess(const cv::Mat& raw, int target_size);

ImageTensor load_image(const std::filesystem::path& path, int target_size);

/// Inverse of the linear map used by preprocess; rounds and clamps to [0, 255].
cv::Mat to_u8(const ImageTensor& image);

void write_png(const std::filesystem::path& path, const cv::Mat& rgb_or_gray);

/// Sorted list of image files (png/jpg/jpeg/bmp) directly inside `dir`.
std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir);

/// Loads every image in `dir` into an NCHW batch.
ImageTensor load_image_folder(const std::filesystem::path& dir, int target_size,
                              std::vector<std::string>* stems = nullptr);

}  // namespace polytrans
