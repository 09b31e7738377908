#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <random>

#include "polytrans/errors.hpp"
#include "polytrans/image.hpp"

using namespace polytrans;
namespace fs = std::filesystem;

namespace {

cv::Mat random_u8(int rows, int cols, int channels, unsigned seed) {
  std::mt19937 rng(seed);
  cv::Mat m(rows, cols, channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int i = 0; i < rows * cols * channels; ++i) m.data[i] = static_cast<unsigned char>(rng() % 256);
  return m;
}

// Exact box integration of the cropped square onto a size x size grid.
double area_oracle(const cv::Mat& m, int channel, int y, int x, int size) {
  const int side = std::min(m.rows, m.cols);
  const int oy = (m.rows - side) / 2, ox = (m.cols - side) / 2;
  const double scale = static_cast<double>(side) / size;
  auto overlap = [](double a0, double a1, int p) { return std::max(0.0, std::min(a1, p + 1.0) - std::max(a0, double(p))); };
  double sum = 0, weight = 0;
  for (int sy = 0; sy < side; ++sy) {
    const double wy = overlap(y * scale, (y + 1) * scale, sy);
    if (wy == 0) continue;
    for (int sx = 0; sx < side; ++sx) {
      const double wx = overlap(x * scale, (x + 1) * scale, sx);
      if (wx == 0) continue;
      sum += wy * wx * m.data[((oy + sy) * m.cols + (ox + sx)) * m.channels() + channel];
      weight += wy * wx;
    }
  }
  return sum / weight / 127.5 - 1.0;
}

}  // namespace

TEST_CASE("preprocess matches an independent crop and area average") {
  struct Case {
    int rows, cols, channels, size;
  };
  for (const auto& c : {Case{48, 64, 3, 24}, Case{48, 64, 3, 16}, Case{40, 40, 1, 32}, Case{50, 45, 3, 18}, Case{8, 8, 3, 8}}) {
    CAPTURE(c.rows);
    CAPTURE(c.size);
    const auto m = random_u8(c.rows, c.cols, c.channels, static_cast<unsigned>(c.rows * 7 + c.size));
    const auto t = preprocess(m, c.size).to(torch::kFloat64);
    REQUIRE(t.sizes().vec() == std::vector<std::int64_t>{c.channels, c.size, c.size});
    const auto acc = t.accessor<double, 3>();
    double worst = 0;
    for (int ch = 0; ch < c.channels; ++ch) {
      for (int y = 0; y < c.size; ++y) {
        for (int x = 0; x < c.size; ++x) worst = std::max(worst, std::abs(acc[ch][y][x] - area_oracle(m, ch, y, x, c.size)));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("value mapping endpoints") {
  cv::Mat black(4, 4, CV_8UC3, cv::Scalar::all(0)), white(4, 4, CV_8UC3, cv::Scalar::all(255));
  CHECK(preprocess(black, 4).min().item<float>() == doctest::Approx(-1.0));
  CHECK(preprocess(white, 4).max().item<float>() == doctest::Approx(1.0));
  const auto back = to_u8(preprocess(random_u8(6, 6, 3, 1), 6));
  CHECK(cv::norm(back, random_u8(6, 6, 3, 1), cv::NORM_INF) == 0);
}

TEST_CASE("files are read as RGB and bad paths name the file") {
  const auto dir = fs::temp_directory_path() / "polytrans_image_test";
  fs::create_directories(dir);
  cv::Mat rgb(2, 2, CV_8UC3, cv::Scalar(255, 0, 0));  // red in RGB order
  write_png(dir / "red.png", rgb);
  const auto t = load_image(dir / "red.png", 2);
  CHECK(t[0].mean().item<float>() == doctest::Approx(1.0));
  CHECK(t[2].mean().item<float>() == doctest::Approx(-1.0));
  try {
    load_image(dir / "missing.png", 2);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("missing.png") != std::string::npos);
  }
  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(load_image(dir / "junk.png", 2), IoError);
  fs::remove(dir / "junk.png");
  CHECK(list_image_files(dir).size() == 1);
  CHECK(load_image_folder(dir, 2).size(0) == 1);
  fs::remove_all(dir);
}

TEST_CASE("png writing is byte-stable") {
  const auto dir = fs::temp_directory_path() / "polytrans_png_test";
  fs::create_directories(dir);
  const auto img = random_u8(9, 9, 3, 5);
  write_png(dir / "a.png", img);
  write_png(dir / "b.png", img);
  std::ifstream a(dir / "a.png", std::ios::binary), b(dir / "b.png", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  fs::remove_all(dir);
}
