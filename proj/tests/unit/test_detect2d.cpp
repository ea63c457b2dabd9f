#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "x2d3d/core/random.hpp"
#include "x2d3d/detect2d/patch.hpp"

namespace x2d3d {
namespace {

void AddBlob(GrayImage& img, double cx, double cy, double sigma, double amplitude) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      img.at(x, y) += amplitude * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma));
}

GrayImage SmoothNoise(int w, int h, std::uint64_t seed, double lo, double hi, double blur = 2.0) {
  Rng rng = make_rng(seed);
  GrayImage img(w, h);
  for (auto& v : img.data) v = uniform(rng, 0, 1);
  img = gaussian_blur(img, blur);
  const auto [mn, mx] = std::minmax_element(img.data.begin(), img.data.end());
  const double a = *mn, b = *mx;
  for (auto& v : img.data) v = lo + (hi - lo) * (v - a) / (b - a);
  return img;
}

double Ncc(const GrayImage& a, const GrayImage& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) ma += a.data[i], mb += b.data[i];
  ma /= static_cast<double>(a.data.size());
  mb /= static_cast<double>(b.data.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    sab += (a.data[i] - ma) * (b.data[i] - mb);
    saa += (a.data[i] - ma) * (a.data[i] - ma);
    sbb += (b.data[i] - mb) * (b.data[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Image, BlurKeepsConstantsAndMass) {
  const GrayImage c(40, 30, 0.25);
  for (double v : gaussian_blur(c, 3.0).data) EXPECT_NEAR(v, 0.25, 1e-12);
  GrayImage impulse(101, 101);
  impulse.at(50, 50) = 1.0;
  const GrayImage b = gaussian_blur(impulse, 2.0);
  double sum = 0;
  for (double v : b.data) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(b.at(52, 50) / b.at(50, 50), std::exp(-0.5), 1e-3);
}

TEST(Image, PgmRoundTrip) {
  GrayImage img(17, 9);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 256) / 255.0;
  const auto path = std::filesystem::temp_directory_path() / "x2d3d_test.pgm";
  io::write_pgm(path, img);
  const GrayImage back = io::read_pgm(path);
  ASSERT_EQ(back.width, 17);
  ASSERT_EQ(back.height, 9);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-12);
  std::filesystem::remove(path);
}

TEST(Dog, ConstantImageHasNoKeypoints) {
  EXPECT_TRUE(detect_dog_keypoints(GrayImage(128, 96, 0.4)).empty());
}

TEST(Dog, TooSmall) {
  try {
    detect_dog_keypoints(GrayImage(63, 200));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kImageTooSmall);
  }
}

TEST(Dog, SingleBlobAtCenterWithItsScale) {
  GrayImage img(128, 128);
  AddBlob(img, 64, 64, 4.0, 1.0);
  const auto kps = detect_dog_keypoints(img);
  ASSERT_FALSE(kps.empty());
  const auto best = *std::max_element(kps.begin(), kps.end(), [](const auto& a, const auto& b) { return a.response < b.response; });
  EXPECT_LE((best.position - Pixel2(64, 64)).norm(), 1.0);
  EXPECT_NEAR(best.scale, 4.0, 1.0);
}

TEST(Dog, TwoBlobsTwoKeypoints) {
  GrayImage img(256, 128);
  AddBlob(img, 60, 64, 4.0, 0.8);
  AddBlob(img, 190, 70, 5.0, 0.8);
  const auto kps = nms_keypoints_2d(detect_dog_keypoints(img), 32.0);
  ASSERT_EQ(kps.size(), 2u);
  const Pixel2 a = kps[0].position.x() < kps[1].position.x() ? kps[0].position : kps[1].position;
  const Pixel2 b = kps[0].position.x() < kps[1].position.x() ? kps[1].position : kps[0].position;
  EXPECT_LE((a - Pixel2(60, 64)).norm(), 1.0);
  EXPECT_LE((b - Pixel2(190, 70)).norm(), 1.0);
}

TEST(Dog, IntensityShiftInvariance) {
  const GrayImage img = SmoothNoise(160, 120, 3, 0.05, 0.65, 1.0);
  GrayImage shifted = img;
  for (auto& v : shifted.data) v = std::clamp(v + 0.3, 0.0, 1.0);
  const auto a = detect_dog_keypoints(img), b = detect_dog_keypoints(shifted);
  ASSERT_FALSE(a.empty());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR((a[i].position - b[i].position).norm(), 0.0, 1e-9);
    EXPECT_NEAR(a[i].scale, b[i].scale, 1e-9);
    EXPECT_NEAR(a[i].response, b[i].response, 1e-9);
  }
}

TEST(Dog, KeypointsInsideImage) {
  const GrayImage img = SmoothNoise(200, 150, 4, 0.0, 1.0);
  for (const auto& k : detect_dog_keypoints(img)) {
    EXPECT_GT(k.scale, 0.0);
    EXPECT_GE(k.position.x(), 0.0);
    EXPECT_GE(k.position.y(), 0.0);
    EXPECT_LE(k.position.x(), 199.0);
    EXPECT_LE(k.position.y(), 149.0);
  }
}

std::vector<Keypoint2D> Kps2(std::initializer_list<std::pair<Pixel2, double>> items) {
  std::vector<Keypoint2D> out;
  for (const auto& [p, r] : items) out.push_back({p, 1.0, r});
  return out;
}

TEST(Nms2d, Examples) {
  auto kept = nms_keypoints_2d(Kps2({{{0, 0}, 0.1}, {{20, 0}, 0.2}}), 32);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].response, 0.2);
  EXPECT_EQ(nms_keypoints_2d(Kps2({{{0, 0}, 0.1}, {{40, 0}, 0.2}}), 32).size(), 2u);
  EXPECT_TRUE(nms_keypoints_2d({}, 32).empty());
  kept = nms_keypoints_2d(Kps2({{{5, 5}, 0.1}, {{5, 15}, 0.1}}), 32);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].position.y(), 5.0);
}

TEST(Nms2d, MaximalIndependentSet) {
  Rng rng = make_rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Keypoint2D> kps;
    for (int i = 0; i < 200; ++i) kps.push_back({{uniform(rng, 0, 640), uniform(rng, 0, 480)}, 1.0, uniform(rng, 0, 1)});
    const auto kept = nms_keypoints_2d(kps, 32);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_GT((kept[i].position - kept[j].position).norm(), 32.0);
    for (const auto& k : kps)
      EXPECT_TRUE(std::any_of(kept.begin(), kept.end(), [&](const auto& q) { return (q.position - k.position).norm() <= 32.0; }));
  }
}

TEST(Patch, Examples) {
  const GrayImage img = SmoothNoise(512, 512, 5, 0, 1);
  Keypoint2D kp{{255.5, 255.5}, 5.0, 1.0};
  auto r = extract_patch(img, kp);
  ASSERT_TRUE(std::holds_alternative<PatchRejected>(r));
  EXPECT_EQ(std::get<PatchRejected>(r).reason, PatchRejectReason::kScaleTooLarge);

  kp.scale = 1.0;
  r = extract_patch(img, kp);
  ASSERT_TRUE(std::holds_alternative<GrayImage>(r));
  EXPECT_EQ(std::get<GrayImage>(r).width, 256);
  EXPECT_EQ(std::get<GrayImage>(r).height, 256);
  // Window pixels line up with image pixels for a half-integer center.
  EXPECT_DOUBLE_EQ(std::get<GrayImage>(r).at(0, 0), img.at(128, 128));

  kp.position = {10, 255};
  r = extract_patch(img, kp);
  ASSERT_TRUE(std::holds_alternative<PatchRejected>(r));
  EXPECT_EQ(std::get<PatchRejected>(r).reason, PatchRejectReason::kOutOfBounds);

  EXPECT_EQ(window_side(2.0, 256), 128);
  EXPECT_EQ(window_side(0.3, 256), 256);
  EXPECT_EQ(window_side(3.0, 256), 85);
  EXPECT_THROW(extract_patch(img, kp, PatchParams{255, 4.0, 128}), Error);
}

TEST(Patch, PreprocessExamples) {
  const Patch flat = preprocess_patch(GrayImage(64, 64, 0.5));
  ASSERT_EQ(flat.pixels.width, 128);
  for (double v : flat.pixels.data) EXPECT_EQ(v, 0.0);

  GrayImage checker(256, 256);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) checker.at(x, y) = ((x / 8 + y / 8) % 2) ? 1.0 : 0.0;
  const Patch c = preprocess_patch(checker);
  ASSERT_EQ(c.pixels.width, 128);
  ASSERT_EQ(c.pixels.height, 128);
  double mean = 0;
  for (double v : c.pixels.data) mean += v;
  EXPECT_LE(std::abs(mean / 16384.0), 1e-6);

  const GrayImage raw = SmoothNoise(128, 128, 6, 0, 1);
  double raw_mean = 0;
  for (double v : raw.data) raw_mean += v / 16384.0;
  const Patch same = preprocess_patch(raw);
  for (std::size_t i = 0; i < raw.data.size(); ++i) EXPECT_NEAR(same.pixels.data[i], raw.data[i] - raw_mean, 1e-12);

  EXPECT_THROW(preprocess_patch(GrayImage(7, 7)), Error);
  EXPECT_THROW(preprocess_patch(GrayImage(16, 20)), Error);
}

TEST(Patch, EveryEmittedPatchIsZeroMean128) {
  const GrayImage img = SmoothNoise(320, 240, 7, 0, 1);
  int emitted = 0;
  for (const auto& kp : detect_dog_keypoints(img)) {
    const auto r = extract_patch(img, kp);
    if (!std::holds_alternative<GrayImage>(r)) continue;
    const Patch p = preprocess_patch(std::get<GrayImage>(r), kp);
    ASSERT_EQ(p.pixels.width, kPatchSide);
    ASSERT_EQ(p.pixels.height, kPatchSide);
    double mean = 0;
    for (double v : p.pixels.data) mean += v;
    EXPECT_LE(std::abs(mean / (kPatchSide * kPatchSide)), 1e-6);
    ++emitted;
  }
  EXPECT_GT(emitted, 0);
}

// Scale s in the image and scale 2s in its 2x upsampling. On content that is
// locally affine over the window the two patches agree.
TEST(Patch, ScaleConsistencyOnSmoothContent) {
  GrayImage img(400, 400);
  for (int y = 0; y < 400; ++y)
    for (int x = 0; x < 400; ++x) img.at(x, y) = 0.2 + 0.001 * x + 0.0005 * y;
  const GrayImage up = resize_bilinear(img, 799, 799);  // align-corners: x' = 2x
  for (double s : {1.0, 1.5, 2.0}) {
    const auto a = extract_patch(img, {{200, 180}, s, 1.0});
    const auto b = extract_patch(up, {{400, 360}, 2 * s, 1.0});
    ASSERT_TRUE(std::holds_alternative<GrayImage>(a));
    ASSERT_TRUE(std::holds_alternative<GrayImage>(b));
    const Patch pa = preprocess_patch(std::get<GrayImage>(a));
    const Patch pb = preprocess_patch(std::get<GrayImage>(b));
    EXPECT_GE(Ncc(pa.pixels, pb.pixels), 0.95) << "scale " << s;
  }
}

}  // namespace
}  // namespace x2d3d
