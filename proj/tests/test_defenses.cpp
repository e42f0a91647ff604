#include <gtest/gtest.h>

#include <random>

#include "gduap/crafting.hpp"
#include "gduap/defenses.hpp"
#include "support.hpp"

using namespace gduap;
using namespace gduap::defense;

namespace {

TransformSpec spec(Kind k) {
  TransformSpec t;
  t.kind = k;
  return t;
}

Image gradient_image(int h, int w) {
  Image im({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) im[(y * w + x) * 3 + c] = static_cast<float>(4 * x + 3 * y + 20 * c);
  return im;
}

}  // namespace

TEST(Transforms, BitReduceKeepsTopBits) {
  Image im({1, 5, 1});
  im.data = {255, 224, 223.9f, 31, 100};
  auto t = spec(Kind::bit_reduce);
  t.bits = 3;
  const auto out = apply(t, im);
  EXPECT_EQ(out.data, (Buffer<float>{224, 224, 192, 0, 96}));
}

TEST(Transforms, MedianRemovesIsolatedOutlier) {
  Image im({5, 5, 1}, 50.0f);
  im[12] = 255.0f;
  auto t = spec(Kind::median_smooth);
  EXPECT_EQ(apply(t, im).data, Image({5, 5, 1}, 50.0f).data);
  t.window = 1;
  EXPECT_EQ(apply(t, im).data, im.data);
  t.window = 4;
  EXPECT_THROW(apply(t, im), ConfigError);
}

TEST(Transforms, GaussianZeroSigmaIsIdentityAndPreservesConstants) {
  const auto im = gradient_image(8, 8);
  auto t = spec(Kind::gaussian_smooth);
  t.sigma = 0.0;
  EXPECT_EQ(apply(t, im).data, im.data);
  t.sigma = 2.0;
  const Image flat({8, 8, 3}, 77.0f);
  for (float v : apply(t, flat).data) EXPECT_NEAR(v, 77.0f, 1e-4);
}

TEST(Transforms, BilateralPreservesConstants) {
  const Image flat({8, 8, 3}, 130.0f);
  for (float v : apply(spec(Kind::bilateral), flat).data) EXPECT_NEAR(v, 130.0f, 1e-4);
}

TEST(Transforms, JpegHighQualityIsNearLossless) {
  const auto im = gradient_image(16, 16);
  auto t = spec(Kind::jpeg);
  t.quality = 100;
  const auto out = apply(t, im);
  for (std::size_t i = 0; i < im.size(); ++i) EXPECT_NEAR(out[i], im[i], 3.0f);
  t.quality = 10;
  double err = 0;
  const auto lossy = apply(t, im);
  for (std::size_t i = 0; i < im.size(); ++i) err += std::abs(lossy[i] - im[i]);
  EXPECT_GT(err, 0.0);
}

TEST(Transforms, TenCropViews) {
  std::mt19937_64 rng(1);
  const auto x = fixture::random_image({32, 32, 3}, rng);
  const auto full = ten_crop_views(x, 1.0);
  ASSERT_EQ(full.size(), 10u);
  EXPECT_EQ(full[1].data, x.data);
  EXPECT_EQ(full[0].data, img::flip_horizontal(x).data);
  const auto v = ten_crop_views(x, 0.875);
  for (const auto& im : v) EXPECT_EQ(im.shape, x.shape);
  // top-left corner view is the 28x28 crop at (0,0) resized back
  EXPECT_EQ(v[1].data, img::resize_bilinear(img::crop(x, 0, 0, 28, 28), 32, 32).data);
  EXPECT_EQ(v[9].data, img::resize_bilinear(img::crop(x, 2, 2, 28, 28), 32, 32).data);
}

TEST(Transforms, NamesAndParams) {
  EXPECT_EQ(kind_from_string("bit_reduce"), Kind::bit_reduce);
  EXPECT_THROW(kind_from_string("blur"), ConfigError);
  auto t = spec(Kind::bilateral);
  EXPECT_EQ(t.params(), "sigma_spatial=3;sigma_range=30");
  t = spec(Kind::jpeg);
  t.quality = 50;
  EXPECT_EQ(t.name() + ":" + t.params(), "jpeg:quality=50");
  EXPECT_EQ(spec(Kind::none).params(), "");
}

TEST(DefendedEval, NoneTransformMatchesDirectEvaluation) {
  const auto m = ModelAdapter::create("m", VictimSpec{Architecture::small_conv_a, 10, "", 3});
  const auto test = synth::desk10(20, 4);
  const auto base = random_baseline(m.input_shape(), 10.0, 1);
  Perturbation zero{make_image(m.input_shape()), 10.0, {}};
  const auto row = evaluate_defended(m, spec(Kind::none), {{"zero", &zero}, {"baseline", &base}}, test);
  const auto clean = m.forward(test.images());
  std::vector<int> pred;
  for (const auto& c : clean) pred.push_back(c[0]);
  EXPECT_DOUBLE_EQ(row.clean_metric, metrics::top1(pred, test.labels()));
  EXPECT_EQ(row.fooling[0], 0.0);
  EXPECT_DOUBLE_EQ(row.fooling[1], evaluate_fooling(m, test.images(), clean, base.delta));
}

TEST(DefendedEval, TenCropRejectsSegmentation) {
  const auto m = ModelAdapter::create("seg", VictimSpec{Architecture::toy_fcn, 4, "", 3});
  EXPECT_THROW(defended_predict(m, spec(Kind::ten_crop), make_image(m.input_shape())), ContractError);
}

TEST(GridCsv, RoundTrip) {
  DefenseGrid g{{"range", "baseline"}, {}};
  g.rows.push_back({"none", "", 0.98, {0.61234567, 0.01}});
  g.rows.push_back({"bilateral", "sigma_spatial=3;sigma_range=30", 0.9, {0.3, 0.0}});
  const auto csv = to_csv(g);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "transform,params,clean_top1,range,baseline");
  const auto back = parse_grid_csv(csv);
  EXPECT_EQ(back.perturbation_names, g.perturbation_names);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].fooling[0], 0.612346);
  EXPECT_EQ(back.rows[1].params, g.rows[1].params);
  EXPECT_EQ(to_csv(back), csv);
}

TEST(GridCsv, ErrorsNameTheLine) {
  const std::string h = "transform,params,clean_top1,a\n";
  auto message = [](const std::string& text) {
    try {
      parse_grid_csv(text);
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("transform,param,clean_top1\n").find("line 1"), std::string::npos);
  EXPECT_NE(message(h + "none,,1,0.5\nfoo,,1,0.5\n").find("line 3"), std::string::npos);
  EXPECT_NE(message(h + "none,,1.5,0.5\n").find("outside"), std::string::npos);
  EXPECT_NE(message(h + "none,,1\n").find("cells"), std::string::npos);
  EXPECT_NE(message(h + "jpeg,quality,1,0.2\n").find("parameter"), std::string::npos);
  EXPECT_NE(message(h + "none,,x,0.2\n").find("number"), std::string::npos);
  EXPECT_THROW(parse_grid_csv(""), FormatError);
}
