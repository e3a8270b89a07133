#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "isplit/gradcam.hpp"
#include "isplit/spearman.hpp"
#include "testutil.hpp"

using namespace isplit;
using namespace isplit::test;

namespace {

// conv(2ch,k3,p1) -> relu -> flatten -> dense(3) on a 4x4 single-channel
// input; the toy net the chain-rule oracle expands by hand.
ModelT<double> toy_net(std::uint64_t seed) {
  return model_to_f64(build_model("c@conv:2k3s1p1,r@relu,f@flatten,d@dense:C", {1, 4, 4}, 3, seed));
}

// Independent Grad-CAM: direct conv, explicit relu mask, weight-row gradient.
TensorD gradcam_oracle(const ModelT<double>& m, const TensorD& image, int c) {
  const TensorD feat = conv_oracle(image, m.params[0][0], m.params[0][1], 1, 1);  // (2,4,4)
  const TensorD& w = m.params[3][0];  // (3, 32)
  const int z = 2, n = 4, mm = 4;
  TensorD grad({z, n, mm});
  for (int k = 0; k < z; ++k)
    for (int i = 0; i < n * mm; ++i) {
      const int flat = k * n * mm + i;
      grad.data[flat] = feat.data[flat] > 0 ? w.data[c * (z * n * mm) + flat] : 0.0;
    }
  TensorD map = TensorD::zeros({n, mm});
  for (int k = 0; k < z; ++k) {
    double alpha = 0;
    for (int i = 0; i < n * mm; ++i) alpha += grad.data[k * n * mm + i];
    alpha /= n * mm;
    for (int i = 0; i < n * mm; ++i) map.data[i] += alpha * feat.data[k * n * mm + i];
  }
  for (auto& v : map.data) v = v > 0 ? v : 0.0;
  return map;
}

Model micro_model(std::uint64_t seed) { return build_model("vgg-micro", {1, 16, 16}, 4, seed); }

}  // namespace

TEST_CASE("alpha is zero under an all-zero classifier tail") {
  Model m = build_model("c@conv:3k3s1p1,f@flatten,d@dense:C", {1, 4, 4}, 2, 3);
  for (auto& v : m.params[2][0].data) v = 0.0f;
  for (auto& v : m.params[2][1].data) v = 0.0f;
  Rng rng(5);
  const auto alpha = gradcam_alpha(m, random_tensor_f({1, 4, 4}, rng), 0, 0);
  REQUIRE(alpha.values.size() == 3);
  for (float a : alpha.values) CHECK(a == 0.0f);
  const auto map = gradcam_map(m, random_tensor_f({1, 4, 4}, rng), 0, 0);
  for (float v : map.map.data) CHECK(v == 0.0f);
}

TEST_CASE("alpha is one under an identity (sum) tail") {
  Model m = build_model("c@conv:2k3s1p1,f@flatten,d@dense:C", {1, 4, 4}, 2, 9);
  for (auto& v : m.params[2][0].data) v = 0.0f;
  for (int i = 0; i < 32; ++i) m.params[2][0].data[i] = 1.0f;  // y_0 = sum(F)
  for (auto& v : m.params[2][1].data) v = 0.0f;
  Rng rng(7);
  const auto alpha = gradcam_alpha(m, random_tensor_f({1, 4, 4}, rng), 0, 0);
  for (float a : alpha.values) CHECK(a == doctest::Approx(1.0f));
}

TEST_CASE("single-channel alpha=1 map equals the non-negative feature map") {
  Model m = build_model("c@conv:1k1s1p0,f@flatten,d@dense:C", {1, 4, 4}, 2, 1);
  m.params[0][0].data[0] = 1.0f;  // conv is identity
  m.params[0][1].data[0] = 0.0f;
  for (int i = 0; i < 16; ++i) m.params[2][0].data[i] = 1.0f;
  for (int i = 16; i < 32; ++i) m.params[2][0].data[i] = 0.0f;
  m.params[2][1].data[0] = m.params[2][1].data[1] = 0.0f;
  Rng rng(2);
  const TensorF img = random_tensor_f({1, 4, 4}, rng, 0.0, 1.0);
  const auto map = gradcam_map(m, img, 0, 0);
  for (int i = 0; i < 16; ++i) CHECK(map.map.data[i] == doctest::Approx(img.data[i]));
}

TEST_CASE("alpha matches finite differences of the class logit") {
  Rng rng(17);
  const ModelT<double> m = toy_net(23);
  const TensorD img = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
  const int c = 1;
  const auto alpha = gradcam_alpha(m, img, c, 0);

  // finite differences on the tail-only function of the conv feature map
  auto tail_logit = [&](const std::vector<TensorD>& leaves) {
    Tape<double> tape;
    TensorId cur = tape.leaf(leaves[0]);
    cur = tape.relu(cur);
    cur = tape.flatten(cur);
    cur = tape.dense(cur, tape.leaf(m.params[3][0]), tape.leaf(m.params[3][1]));
    return tape.value(cur).data[c];
  };
  const TensorD feat = conv_oracle(img, m.params[0][0], m.params[0][1], 1, 1);
  const double step = 1e-5;
  for (int k = 0; k < 2; ++k) {
    double fd_alpha = 0;
    std::vector<TensorD> leaves = {feat};
    for (int i = 0; i < 16; ++i) {
      const double saved = leaves[0].data[k * 16 + i];
      leaves[0].data[k * 16 + i] = saved + step;
      const double up = tail_logit(leaves);
      leaves[0].data[k * 16 + i] = saved - step;
      const double down = tail_logit(leaves);
      leaves[0].data[k * 16 + i] = saved;
      fd_alpha += (up - down) / (2 * step);
    }
    fd_alpha /= 16.0;
    CHECK(grad_rel_err(alpha.values[k], fd_alpha) < 1e-4);
  }
}

TEST_CASE("gradcam_map matches the explicit chain-rule oracle within 1e-10") {
  Rng rng(29);
  for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
    const ModelT<double> m = toy_net(seed);
    const TensorD img = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
    for (int c = 0; c < 3; ++c) {
      const auto got = gradcam_map(m, img, c, 0);
      const TensorD expect = gradcam_oracle(m, img, c);
      REQUIRE(got.map.shape == expect.shape);
      for (std::size_t i = 0; i < expect.data.size(); ++i)
        CHECK(std::abs(got.map.data[i] - expect.data[i]) < 1e-10);
    }
  }
}

TEST_CASE("map rejects layers without a spatial map") {
  const Model m = micro_model(1);
  Rng rng(3);
  const TensorF img = random_tensor_f({1, 16, 16}, rng, 0.0, 1.0);
  CHECK_THROWS_AS(gradcam_map(m, img, 0, 1), UnsupportedLayerError);   // relu
  CHECK_THROWS_AS(gradcam_map(m, img, 0, 13), UnsupportedLayerError);  // dense
  CHECK_THROWS_AS(gradcam_alpha(m, img, 9, 0), ShapeError);            // class out of range
}

TEST_CASE("per_image_cui reductions") {
  ImportanceMap im;
  im.map = TensorF({2, 2}, {1, 2, 3, 4});
  CHECK(per_image_cui(im, CuiReduction::sum) == doctest::Approx(10.0));
  CHECK(per_image_cui(im, CuiReduction::mean) == doctest::Approx(2.5));
  CHECK(per_image_cui(im, CuiReduction::sum) ==
        doctest::Approx(per_image_cui(im, CuiReduction::mean) * 4));
  im.map = TensorF::zeros({3, 3});
  CHECK(per_image_cui(im) == 0.0);
}

TEST_CASE("cui_curve: single image curve equals its per-image values") {
  const Model m = micro_model(41);
  Rng rng(43);
  std::vector<TensorF> images = {random_tensor_f({1, 16, 16}, rng, 0.0, 1.0)};
  std::vector<int> labels = {2};
  CuiOptions opts;
  opts.threads = 1;
  const CuiCurve curve = cui_curve(m, images, labels, {}, opts);
  CHECK(curve.scope == CuiScope::per_image);
  const auto rows = per_image_cui_rows(m, images, labels, {0}, CuiReduction::sum,
                                       SaliencyMethod::gradcam, 1);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].size() == curve.values.size());
  for (std::size_t i = 0; i < curve.values.size(); ++i)
    CHECK(curve.values[i] == rows[0][i]);
}

TEST_CASE("cui_curve: general curve is the mean of equal-sized per-class curves") {
  const Model m = micro_model(47);
  Rng rng(53);
  std::vector<TensorF> images;
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 8; ++j) {  // power-of-two class size
      images.push_back(random_tensor_f({1, 16, 16}, rng, 0.0, 1.0));
      labels.push_back(c);
    }
  CuiOptions opts;
  opts.threads = 2;
  const CuiCurve general = cui_curve(m, images, labels, {}, opts);
  CHECK(general.scope == CuiScope::general);
  CHECK(general.image_count == 32);

  std::vector<CuiCurve> per_class;
  for (int c = 0; c < 4; ++c) {
    CuiOptions copts = opts;
    copts.class_subset = {c};
    per_class.push_back(cui_curve(m, images, labels, {}, copts));
    CHECK(per_class.back().scope == CuiScope::per_class);
    CHECK(per_class.back().scope_class == c);
  }
  for (std::size_t li = 0; li < general.values.size(); ++li) {
    double mean = 0;
    for (const auto& pc : per_class) mean += pc.values[li];
    mean /= 4.0;
    CHECK(general.values[li] == mean);  // exact: grouped sums, power-of-two sizes
  }
}

TEST_CASE("cui_curve is bitwise identical across parallelism degrees") {
  const Model m = micro_model(59);
  Rng rng(61);
  std::vector<TensorF> images;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    images.push_back(random_tensor_f({1, 16, 16}, rng, 0.0, 1.0));
    labels.push_back(i % 4);
  }
  CuiOptions serial;
  serial.threads = 1;
  CuiOptions parallel;
  parallel.threads = 8;
  const CuiCurve a = cui_curve(m, images, labels, {}, serial);
  const CuiCurve b = cui_curve(m, images, labels, {}, parallel);
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("cui_curve rejects an empty image scope") {
  const Model m = micro_model(67);
  std::vector<TensorF> images;
  std::vector<int> labels;
  CHECK_THROWS_AS(cui_curve(m, images, labels, {}, CuiOptions{}), DataError);
}

TEST_CASE("non-negativity of maps and curves on random models") {
  Rng rng(71);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const Model m = micro_model(seed);
    std::vector<TensorF> images = {random_tensor_f({1, 16, 16}, rng, 0.0, 1.0),
                                   random_tensor_f({1, 16, 16}, rng, 0.0, 1.0)};
    std::vector<int> labels = {0, 1};
    for (int layer : cui_layers(m)) {
      const auto map = gradcam_map(m, images[0], 0, layer);
      for (float v : map.map.data) CHECK(v >= 0.0f);
    }
    for (auto method : {SaliencyMethod::gradcam, SaliencyMethod::gradients}) {
      CuiOptions opts;
      opts.method = method;
      opts.threads = 1;
      const CuiCurve curve = cui_curve(m, images, labels, {}, opts);
      for (double v : curve.values) {
        CHECK(v >= 0.0);
        CHECK(std::isfinite(v));
      }
    }
  }
}

TEST_CASE("scaling the logits by 2 scales alpha and CUI exactly, candidates unchanged") {
  Model m = micro_model(73);
  Rng rng(79);
  std::vector<TensorF> images;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    images.push_back(random_tensor_f({1, 16, 16}, rng, 0.0, 1.0));
    labels.push_back(i % 4);
  }
  CuiOptions opts;
  opts.threads = 1;
  const CuiCurve base = cui_curve(m, images, labels, {}, opts);
  const auto alpha_base = gradcam_alpha(m, images[0], labels[0], 0);

  Model scaled = m;  // double the final dense layer => logits exactly double
  for (auto& v : scaled.params[15][0].data) v *= 2.0f;
  for (auto& v : scaled.params[15][1].data) v *= 2.0f;
  const CuiCurve twice = cui_curve(scaled, images, labels, {}, opts);
  const auto alpha_twice = gradcam_alpha(scaled, images[0], labels[0], 0);

  for (std::size_t i = 0; i < alpha_base.values.size(); ++i)
    CHECK(alpha_twice.values[i] == 2.0f * alpha_base.values[i]);
  for (std::size_t i = 0; i < base.values.size(); ++i)
    CHECK(twice.values[i] == 2.0 * base.values[i]);
  CHECK(select_split_points(base) == select_split_points(twice));
}

TEST_CASE("select_split_points ranks local maxima") {
  CuiCurve curve;
  curve.layer_indices = {0, 1, 2, 3, 4};
  curve.layer_names = {"a", "b", "c", "d", "e"};

  curve.values = {1, 3, 2, 5, 4};
  CHECK(select_split_points(curve) == std::vector<int>{3, 1});

  curve.values = {1, 2, 3, 4, 5};  // monotone increasing
  CHECK(select_split_points(curve) == std::vector<int>{4});

  curve.values = {5, 4, 3, 2, 1};  // monotone decreasing: global max must lead
  CHECK(select_split_points(curve) == std::vector<int>{0});

  curve.layer_indices = {0, 1, 2, 3};
  curve.layer_names = {"a", "b", "c", "d"};
  curve.values = {1, 5, 5, 2};  // plateau: deepest element wins
  CHECK(select_split_points(curve) == std::vector<int>{2});
}

TEST_CASE("cde_candidates marks size decreases") {
  CHECK(cde_candidates({64, 64, 32, 32, 16}) == std::vector<int>{1, 3});
  CHECK(cde_candidates({8, 16, 32}) == std::vector<int>{});
  CHECK(cde_candidates({5}) == std::vector<int>{});
}

TEST_CASE("cde candidate layers are a subset of the CUI-evaluated layers") {
  const Model m = build_model("vgg-micro", {3, 64, 64}, 10, 5);
  const auto cde = cde_candidate_layers(m);
  const auto evaluated = cui_layers(m);
  for (int l : cde)
    CHECK(std::find(evaluated.begin(), evaluated.end(), l) != evaluated.end());
  // on vgg-micro every conv feeding a pool is a CDE candidate
  CHECK(cde == std::vector<int>{0, 3, 6, 9});
}

TEST_CASE("gradients baseline: zero tail gives a zero curve, random model a finite one") {
  Model m = build_model("c@conv:3k3s1p1,f@flatten,d@dense:C", {1, 6, 6}, 2, 3);
  for (auto& v : m.params[2][0].data) v = 0.0f;
  for (auto& v : m.params[2][1].data) v = 0.0f;
  Rng rng(83);
  std::vector<TensorF> images = {random_tensor_f({1, 6, 6}, rng, 0.0, 1.0)};
  std::vector<int> labels = {0};
  CuiOptions opts;
  opts.threads = 1;
  const CuiCurve zero = gradients_baseline_curve(m, images, labels, {}, opts);
  for (double v : zero.values) CHECK(v == 0.0);
}

TEST_CASE("sanity_check degenerate zero-input case and self-copy") {
  Model m = micro_model(89);
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].has_params())
      for (auto& v : m.params[i][1].data) v = 0.0f;  // zero biases
  const TensorF zero_img = TensorF::zeros({1, 16, 16});
  CHECK(sanity_check(m, zero_img, 0, 123, 0) == 0.0);
}

TEST_CASE("average ranks and spearman") {
  CHECK(average_ranks({10, 20, 30}) == std::vector<double>{1, 2, 3});
  CHECK(average_ranks({2, 1, 2}) == std::vector<double>{2.5, 1, 2.5});

  CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 25, 100}) == 1.0);
  CHECK(spearman_rho({1, 2, 3, 4}, {8, 6, 4, 2}) == -1.0);

  // brute-force oracle for the tied case: ranks x=[1,2.5,2.5,4], y=[1,3,2,4]
  {
    const std::vector<double> rx = {1, 2.5, 2.5, 4}, ry = {1, 3, 2, 4};
    double mx = 2.5, my = 2.5, sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 4; ++i) {
      sxy += (rx[i] - mx) * (ry[i] - my);
      sxx += (rx[i] - mx) * (rx[i] - mx);
      syy += (ry[i] - my) * (ry[i] - my);
    }
    const double oracle = sxy / std::sqrt(sxx * syy);
    CHECK(spearman_rho({1, 2, 2, 3}, {1, 3, 2, 4}) == doctest::Approx(oracle).epsilon(1e-15));
    CHECK(spearman_rho({1, 2, 2, 3}, {1, 3, 2, 4}) ==
          doctest::Approx(0.9486832980505139).epsilon(1e-12));
  }

  CHECK_THROWS_AS(spearman_rho({1, 2}, {1}), ShapeError);
  CHECK_THROWS_AS(spearman_rho({1}, {1}), ShapeError);
  CHECK(std::isnan(spearman_rho({2, 2, 2}, {1, 2, 3})));
}
