#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "isplit/optim.hpp"
#include "isplit/tape.hpp"
#include "testutil.hpp"

using namespace isplit;
using namespace isplit::test;

TEST_CASE("tensor shape/data invariant") {
  CHECK_THROWS_AS(TensorF({2, 3}, {1.0f}), ShapeError);
  CHECK_THROWS_AS(TensorF({0, 3}), ShapeError);
  TensorF t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(TensorF::scalar(2.0f).is_scalar());
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(7);
  Tape<double> tape;
  const TensorId x = tape.leaf(random_tensor({3, 5, 5}, rng));
  TensorD k({3, 3, 1, 1});
  k.data[0 * 3 + 0] = 1;  // k[0,0,0,0]
  k.data[1 * 3 + 1] = 1;
  k.data[2 * 3 + 2] = 1;
  const TensorId y = tape.conv2d(x, tape.leaf(k), tape.leaf(TensorD::zeros({3})), 1, 0);
  CHECK(bitwise_equal(tape.value(y), tape.value(x)));
}

TEST_CASE("conv2d hand-computed 2x2") {
  Tape<double> tape;
  const TensorId x = tape.leaf(TensorD({1, 2, 2}, {1, 2, 3, 4}));
  const TensorId k = tape.leaf(TensorD({1, 1, 2, 2}, {1, 0, 0, 1}));
  const TensorId y = tape.conv2d(x, k, tape.leaf(TensorD::zeros({1})), 1, 0);
  CHECK(tape.value(y).shape == std::vector<int>{1, 1, 1});
  CHECK(tape.value(y).data[0] == doctest::Approx(5.0));
}

TEST_CASE("conv2d output shape arithmetic") {
  Rng rng(3);
  Tape<float> tape;
  const TensorId x = tape.leaf(random_tensor_f({3, 32, 32}, rng));
  const TensorId k = tape.leaf(random_tensor_f({8, 3, 3, 3}, rng));
  const TensorId y = tape.conv2d(x, k, tape.leaf(TensorF::zeros({8})), 2, 1);
  CHECK(tape.value(y).shape == std::vector<int>{8, 16, 16});
}

TEST_CASE("conv2d vs direct oracle") {
  Rng rng(11);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tape<double> tape;
      const TensorD in = random_tensor({3, 6, 7}, rng);
      const TensorD k = random_tensor({4, 3, 3, 3}, rng);
      const TensorD b = random_tensor({4}, rng);
      const TensorId y =
          tape.conv2d(tape.leaf(in), tape.leaf(k), tape.leaf(b), stride, pad);
      const TensorD expect = conv_oracle(in, k, b, stride, pad);
      REQUIRE(tape.value(y).shape == expect.shape);
      for (std::size_t i = 0; i < expect.data.size(); ++i)
        CHECK(tape.value(y).data[i] == doctest::Approx(expect.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d shape errors name the offending dimensions") {
  Tape<float> tape;
  const TensorId x = tape.leaf(TensorF::zeros({3, 8, 8}));
  const TensorId k = tape.leaf(TensorF::zeros({4, 2, 3, 3}));
  CHECK_THROWS_WITH_AS(tape.conv2d(x, k, tape.leaf(TensorF::zeros({4})), 1, 0),
                       doctest::Contains("channel mismatch"), ShapeError);
  const TensorId k2 = tape.leaf(TensorF::zeros({4, 3, 9, 9}));
  CHECK_THROWS_AS(tape.conv2d(x, k2, tape.leaf(TensorF::zeros({4})), 1, 0), ShapeError);
}

TEST_CASE("maxpool2d basics") {
  Tape<double> tape;
  const TensorId x = tape.leaf(TensorD({1, 2, 2}, {1, 2, 3, 4}));
  const TensorId y = tape.maxpool2d(x, 2, 2);
  CHECK(tape.value(y).data == std::vector<double>{4});

  Tape<double> t2;
  const TensorId small = t2.leaf(TensorD::zeros({1, 2, 2}));
  CHECK_THROWS_AS(t2.maxpool2d(small, 3, 1), ShapeError);
}

TEST_CASE("maxpool2d tie-break routes gradient to first occurrence") {
  Tape<double> tape;
  const TensorId x = tape.leaf(TensorD::full({1, 4, 4}, 2.5));
  const TensorId y = tape.maxpool2d(x, 2, 2);
  for (double v : tape.value(y).data) CHECK(v == 2.5);
  const TensorId loss = tape.sum(y);
  const auto grads = tape.backward(loss);
  const TensorD& gx = grads.at(x);
  // top-left of each 2x2 window takes the whole gradient
  for (int y0 : {0, 2})
    for (int x0 : {0, 2}) {
      CHECK(gx.data[y0 * 4 + x0] == 1.0);
      CHECK(gx.data[y0 * 4 + x0 + 1] == 0.0);
      CHECK(gx.data[(y0 + 1) * 4 + x0] == 0.0);
      CHECK(gx.data[(y0 + 1) * 4 + x0 + 1] == 0.0);
    }
}

TEST_CASE("maxpool2d random vs window-scan oracle") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    const TensorD in = random_tensor({2, 4, 4}, rng);
    for (auto [k, s] : {std::pair{2, 2}, std::pair{2, 1}, std::pair{3, 1}}) {
      Tape<double> tape;
      const TensorId y = tape.maxpool2d(tape.leaf(in), k, s);
      CHECK(bitwise_equal(tape.value(y), maxpool_oracle(in, k, s)));
    }
  }
}

TEST_CASE("relu") {
  Tape<double> tape;
  const TensorId y = tape.relu(tape.leaf(TensorD({3}, {-1, 0, 2})));
  CHECK(tape.value(y).data == std::vector<double>{0, 0, 2});
}

TEST_CASE("softmax_cross_entropy of uniform logits is ln K") {
  for (int k : {2, 5, 10}) {
    Tape<double> tape;
    const TensorId loss =
        tape.softmax_cross_entropy(tape.leaf(TensorD::full({k}, 0.37)), k / 2);
    CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(k)).epsilon(1e-12));
  }
  Tape<double> tape;
  CHECK_THROWS_AS(tape.softmax_cross_entropy(tape.leaf(TensorD::zeros({4})), 4), ShapeError);
  CHECK_THROWS_AS(tape.softmax_cross_entropy(tape.leaf(TensorD::zeros({4})), -1), ShapeError);
}

TEST_CASE("mse of identical tensors is zero") {
  Rng rng(5);
  Tape<double> tape;
  const TensorD x = random_tensor({4, 3}, rng);
  const TensorId loss = tape.mse(tape.leaf(x), tape.leaf(x));
  CHECK(tape.value(loss).data[0] == 0.0);
  CHECK_THROWS_AS(tape.mse(tape.leaf(TensorD::zeros({2})), tape.leaf(TensorD::zeros({3}))),
                  ShapeError);
}

TEST_CASE("backward of x^2 at x=3 gives 6") {
  Tape<double> tape;
  const TensorId x = tape.leaf(TensorD({1}, {3.0}));
  const TensorId loss = tape.mse(x, tape.leaf(TensorD::zeros({1})));  // x^2
  CHECK(tape.value(loss).data[0] == 9.0);
  CHECK(tape.backward(loss).at(x).data[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of sum gives all-ones and rejects non-scalars") {
  Rng rng(2);
  Tape<double> tape;
  const TensorId f = tape.leaf(random_tensor({2, 3, 3}, rng));
  const TensorId y = tape.sum(f);
  const auto grads = tape.backward(y);
  for (double g : grads.at(f).data) CHECK(g == 1.0);
  CHECK_THROWS_AS(tape.backward(f), ShapeError);
}

TEST_CASE("backward detached tensor error") {
  Tape<double> tape;
  const TensorId x = tape.leaf(TensorD({1}, {1.0}));
  const TensorId dead = tape.leaf(TensorD({1}, {2.0}));
  const TensorId loss = tape.mse(x, tape.leaf(TensorD::zeros({1})));
  const auto grads = tape.backward(loss);
  CHECK(grads.contains(x));
  CHECK_FALSE(grads.contains(dead));
  CHECK_THROWS_AS(grads.at(dead), ShapeError);
}

namespace {

// Small conv net: conv(s1 p1) -> relu -> maxpool -> conv(s2 p1) -> flatten
// -> dense -> softmax_xent. Rebuilt from leaf values so fd_check can
// perturb any of them.
double toy_net_loss(const std::vector<TensorD>& leaves) {
  Tape<double> tape;
  const TensorId x = tape.leaf(leaves[0]);
  const TensorId k1 = tape.leaf(leaves[1]);
  const TensorId b1 = tape.leaf(leaves[2]);
  const TensorId k2 = tape.leaf(leaves[3]);
  const TensorId b2 = tape.leaf(leaves[4]);
  const TensorId w = tape.leaf(leaves[5]);
  const TensorId b3 = tape.leaf(leaves[6]);
  TensorId cur = tape.conv2d(x, k1, b1, 1, 1);
  cur = tape.relu(cur);
  cur = tape.maxpool2d(cur, 2, 2);
  cur = tape.conv2d(cur, k2, b2, 2, 1);
  cur = tape.flatten(cur);
  cur = tape.dense(cur, w, b3);
  return tape.value(tape.softmax_cross_entropy(cur, 1)).data[0];
}

}  // namespace

TEST_CASE("finite differences validate the full backward pass") {
  Rng rng(31);
  Rng picker(97);
  for (int seed = 0; seed < 5; ++seed) {
    std::vector<TensorD> leaves;
    leaves.push_back(random_tensor({2, 8, 8}, rng));       // x
    leaves.push_back(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));  // k1
    leaves.push_back(random_tensor({3}, rng, -0.1, 0.1));  // b1
    leaves.push_back(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));  // k2
    leaves.push_back(random_tensor({4}, rng, -0.1, 0.1));  // b2
    leaves.push_back(random_tensor({3, 16}, rng, -0.5, 0.5));       // w
    leaves.push_back(random_tensor({3}, rng, -0.1, 0.1));  // b3

    // analytic grads via one taped run
    Tape<double> tape;
    std::vector<TensorId> ids;
    for (const auto& l : leaves) ids.push_back(tape.leaf(l));
    TensorId cur = tape.conv2d(ids[0], ids[1], ids[2], 1, 1);
    cur = tape.relu(cur);
    cur = tape.maxpool2d(cur, 2, 2);
    cur = tape.conv2d(cur, ids[3], ids[4], 2, 1);
    cur = tape.flatten(cur);
    cur = tape.dense(cur, ids[5], ids[6]);
    const TensorId loss = tape.softmax_cross_entropy(cur, 1);
    const auto grads = tape.backward(loss);
    std::vector<TensorD> analytic;
    for (TensorId id : ids) analytic.push_back(grads.at(id));

    const double err = fd_check(toy_net_loss, leaves, analytic, picker, 20);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("finite differences validate tconv2d") {
  Rng rng(41);
  Rng picker(43);
  for (auto [oph, opw] : {std::pair{0, 0}, std::pair{1, 1}, std::pair{1, 0}}) {
    std::vector<TensorD> leaves;
    leaves.push_back(random_tensor({3, 4, 4}, rng));
    leaves.push_back(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
    leaves.push_back(random_tensor({2}, rng, -0.1, 0.1));
    auto f = [oph, opw](const std::vector<TensorD>& ls) {
      Tape<double> tape;
      const TensorId y = tape.tconv2d(tape.leaf(ls[0]), tape.leaf(ls[1]), tape.leaf(ls[2]), 2, 1,
                                      oph, opw);
      TensorD target = TensorD::zeros(tape.value(y).shape);
      return tape.value(tape.mse(y, tape.leaf(target))).data[0];
    };
    Tape<double> tape;
    std::vector<TensorId> ids;
    for (const auto& l : leaves) ids.push_back(tape.leaf(l));
    const TensorId y = tape.tconv2d(ids[0], ids[1], ids[2], 2, 1, oph, opw);
    const TensorId loss = tape.mse(y, tape.leaf(TensorD::zeros(tape.value(y).shape)));
    const auto grads = tape.backward(loss);
    std::vector<TensorD> analytic;
    for (TensorId id : ids) analytic.push_back(grads.at(id));
    CHECK(fd_check(f, leaves, analytic, picker, 25) < 1e-4);
  }
}

TEST_CASE("backward is linear in the output") {
  Rng rng(53);
  const TensorD x = random_tensor({2, 4, 4}, rng);
  const TensorD w = random_tensor({3, 32}, rng);
  const double a = 1.7, b = -0.4;

  auto run = [&](bool combined) {
    Tape<double> tape;
    const TensorId xi = tape.leaf(x);
    const TensorId wi = tape.leaf(w);
    TensorId cur = tape.relu(xi);
    cur = tape.flatten(cur);
    cur = tape.dense(cur, wi, tape.leaf(TensorD::zeros({3})));
    const TensorId y1 = tape.softmax_cross_entropy(cur, 0);
    const TensorId y2 = tape.sum(cur);
    if (combined) {
      const TensorId both =
          tape.add(tape.scale(y1, a), tape.scale(y2, b));
      const auto g = tape.backward(both);
      return std::pair{g.at(xi), g.at(wi)};
    }
    const auto g1 = tape.backward(y1);
    const auto g2 = tape.backward(y2);
    TensorD gx = TensorD::zeros(x.shape), gw = TensorD::zeros(w.shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] = a * g1.at(xi).data[i] + b * g2.at(xi).data[i];
    for (std::size_t i = 0; i < gw.data.size(); ++i)
      gw.data[i] = a * g1.at(wi).data[i] + b * g2.at(wi).data[i];
    return std::pair{gx, gw};
  };

  const auto [cx, cw] = run(true);
  const auto [sx, sw] = run(false);
  for (std::size_t i = 0; i < cx.data.size(); ++i)
    CHECK(cx.data[i] == doctest::Approx(sx.data[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < cw.data.size(); ++i)
    CHECK(cw.data[i] == doctest::Approx(sw.data[i]).epsilon(1e-12));
}

TEST_CASE("chain-rule composition across a manual split is exact") {
  Rng rng(61);
  const TensorD x = random_tensor({2, 6, 6}, rng);
  const TensorD k = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  const TensorD b = random_tensor({3}, rng, -0.1, 0.1);
  const TensorD w = random_tensor({4, 27}, rng, -0.5, 0.5);

  // end-to-end
  Tape<double> full;
  const TensorId fx = full.leaf(x);
  const TensorId fk = full.leaf(k);
  const TensorId fb = full.leaf(b);
  const TensorId fw = full.leaf(w);
  TensorId mid = full.conv2d(fx, fk, fb, 1, 0);
  mid = full.maxpool2d(mid, 2, 1);
  TensorId cur = full.flatten(mid);
  cur = full.dense(cur, fw, full.leaf(TensorD::zeros({4})));
  const TensorId loss = full.softmax_cross_entropy(cur, 2);
  const auto gfull = full.backward(loss);

  // stage 2: from the retained mid tensor
  Tape<double> t2;
  const TensorId mx = t2.leaf(full.value(mid));
  const TensorId mw = t2.leaf(w);
  TensorId c2 = t2.flatten(mx);
  c2 = t2.dense(c2, mw, t2.leaf(TensorD::zeros({4})));
  const TensorId loss2 = t2.softmax_cross_entropy(c2, 2);
  const auto g2 = t2.backward(loss2);

  // stage 1: seed the head backward with the mid gradient
  Tape<double> t1;
  const TensorId hx = t1.leaf(x);
  const TensorId hk = t1.leaf(k);
  const TensorId hb = t1.leaf(b);
  TensorId hmid = t1.conv2d(hx, hk, hb, 1, 0);
  hmid = t1.maxpool2d(hmid, 2, 1);
  const TensorD seed = g2.at(mx);
  const auto g1 = t1.backward(hmid, &seed);

  CHECK(bitwise_equal(g1.at(hx), gfull.at(fx)));
  CHECK(bitwise_equal(g1.at(hk), gfull.at(fk)));
  CHECK(bitwise_equal(g1.at(hb), gfull.at(fb)));
  CHECK(bitwise_equal(g2.at(mw), gfull.at(fw)));
}

TEST_CASE("forward and backward are deterministic bit for bit") {
  auto run = [] {
    Rng rng(77);
    Tape<float> tape;
    const TensorId x = tape.leaf(random_tensor_f({2, 8, 8}, rng));
    const TensorId k = tape.leaf(random_tensor_f({3, 2, 3, 3}, rng));
    const TensorId b = tape.leaf(random_tensor_f({3}, rng));
    TensorId cur = tape.conv2d(x, k, b, 1, 1);
    cur = tape.relu(cur);
    cur = tape.maxpool2d(cur, 2, 2);
    cur = tape.flatten(cur);
    const TensorId loss = tape.mse(cur, tape.leaf(TensorF::zeros({48})));
    auto grads = tape.backward(loss);
    return std::pair{tape.value(loss).data[0], grads.at(k)};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  CHECK(std::memcmp(&l1, &l2, sizeof(float)) == 0);
  CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
  TensorF p({3}, {1.0f, -2.0f, 0.5f});
  const TensorF p0 = p;
  TensorF g = TensorF::zeros({3});
  AdamState<float> state;
  adam_step<float>({&p}, {&g}, state, 0.05);
  CHECK(bitwise_equal(p, p0));
  CHECK(state.step == 1);
}

TEST_CASE("adam: one step matches the hand-expanded update") {
  // Single scalar parameter theta=1, grad=0.3, lr=0.01, defaults.
  TensorD p({1}, {1.0});
  TensorD g({1}, {0.3});
  AdamState<double> state;
  adam_step<double>({&p}, {&g}, state, 0.01);
  const double m = 0.1 * 0.3;
  const double v = 0.001 * 0.09;
  const double mhat = m / (1 - 0.9);
  const double vhat = v / (1 - 0.999);
  const double expect = 1.0 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p.data[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("adam default constants") {
  CHECK(kAdamBeta1 == 0.9);
  CHECK(kAdamBeta2 == 0.999);
  CHECK(kAdamEps == 1e-8);
}

TEST_CASE("adam/sgd shape mismatch") {
  TensorF p({3});
  TensorF g({2});
  AdamState<float> state;
  CHECK_THROWS_AS((adam_step<float>({&p}, {&g}, state, 0.1)), ShapeError);
  CHECK_THROWS_AS((sgd_step<float>({&p}, {&g}, 0.1)), ShapeError);
}

TEST_CASE("sgd step") {
  TensorD p({2}, {1.0, 2.0});
  TensorD g({2}, {0.5, -1.0});
  sgd_step<double>({&p}, {&g}, 0.1);
  CHECK(p.data[0] == doctest::Approx(0.95));
  CHECK(p.data[1] == doctest::Approx(2.1));
}
