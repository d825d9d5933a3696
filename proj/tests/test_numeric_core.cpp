#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "istt/adam.hpp"
#include "istt/autograd.hpp"
#include "istt/checkpoint.hpp"
#include "istt/tensor.hpp"
#include "test_helpers.hpp"

using namespace istt;
using namespace istt::testing;

TEST_CASE("matmul basics") {
  Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor r = matmul(eye, m);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(r(i, j) == m(i, j));

  // [[1,2]] x [[3],[4]] = [[11]]
  Tensor a = Tensor::from_rows({{1, 2}});
  Tensor b({2, 1}, {3, 4});
  CHECK(matmul(a, b)(0, 0) == doctest::Approx(11.0));

  Tensor z({2, 3});
  Tensor any = Tensor::from_rows({{5, -1}, {2, 2}, {0, 9}});
  Tensor zr = matmul(z, any);
  for (double v : zr.vec()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient contract: da = g b^T, db = a^T g") {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor g = random_tensor({3, 2}, rng);

  Tape tape;
  Var va = tape.input(a), vb = tape.input(b);
  Var prod = tape.matmul(va, vb);
  // loss = sum(prod * g) so that d(loss)/d(prod) == g
  Var loss = tape.sum(tape.mul(prod, tape.constant(g)));
  tape.backward(loss);

  Tensor da = matmul_nt(g, b);
  Tensor db = matmul_tn(a, g);
  for (long i = 0; i < da.numel(); ++i)
    CHECK(tape.grad(va).data()[i] == doctest::Approx(da.data()[i]).epsilon(1e-12));
  for (long i = 0; i < db.numel(); ++i)
    CHECK(tape.grad(vb).data()[i] == doctest::Approx(db.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax values") {
  Tensor t({2}, {0, 0});
  Tensor s = softmax(t, 0);
  CHECK(s(0) == doctest::Approx(0.5));
  CHECK(s(1) == doctest::Approx(0.5));

  Tensor big({2}, {1000, 1000});
  Tensor sb = softmax(big, 0);
  CHECK(sb(0) == doctest::Approx(0.5));
  CHECK(sb(1) == doctest::Approx(0.5));

  Tensor ln({2}, {std::log(1.0), std::log(3.0)});
  Tensor sl = softmax(ln, 0);
  CHECK(sl(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sl(1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one for magnitudes up to 1e3") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mag(-1e3, 1e3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x({8, 16});
    for (double& v : x.vec()) v = mag(rng);
    Tensor s = softmax(x, 1);
    for (int i = 0; i < 8; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 16; ++j) {
        sum += s(i, j);
        // entries far below the row max underflow to exact zero
        CHECK(s(i, j) >= 0.0);
        CHECK(s(i, j) <= 1.0);
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
  // softmax along axis 0 of a matrix: columns sum to one
  Tensor x({3, 4});
  for (double& v : x.vec()) v = mag(rng);
  Tensor s = softmax(x, 0);
  for (int j = 0; j < 4; ++j) {
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) sum += s(i, j);
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("layer_norm values") {
  Tensor gain({3}, {1, 1, 1});
  Tensor bias({3}, {0, 0, 0});

  Tensor constant_row = Tensor::from_rows({{4, 4, 4}});
  Tensor ln = layer_norm(constant_row, gain, bias, 1e-8);
  for (double v : ln.vec()) CHECK(v == doctest::Approx(0.0));

  // mean 2, population std 1 -> [-1, 1]
  Tensor g2({2}, {1, 1}), b2({2}, {0, 0});
  Tensor r = layer_norm(Tensor::from_rows({{1, 3}}), g2, b2, 0.0);
  CHECK(r(0, 0) == doctest::Approx(-1.0));
  CHECK(r(0, 1) == doctest::Approx(1.0));

  Tensor zero_gain({3}, {0, 0, 0});
  Tensor some_bias({3}, {5, -2, 7});
  Tensor rb = layer_norm(Tensor::from_rows({{9, 1, 2}, {0, 3, 3}}), zero_gain, some_bias, 1e-8);
  for (int i = 0; i < 2; ++i) {
    CHECK(rb(i, 0) == doctest::Approx(5.0));
    CHECK(rb(i, 1) == doctest::Approx(-2.0));
    CHECK(rb(i, 2) == doctest::Approx(7.0));
  }
}

TEST_CASE("backward basics") {
  SUBCASE("loss = sum(w) -> grad ones") {
    Tape tape;
    Var w = tape.input(Tensor({3}, {2, -1, 5}));
    Var loss = tape.sum(w);
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(tape.grad(w)(i) == doctest::Approx(1.0));
  }
  SUBCASE("loss = sum(w*w), w=[1,2] -> grad [2,4]") {
    Tape tape;
    Var w = tape.input(Tensor({2}, {1, 2}));
    Var loss = tape.sum(tape.mul(w, w));
    tape.backward(loss);
    CHECK(tape.grad(w)(0) == doctest::Approx(2.0));
    CHECK(tape.grad(w)(1) == doctest::Approx(4.0));
  }
  SUBCASE("non-scalar loss rejected") {
    Tape tape;
    Var w = tape.input(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(tape.backward(w), ContractError);
  }
  SUBCASE("unreachable parameter keeps zero grad") {
    Param used(Tensor({2}, {1.0, 2.0}));
    Param unused(Tensor({2}, {3.0, 4.0}));
    Tape tape;
    Var u = tape.param(used);
    tape.param(unused);
    tape.backward(tape.sum(u));
    CHECK(used.grad(0) == doctest::Approx(1.0));
    CHECK(unused.grad(0) == 0.0);
    CHECK(unused.grad(1) == 0.0);
  }
}

TEST_CASE("finite differences validate every primitive") {
  std::mt19937_64 rng(23);

  SUBCASE("matmul") {
    auto in = std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    double err = fd_check(in, [](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.matmul(v[0], v[1]));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("add and add_scaled") {
    auto in = std::vector<Tensor>{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
    double err = fd_check(in, [](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(t.add_scaled(t.add(v[0], v[1]), v[1], 0.3), v[0]));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("add_row_bias") {
    auto in = std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4}, rng)};
    double err = fd_check(in, [](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(t.add_row_bias(v[0], v[1]), t.add_row_bias(v[0], v[1])));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("relu") {
    auto in = std::vector<Tensor>{random_tensor({4, 4}, rng)};
    double err = fd_check(in, [](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(t.relu(v[0]), t.relu(v[0])));
    });
    CHECK(err < 1e-3);  // kinks near zero make FD noisier
  }
  SUBCASE("softmax") {
    std::mt19937_64 r2(5);
    Tensor weights = random_tensor({3, 5}, r2);
    auto in = std::vector<Tensor>{random_tensor({3, 5}, rng)};
    double err = fd_check(in, [&](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(t.softmax(v[0], 1), t.constant(weights)));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("layer_norm") {
    auto in = std::vector<Tensor>{random_tensor({3, 6}, rng), random_tensor({6}, rng),
                                  random_tensor({6}, rng)};
    std::mt19937_64 r2(9);
    Tensor weights = random_tensor({3, 6}, r2);
    double err = fd_check(in, [&](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(t.layer_norm(v[0], v[1], v[2], 1e-6), t.constant(weights)));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("attention") {
    auto in = std::vector<Tensor>{random_tensor({3, 8}, rng), random_tensor({4, 8}, rng),
                                  random_tensor({4, 8}, rng)};
    AttnMask mask = AttnMask::all_open(3, 4);
    mask.set(0, 2, false);
    mask.set(0, 3, false);
    mask.set(2, 1, false);
    std::mt19937_64 r2(13);
    Tensor weights = random_tensor({3, 8}, r2);
    double err = fd_check(in, [&](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(t.attention(v[0], v[1], v[2], mask, 2), t.constant(weights)));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("embedding") {
    auto in = std::vector<Tensor>{random_tensor({5, 4}, rng)};
    double err = fd_check(in, [](Tape& t, const std::vector<Var>& v) {
      Var e = t.embedding(v[0], {0, 3, 3, 1});
      return t.sum(t.mul(e, e));
    });
    CHECK(err < 1e-4);
  }
  SUBCASE("cross_entropy_sum") {
    auto in = std::vector<Tensor>{random_tensor({4, 6}, rng)};
    double err = fd_check(in, [](Tape& t, const std::vector<Var>& v) {
      return t.cross_entropy_sum(v[0], {1, 0, 5, 2}, {1, 1, 0, 1});
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("attention kernel conventions") {
  SUBCASE("single position, no mask -> output equals the value row") {
    Tensor q = Tensor::from_rows({{0.3, -0.2, 1.0, 0.5}});
    Tensor k = Tensor::from_rows({{1.0, 2.0, -1.0, 0.0}});
    Tensor v = Tensor::from_rows({{7.0, -3.0, 0.25, 9.0}});
    Tensor out = multi_head_attention(q, k, v, AttnMask::all_open(1, 1), 2);
    for (int j = 0; j < 4; ++j) CHECK(out(0, j) == doctest::Approx(v(0, j)));
  }
  SUBCASE("two identical keys, any query -> mean of the value rows") {
    Tensor q = Tensor::from_rows({{0.1, 0.9}});
    Tensor k = Tensor::from_rows({{0.4, -0.6}, {0.4, -0.6}});
    Tensor v = Tensor::from_rows({{2.0, 10.0}, {4.0, -6.0}});
    Tensor out = multi_head_attention(q, k, v, AttnMask::all_open(1, 2), 1);
    CHECK(out(0, 0) == doctest::Approx(3.0));
    CHECK(out(0, 1) == doctest::Approx(2.0));
  }
  SUBCASE("masking the third key equals attention over the first two") {
    std::mt19937_64 rng(31);
    Tensor q = random_tensor({2, 8}, rng);
    Tensor k = random_tensor({3, 8}, rng);
    Tensor v = random_tensor({3, 8}, rng);
    AttnMask mask = AttnMask::all_open(2, 3);
    mask.set(0, 2, false);
    mask.set(1, 2, false);
    Tensor full = multi_head_attention(q, k, v, mask, 2);

    Tensor k2({2, 8}), v2({2, 8});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 8; ++j) {
        k2(i, j) = k(i, j);
        v2(i, j) = v(i, j);
      }
    Tensor trunc = multi_head_attention(q, k2, v2, AttnMask::all_open(2, 2), 2);
    for (long i = 0; i < full.numel(); ++i)
      CHECK(std::abs(full.data()[i] - trunc.data()[i]) < 1e-9);
  }
  SUBCASE("masked positions carry < 1e-30 weight; all-masked rows output zero") {
    std::mt19937_64 rng(37);
    Tensor q = random_tensor({2, 4}, rng);
    Tensor k = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({3, 4}, rng);
    AttnMask mask = AttnMask::all_open(2, 3);
    mask.set(0, 1, false);
    mask.set(1, 0, false);
    mask.set(1, 1, false);
    mask.set(1, 2, false);
    Tensor probs;
    Tensor out = multi_head_attention(q, k, v, mask, 2, &probs);
    for (int h = 0; h < 2; ++h) {
      CHECK(probs(h * 2 + 0, 1) < 1e-30);
      for (int j = 0; j < 3; ++j) CHECK(probs(h * 2 + 1, j) == 0.0);
    }
    for (int j = 0; j < 4; ++j) CHECK(out(1, j) == 0.0);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Param p(Tensor({3}, {1.0, -2.0, 0.5}));
    AdamState st = AdamState::init({&p});
    adam_step({&p}, st, 0.1, AdamConfig{});
    CHECK(p.value(0) == doctest::Approx(1.0));
    CHECK(p.value(1) == doctest::Approx(-2.0));
    CHECK(p.value(2) == doctest::Approx(0.5));
    CHECK(st.step_count == 1);
  }
  SUBCASE("one step with g=1 moves a scalar by about lr") {
    // bias-corrected first step: m_hat = 1, v_hat = 1 -> delta = lr/(1+eps)
    Param p(Tensor({1}, {3.0}));
    p.grad(0) = 1.0;
    AdamState st = AdamState::init({&p});
    AdamConfig cfg;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;
    adam_step({&p}, st, 0.1, cfg);
    CHECK(p.value(0) == doctest::Approx(3.0 - 0.1).epsilon(1e-6));
  }
  SUBCASE("identical params with identical grads update identically") {
    Param a(Tensor({2}, {0.7, -0.1}));
    Param b(Tensor({2}, {0.7, -0.1}));
    a.grad = Tensor({2}, {0.3, -2.0});
    b.grad = Tensor({2}, {0.3, -2.0});
    AdamState st = AdamState::init({&a, &b});
    adam_step({&a, &b}, st, 0.05, AdamConfig{});
    CHECK(a.value(0) == b.value(0));
    CHECK(a.value(1) == b.value(1));
  }
  SUBCASE("lr schedule warms up then decays") {
    LrSchedule sched{.d_model = 64, .warmup_steps = 400, .scale = 1.0};
    CHECK(sched.lr(1) == doctest::Approx(1.0 / 8.0 * 1.0 / (400.0 * 20.0)));
    CHECK(sched.lr(400) == doctest::Approx(1.0 / 8.0 / 20.0));
    CHECK(sched.lr(1600) == doctest::Approx(1.0 / 8.0 / 40.0));
    CHECK(sched.lr(200) < sched.lr(400));
    CHECK(sched.lr(800) < sched.lr(400));
  }
}

TEST_CASE("checkpoint round trip") {
  namespace fs = std::filesystem;
  std::mt19937_64 rng(41);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({7}, rng);
  fs::path path = fs::temp_directory_path() / "istt_test_ckpt.bin";

  save_checkpoint(path, {{"layer.w", &a}, {"layer.b", &b}}, "d_model=64\nlambda=0.3\n");
  Checkpoint ck = load_checkpoint(path);
  REQUIRE(ck.params.size() == 2);
  CHECK(ck.params[0].first == "layer.w");
  CHECK(ck.params[1].first == "layer.b");
  CHECK(ck.metadata == "d_model=64\nlambda=0.3\n");
  const Tensor* w = ck.find("layer.w");
  REQUIRE(w != nullptr);
  REQUIRE(w->shape() == a.shape());
  for (long i = 0; i < a.numel(); ++i) CHECK(w->data()[i] == a.data()[i]);

  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("finite guard raises on NaN") {
  Tensor bad({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(check_finite(bad, "test"), NumericError);
  Tape tape;
  Var v = tape.input(Tensor({1}, {800.0}));
  // exp overflow path: softmax is safe, but mul into inf is caught
  Var big = tape.mul(v, v);
  CHECK_NOTHROW(tape.sum(big));
}
