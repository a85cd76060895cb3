#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "stransformer/adam.h"
#include "stransformer/grad_check.h"
#include "stransformer/ops.h"

using namespace stf;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor leaf(Shape shape, std::vector<double> data) {
  return Tensor::from_data(std::move(shape), std::move(data)).set_requires_grad(true);
}
}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), IndexError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::scalar(4.25).item() == 4.25);
}

TEST_CASE("matmul identity and hand arithmetic") {
  Rng rng(7);
  Tensor m = Tensor::uniform({3, 3}, -2, 2, rng);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.mutable_data()[i * 3 + i] = 1.0;
  Tensor prod = matmul(eye, m);
  for (int i = 0; i < 9; ++i) CHECK(prod.data()[i] == m.data()[i]);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  CHECK(c.at({0, 0}) == 3.0);
  CHECK(c.at({1, 0}) == 7.0);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs central finite differences") {
  Rng rng(11);
  Tensor a = Tensor::uniform({4, 5}, -1, 1, rng).set_requires_grad(true);
  Tensor b = Tensor::uniform({5, 2}, -1, 1, rng).set_requires_grad(true);
  Tensor w = Tensor::uniform({4, 2}, -1, 1, rng);
  double err = grad_check([&] { return sum_all(mul(matmul(a, b), w)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("batched matmul broadcasts leading dims") {
  Rng rng(13);
  Tensor a = Tensor::uniform({3, 2, 4}, -1, 1, rng).set_requires_grad(true);
  Tensor b = Tensor::uniform({4, 5}, -1, 1, rng).set_requires_grad(true);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{3, 2, 5});
  // each batch equals the 2-D product
  for (int64_t q = 0; q < 3; ++q) {
    Tensor aq = slice(a, {q, 0, 0}, {1, 2, 4});
    Tensor cq = matmul(reshape(aq, {2, 4}), b);
    for (int64_t i = 0; i < 10; ++i) {
      CHECK(c.data()[q * 10 + i] == doctest::Approx(cq.data()[i]).epsilon(1e-15));
    }
  }
  Tensor w = Tensor::uniform({3, 2, 5}, -1, 1, rng);
  double err = grad_check([&] { return sum_all(mul(matmul(a, b), w)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax rows: symmetry, mask, frozen values") {
  Tensor u = softmax_lastdim(Tensor::from_data({3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Tensor masked = softmax_lastdim(Tensor::from_data({2}, {5.0, -kInf}));
  CHECK(masked.data()[0] == 1.0);
  CHECK(masked.data()[1] == 0.0);  // exactly

  // direct evaluation of exp/sum for [1,2,3]
  Tensor s = softmax_lastdim(Tensor::from_data({3}, {1, 2, 3}));
  CHECK(s.data()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(s.data()[1] == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(s.data()[2] == doctest::Approx(0.66524095577482178).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_lastdim(Tensor::from_data({2}, {-kInf, -kInf})),
                  MaskError);
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  Rng rng(17);
  for (int c = 0; c < 20; ++c) {
    int64_t rows = 1 + rng.uniform_int(4), cols = 1 + rng.uniform_int(9);
    Tensor x = Tensor::uniform({rows, cols}, -30, 30, rng);
    if (c % 3 == 0 && cols > 1) x.mutable_data()[rng.uniform_int(rows * cols)] = -kInf;
    Tensor s = softmax_lastdim(x);
    for (int64_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (int64_t j = 0; j < cols; ++j) sum += s.data()[r * cols + j];
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(19);
  Tensor x = Tensor::uniform({3, 5}, -2, 2, rng).set_requires_grad(true);
  Tensor w = Tensor::uniform({3, 5}, -1, 1, rng);
  double err = grad_check([&] { return sum_all(mul(softmax_lastdim(x), w)); }, {x});
  CHECK(err < 1e-5);
}

TEST_CASE("stop_gradient: forward identity, zero upstream gradient") {
  Rng rng(23);
  Tensor x = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
  Tensor w = Tensor::uniform({3, 4}, -1, 1, rng).set_requires_grad(true);
  Tensor sg = stop_gradient(x);
  for (int i = 0; i < 12; ++i) CHECK(sg.data()[i] == x.data()[i]);

  Tensor loss = sum_all(mul(sg, w));
  loss.backward();
  CHECK(x.grad().empty());  // never touched by backward
  REQUIRE(w.grad().size() == 12);
  for (int i = 0; i < 12; ++i) CHECK(w.grad()[i] == x.data()[i]);
}

TEST_CASE("stop_gradient severs a two-stage chain") {
  // weights of stage one get gradient only through the direct path, never
  // through the detached hand-off
  Rng rng(29);
  Tensor w1 = Tensor::uniform({2, 2}, -1, 1, rng).set_requires_grad(true);
  Tensor x = Tensor::uniform({2, 2}, -1, 1, rng);
  Tensor stage1 = matmul(x, w1);
  Tensor handoff = stop_gradient(stage1);
  Tensor w2 = Tensor::uniform({2, 2}, -1, 1, rng).set_requires_grad(true);
  Tensor loss = sum_all(matmul(handoff, w2));
  loss.backward();
  CHECK(w1.grad().empty());
  CHECK_FALSE(w2.grad().empty());
}

TEST_CASE("layer_norm examples") {
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor flat = layer_norm(Tensor::from_data({1, 3}, {5, 5, 5}), gain, bias);
  for (double v : flat.data()) CHECK(v == 0.0);  // eps guards zero variance

  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor two = layer_norm(Tensor::from_data({1, 2}, {1, 3}), g2, b2, 1e-12);
  CHECK(two.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(two.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm gradient") {
  Rng rng(31);
  Tensor x = Tensor::uniform({4, 6}, -2, 2, rng).set_requires_grad(true);
  Tensor g = Tensor::uniform({6}, 0.5, 1.5, rng).set_requires_grad(true);
  Tensor b = Tensor::uniform({6}, -0.5, 0.5, rng).set_requires_grad(true);
  Tensor w = Tensor::uniform({4, 6}, -1, 1, rng);
  double err = grad_check([&] { return sum_all(mul(layer_norm(x, g, b), w)); },
                          {x, g, b});
  CHECK(err < 1e-5);
}

TEST_CASE("primitive ops pass grad_check on random small shapes") {
  Rng rng(37);
  Tensor x = Tensor::uniform({3, 4}, -1.5, 1.5, rng).set_requires_grad(true);
  Tensor y = Tensor::uniform({3, 4}, -1.5, 1.5, rng).set_requires_grad(true);
  Tensor row = Tensor::uniform({4}, -1, 1, rng).set_requires_grad(true);
  Tensor w = Tensor::uniform({3, 4}, -1, 1, rng);

  auto run = [&](std::function<Tensor()> f, std::vector<Tensor> params) {
    double err = grad_check(f, params);
    CHECK(err < 1e-5);
  };
  run([&] { return sum_all(mul(add(x, y), w)); }, {x, y});
  run([&] { return sum_all(mul(sub(x, y), w)); }, {x, y});
  run([&] { return sum_all(mul(mul(x, y), w)); }, {x, y});
  run([&] { return sum_all(mul(add(x, row), w)); }, {x, row});  // broadcast
  run([&] { return sum_all(mul(sigmoid(x), w)); }, {x});
  run([&] { return sum_all(mul(abs_elem(x), w)); }, {x});
  run([&] { return mean_all(mul(relu(x), w)); }, {x});
  run([&] { return sum_all(mul(reshape(permute(x, {1, 0}), {3, 4}), w)); }, {x});
  run([&] { return sum_all(mul(slice(x, {1, 1}, {2, 3}), slice(w, {0, 0}, {2, 3}))); },
      {x});
  run([&] { return sum_all(mul(concat_rows(x, y), concat_rows(w, w))); }, {x, y});
  run([&] { return sum_all(mul(pad_last_dim(x, 1, 2), pad_last_dim(w, 1, 2))); },
      {x});
  Tensor targets = Tensor::from_data({3, 4}, {1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1});
  run([&] { return bce_with_logits_mean(x, targets, 2.5); }, {x});
}

TEST_CASE("grad_check is exact for linear functions") {
  Rng rng(41);
  Tensor x = Tensor::uniform({5}, -1, 1, rng).set_requires_grad(true);
  Tensor w = Tensor::uniform({5}, -1, 1, rng);
  double err = grad_check([&] { return sum_all(mul(x, w)); }, {x});
  CHECK(err < 1e-9);
}

TEST_CASE("grad_check flags a wrong backward rule") {
  Rng rng(43);
  Tensor x = Tensor::uniform({4}, -1, 1, rng).set_requires_grad(true);
  auto bad_scale = [](const Tensor& in) {
    std::vector<double> out(in.data());
    for (auto& v : out) v *= 3.0;
    return Tensor::make_node(in.shape(), std::move(out), {in},
                             [in](Tensor::Node& self) {
                               auto& dx = Tensor::grad_buf(*in.node());
                               for (size_t i = 0; i < self.grad.size(); ++i) {
                                 dx[i] += 6.0 * self.grad[i];
                               }
                             });
  };
  double err = grad_check([&] { return sum_all(bad_scale(x)); }, {x});
  CHECK(err > 1e-2);
}

TEST_CASE("rows_lookup gathers and scatters") {
  Tensor table = leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor out = rows_lookup(table, {2, 0, 2});
  CHECK(out.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
  CHECK_THROWS_AS(rows_lookup(table, {3}), IndexError);
  sum_all(out).backward();
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("dropout: seeded mask, identity at rate 0") {
  Rng rng(47);
  Tensor x = Tensor::uniform({100}, 1, 2, rng);
  Rng r1(5), r2(5);
  Tensor d1 = dropout(x, 0.4, r1);
  Tensor d2 = dropout(x, 0.4, r2);
  CHECK(d1.data() == d2.data());  // same seed, same mask
  int zeros = 0;
  for (int i = 0; i < 100; ++i) {
    if (d1.data()[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(d1.data()[i] == doctest::Approx(x.data()[i] / 0.6).epsilon(1e-12));
    }
  }
  CHECK(zeros > 10);
  CHECK(zeros < 80);
  Rng r3(9);
  Tensor same = dropout(x, 0.0, r3);
  CHECK(same.data() == x.data());
}

TEST_CASE("backward visits shared subgraphs once") {
  Tensor x = leaf({2}, {3, 4});
  Tensor y = mul(x, x);        // x^2
  Tensor loss = sum_all(add(y, y));  // 2x^2, dx = 4x
  loss.backward();
  CHECK(x.grad()[0] == 12.0);
  CHECK(x.grad()[1] == 16.0);
}

TEST_CASE("deterministic forward and backward given a seed") {
  auto run = [] {
    Rng rng(123);
    Tensor a = Tensor::uniform({6, 6}, -1, 1, rng).set_requires_grad(true);
    Tensor b = Tensor::uniform({6, 6}, -1, 1, rng).set_requires_grad(true);
    Tensor out = sum_all(softmax_lastdim(matmul(relu(a), b)));
    out.backward();
    std::vector<double> result = {out.item()};
    result.insert(result.end(), a.grad().begin(), a.grad().end());
    return result;
  };
  CHECK(run() == run());  // bit-identical
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  Tensor p = store.add("p", Tensor::from_data({3}, {1, 2, 3}));
  AdamState st = make_adam_state(store, LrSchedule{0.1, 0, 1.0, 0});
  Tensor loss = sum_all(mul(p, Tensor::zeros({3})));
  loss.backward();
  adam_step(store, st);
  CHECK(p.data() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam: first bias-corrected step moves by ~lr") {
  ParamStore store;
  Tensor p = store.add("theta", Tensor::from_data({1}, {0.0}));
  AdamState st = make_adam_state(store, LrSchedule{0.1, 0, 1.0, 0});
  sum_all(p).backward();  // gradient exactly 1
  adam_step(store, st);
  CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: 100 steps shrink f(theta)=theta^2 from 1") {
  ParamStore store;
  Tensor p = store.add("theta", Tensor::from_data({1}, {1.0}));
  AdamState st = make_adam_state(store, LrSchedule{0.05, 0, 1.0, 0});
  for (int i = 0; i < 100; ++i) {
    store.zero_grad();
    Tensor loss = mul(p, p);
    reshape(loss, {}).backward();
    adam_step(store, st);
  }
  CHECK(std::fabs(p.data()[0]) < 0.5);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  ParamStore store;
  Tensor p = store.add("bad_param", Tensor::from_data({1}, {1.0}));
  AdamState st = make_adam_state(store, LrSchedule{0.1, 0, 1.0, 0});
  sum_all(p).backward();
  p.node()->grad[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(store, st);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("bad_param") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule: warmup then exponential decay") {
  LrSchedule s{1e-3, 100, 0.5, 1000};
  CHECK(s.rate_at(50) == doctest::Approx(5e-4));
  CHECK(s.rate_at(100) == doctest::Approx(1e-3));
  CHECK(s.rate_at(1000) == doctest::Approx(5e-4));
  CHECK(s.rate_at(2000) == doctest::Approx(2.5e-4));
}
