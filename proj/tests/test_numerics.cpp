#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kt/autodiff.hpp"
#include "kt/optim.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"
#include "support/gradcheck.hpp"

#include <cmath>
#include <limits>

using namespace kt::num;
using kt::testing::gradient_relative_error;
using kt::testing::random_tensor;

namespace {

// Fixed random weighting so every output entry contributes a distinct gradient.
Var weighted_sum(Var x, const Tensor& weights) {
  Tape& tape = *x.tape();
  return sum(mul(x, tape.constant(weights)));
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and buffer agree") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
  }

  TEST_CASE("matmul identity") {
    const Tensor out = matmul(Tensor::from_rows({{1, 0}, {0, 1}}), Tensor::from_rows({{3}, {4}}));
    CHECK(out == Tensor::from_rows({{3}, {4}}));
  }

  TEST_CASE("matmul row by column") {
    CHECK(matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}})) == Tensor::from_rows({{11}}));
  }

  TEST_CASE("matmul matches triple loop") {
    Rng rng(7);
    const Tensor a = random_tensor({5, 4}, rng);
    const Tensor b = random_tensor({4, 3}, rng);
    const Tensor fast = matmul(a, b);
    const Tensor slow = naive_matmul(a, b);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
  }

  TEST_CASE("matmul rejects mismatched inner dimension") {
    CHECK_THROWS_AS(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), DimensionError);
  }

  TEST_CASE("softmax of equal logits is uniform") {
    const Tensor out = softmax(Tensor({3}, 0.0));
    for (double v : out.values()) CHECK(std::abs(v - 1.0 / 3.0) < 1e-15);
  }

  TEST_CASE("softmax survives large logits") {
    const Tensor out = softmax(Tensor({2}, std::vector<double>{1000.0, 0.0}));
    CHECK(out.all_finite());
    CHECK(out[0] == 1.0);
    CHECK(out[1] < 1e-300);
  }

  TEST_CASE("softmax of 1 2 3 matches high precision values") {
    const Tensor out = softmax(Tensor({3}, std::vector<double>{1, 2, 3}));
    CHECK(std::abs(out[0] - 0.090030573170380457998) < 1e-12);
    CHECK(std::abs(out[1] - 0.24472847105479765247) < 1e-12);
    CHECK(std::abs(out[2] - 0.66524095577482188953) < 1e-12);
  }

  TEST_CASE("softmax along columns") {
    const Tensor x = Tensor::from_rows({{1, 5}, {2, 5}, {3, 5}});
    const Tensor out = softmax(x, 0);
    CHECK(std::abs(out(2, 0) - 0.66524095577482188953) < 1e-12);
    CHECK(std::abs(out(0, 1) - 1.0 / 3.0) < 1e-15);
  }

  TEST_CASE("softmax rows sum to one for large magnitudes") {
    Rng rng(11);
    for (double magnitude : {1.0, 1e2, 1e3, 1e4}) {
      const Tensor x = random_tensor({16, 9}, rng, -magnitude, magnitude);
      const Tensor out = softmax(x, 1);
      CHECK(out.all_finite());
      for (std::size_t r = 0; r < out.rows(); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < out.cols(); ++c) {
          CHECK(out(r, c) >= 0.0);
          CHECK(out(r, c) <= 1.0);
          total += out(r, c);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("square has derivative 2x") {
    Parameter x("x", Tensor::scalar(3.0));
    Tape tape;
    tape.backward(sum(square(tape.leaf(x))));
    CHECK(x.grad[0] == 6.0);
  }

  TEST_CASE("loss gradient with respect to itself is one") {
    Parameter x("x", Tensor::scalar(2.0));
    Tape tape;
    Var loss = sum(square(tape.leaf(x)));
    tape.backward(loss);
    CHECK(loss.grad().item() == 1.0);
  }

  TEST_CASE("non scalar loss is rejected") {
    Parameter x("x", Tensor::matrix(2, 2, 1.0));
    Tape tape;
    CHECK_THROWS_AS(tape.backward(square(tape.leaf(x))), ContractError);
  }

  TEST_CASE("disconnected parameters get exactly zero gradient") {
    Parameter used("used", Tensor::matrix(2, 2, 0.5));
    Parameter unused("unused", Tensor::matrix(2, 2, 0.5));
    unused.grad.fill(0.0);
    Tape tape;
    Var other = square(tape.leaf(unused));
    (void)other;
    tape.backward(sum(square(tape.leaf(used))));
    for (double g : unused.grad.values()) CHECK(g == 0.0);
    for (double g : used.grad.values()) CHECK(g == 1.0);
  }

  TEST_CASE("gradients accumulate across backward calls") {
    Parameter x("x", Tensor::scalar(3.0));
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      tape.backward(sum(square(tape.leaf(x))));
    }
    CHECK(x.grad[0] == 12.0);
  }

  TEST_CASE("sum of matmul gradient matches finite differences") {
    Rng rng(3);
    Parameter w("w", random_tensor({3, 4}, rng));
    Parameter x("x", random_tensor({4, 2}, rng));
    const double err = gradient_relative_error(
        {&w, &x}, [&](Tape& t) { return sum(matmul(t.leaf(w), t.leaf(x))); });
    CHECK(err < 1e-6);
  }

  TEST_CASE("operations mixing tapes are rejected") {
    Tape a, b;
    CHECK_THROWS_AS(add(a.constant(Tensor::matrix(1, 1)), b.constant(Tensor::matrix(1, 1))), ContractError);
  }

  TEST_CASE("dimension errors") {
    Tape t;
    CHECK_THROWS_AS(matmul(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor::matrix(2, 3))), DimensionError);
    CHECK_THROWS_AS(add(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor::matrix(3, 2))), DimensionError);
    CHECK_THROWS_AS(add_row(t.constant(Tensor::matrix(2, 3)), t.constant(Tensor({4}))), DimensionError);
    CHECK_THROWS_AS(slice_rows(t.constant(Tensor::matrix(2, 3)), 1, 2), DimensionError);
  }
}

TEST_SUITE("gradient checks") {
  constexpr double kTol = 1e-5;

  TEST_CASE("binary elementwise ops") {
    Rng rng(101);
    Parameter a("a", random_tensor({3, 4}, rng));
    Parameter b("b", random_tensor({3, 4}, rng));
    const Tensor w = random_tensor({3, 4}, rng);
    CHECK(gradient_relative_error({&a, &b}, [&](Tape& t) { return weighted_sum(t.leaf(a) + t.leaf(b), w); }) < kTol);
    CHECK(gradient_relative_error({&a, &b}, [&](Tape& t) { return weighted_sum(t.leaf(a) - t.leaf(b), w); }) < kTol);
    CHECK(gradient_relative_error({&a, &b}, [&](Tape& t) { return weighted_sum(t.leaf(a) * t.leaf(b), w); }) < kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(scale(t.leaf(a), -2.5), w); }) < kTol);
  }

  TEST_CASE("matmul") {
    Rng rng(102);
    Parameter a("a", random_tensor({3, 5}, rng));
    Parameter b("b", random_tensor({5, 2}, rng));
    const Tensor w = random_tensor({3, 2}, rng);
    CHECK(gradient_relative_error({&a, &b}, [&](Tape& t) { return weighted_sum(matmul(t.leaf(a), t.leaf(b)), w); }) <
          kTol);
  }

  TEST_CASE("row broadcasts") {
    Rng rng(103);
    Parameter a("a", random_tensor({4, 3}, rng));
    Parameter row("row", random_tensor({3}, rng));
    const Tensor w = random_tensor({4, 3}, rng);
    CHECK(gradient_relative_error({&a, &row},
                                  [&](Tape& t) { return weighted_sum(add_row(t.leaf(a), t.leaf(row)), w); }) < kTol);
    CHECK(gradient_relative_error({&a, &row},
                                  [&](Tape& t) { return weighted_sum(mul_row(t.leaf(a), t.leaf(row)), w); }) < kTol);
  }

  TEST_CASE("activations") {
    Rng rng(104);
    Tensor x = random_tensor({3, 4}, rng);
    for (double& v : x.values())
      if (std::abs(v) < 0.05) v += 0.1;  // keep clear of the relu kink
    Parameter a("a", x);
    const Tensor w = random_tensor({3, 4}, rng);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(relu(t.leaf(a)), w); }) < kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(gelu(t.leaf(a)), w); }) < kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(square(t.leaf(a)), w); }) < kTol);
  }

  TEST_CASE("reductions") {
    Rng rng(105);
    Parameter a("a", random_tensor({3, 4}, rng));
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return sum(square(t.leaf(a))); }) < kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return mean(square(t.leaf(a))); }) < kTol);
    const Tensor target = random_tensor({3, 4}, rng);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return mse(t.leaf(a), t.constant(target)); }) < kTol);
  }

  TEST_CASE("softmax rows") {
    Rng rng(106);
    Parameter a("a", random_tensor({4, 4}, rng, -2.0, 2.0));
    const Tensor w = random_tensor({4, 4}, rng);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(softmax_rows(t.leaf(a)), w); }) < kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(softmax_rows(t.leaf(a), true), w); }) <
          kTol);
  }

  TEST_CASE("causal softmax zeroes the future") {
    Tape t;
    Rng rng(1);
    const Tensor out = softmax_rows(t.constant(random_tensor({4, 4}, rng)), true).value();
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        if (j > i) CHECK(out(i, j) == 0.0);
        total += out(i, j);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("layer norm") {
    Rng rng(107);
    Parameter a("a", random_tensor({3, 6}, rng, -3.0, 3.0));
    Parameter gain("gain", random_tensor({6}, rng, 0.5, 1.5));
    Parameter bias("bias", random_tensor({6}, rng));
    const Tensor w = random_tensor({3, 6}, rng);
    CHECK(gradient_relative_error({&a, &gain, &bias}, [&](Tape& t) {
            return weighted_sum(layer_norm(t.leaf(a), t.leaf(gain), t.leaf(bias)), w);
          }) < kTol);
  }

  TEST_CASE("layer norm output is standardized") {
    Rng rng(1);
    Tape t;
    const Tensor out =
        layer_norm(t.constant(random_tensor({2, 8}, rng, -5, 5)), t.constant(Tensor({8}, 1.0)), t.constant(Tensor({8})))
            .value();
    for (std::size_t r = 0; r < 2; ++r) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < 8; ++c) m += out(r, c) / 8.0;
      for (std::size_t c = 0; c < 8; ++c) v += (out(r, c) - m) * (out(r, c) - m) / 8.0;
      CHECK(std::abs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("slicing, concatenation and tiling") {
    Rng rng(108);
    Parameter a("a", random_tensor({4, 5}, rng));
    Parameter b("b", random_tensor({4, 2}, rng));
    const Tensor w_rows = random_tensor({2, 5}, rng);
    const Tensor w_cols = random_tensor({4, 3}, rng);
    const Tensor w_cat = random_tensor({4, 7}, rng);
    const Tensor w_tile = random_tensor({12, 5}, rng);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(slice_rows(t.leaf(a), 1, 2), w_rows); }) <
          kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(slice_cols(t.leaf(a), 2, 3), w_cols); }) <
          kTol);
    CHECK(gradient_relative_error({&a, &b}, [&](Tape& t) {
            return weighted_sum(concat_cols({t.leaf(a), t.leaf(b)}), w_cat);
          }) < kTol);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) { return weighted_sum(tile_rows(t.leaf(a), 3), w_tile); }) <
          kTol);
  }

  TEST_CASE("dropout with a fixed mask") {
    Rng rng(109);
    Parameter a("a", random_tensor({4, 6}, rng));
    const Tensor w = random_tensor({4, 6}, rng);
    CHECK(gradient_relative_error({&a}, [&](Tape& t) {
            Rng mask(5);
            return weighted_sum(dropout(t.leaf(a), 0.3, mask), w);
          }) < kTol);
  }

  TEST_CASE("dropout at rate zero is the identity") {
    Rng rng(1), mask(2);
    Tape t;
    const Tensor x = random_tensor({3, 3}, rng);
    CHECK(dropout(t.constant(x), 0.0, mask).value() == x);
  }

  TEST_CASE("dropout preserves the mean") {
    Rng mask(3);
    Tape t;
    const Tensor out = dropout(t.constant(Tensor::matrix(200, 200, 1.0)), 0.2, mask).value();
    double total = 0.0;
    std::size_t zeros = 0;
    for (double v : out.values()) {
      total += v;
      if (v == 0.0) ++zeros;
    }
    CHECK(total / out.size() == doctest::Approx(1.0).epsilon(0.02));
    CHECK(static_cast<double>(zeros) / out.size() == doctest::Approx(0.2).epsilon(0.05));
  }

  TEST_CASE("multi head attention") {
    Rng rng(110);
    const std::size_t batch = 2, seq = 3, d = 4;
    Parameter q("q", random_tensor({batch * seq, d}, rng));
    Parameter k("k", random_tensor({batch * seq, d}, rng));
    Parameter v("v", random_tensor({batch * seq, d}, rng));
    const Tensor w = random_tensor({batch * seq, d}, rng);
    for (bool causal : {false, true}) {
      CHECK(gradient_relative_error({&q, &k, &v}, [&](Tape& t) {
              return weighted_sum(multi_head_attention(t.leaf(q), t.leaf(k), t.leaf(v), batch, seq, 2, causal), w);
            }) < kTol);
    }
  }

  TEST_CASE("causal attention ignores later positions") {
    Rng rng(111);
    const std::size_t seq = 4, d = 4;
    Tensor q = random_tensor({seq, d}, rng), k = random_tensor({seq, d}, rng), v = random_tensor({seq, d}, rng);
    Tape t1;
    const Tensor before = multi_head_attention(t1.constant(q), t1.constant(k), t1.constant(v), 1, seq, 2, true).value();
    for (std::size_t c = 0; c < d; ++c) {
      k(seq - 1, c) += 10.0;
      v(seq - 1, c) -= 10.0;
    }
    Tape t2;
    const Tensor after = multi_head_attention(t2.constant(q), t2.constant(k), t2.constant(v), 1, seq, 2, true).value();
    for (std::size_t r = 0; r + 1 < seq; ++r)
      for (std::size_t c = 0; c < d; ++c) CHECK(before(r, c) == after(r, c));
  }

  TEST_CASE("single head attention matches a direct evaluation") {
    Rng rng(112);
    const std::size_t seq = 3, d = 2;
    const Tensor q = random_tensor({seq, d}, rng), k = random_tensor({seq, d}, rng), v = random_tensor({seq, d}, rng);
    Tape t;
    const Tensor out = multi_head_attention(t.constant(q), t.constant(k), t.constant(v), 1, seq, 1, false).value();
    Tensor scores = matmul(q, transpose(k));
    for (double& s : scores.values()) s /= std::sqrt(static_cast<double>(d));
    const Tensor expected = matmul(softmax(scores, 1), v);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - expected[i]) < 1e-14);
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    Parameter w("w", Tensor::from_rows({{1.0, -2.0}}));
    Adam opt({&w}, AdamOptions{.learning_rate = 0.1});
    w.zero_grad();
    opt.step();
    CHECK(w.value == Tensor::from_rows({{1.0, -2.0}}));
  }

  TEST_CASE("one step on a quadratic descends") {
    Parameter w("w", Tensor::scalar(1.0));
    Adam opt({&w}, AdamOptions{.learning_rate = 0.1});
    w.grad[0] = 2.0 * w.value[0];
    opt.step();
    CHECK(w.value[0] * w.value[0] < 1.0);
  }

  TEST_CASE("three steps on w squared match a hand stepped trace") {
    Parameter w("w", Tensor::scalar(1.0));
    Adam opt({&w}, AdamOptions{.learning_rate = 0.1});
    const double expected[] = {0.90000000049999999195, 0.80041222869179284338, 0.70158627294603027574};
    for (double e : expected) {
      w.zero_grad();
      Tape tape;
      tape.backward(sum(square(tape.leaf(w))));
      opt.step();
      CHECK(std::abs(w.value[0] - e) < 1e-12);
    }
    CHECK(opt.state().step == 3);
  }

  TEST_CASE("shape mismatch is rejected") {
    Tensor value = Tensor::matrix(2, 2);
    Tensor grad = Tensor::matrix(2, 3);
    AdamState state;
    CHECK_THROWS_AS(adam_step({&value}, {&grad}, state, {}), DimensionError);
  }

  TEST_CASE("training trajectory is bit reproducible") {
    auto run = [] {
      Rng rng(77);
      Parameter w("w", random_tensor({3, 2}, rng));
      const Tensor x = random_tensor({5, 3}, rng);
      const Tensor y = random_tensor({5, 2}, rng);
      Adam opt({&w}, AdamOptions{.learning_rate = 0.01});
      for (int i = 0; i < 20; ++i) {
        opt.zero_grad();
        Tape tape;
        tape.backward(mse(matmul(tape.constant(x), tape.leaf(w)), tape.constant(y)));
        opt.step();
      }
      return w.value;
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("rng") {
  TEST_CASE("golden values for seed 42") {
    Rng rng(42);
    CHECK(rng.next_u64() == 0x15780b2e0c2ec716ULL);
    CHECK(rng.next_u64() == 0x6104d9866d113a7eULL);
    CHECK(rng.next_u64() == 0xae17533239e499a1ULL);
  }

  TEST_CASE("same seed gives the same sequence") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  }

  TEST_CASE("derived streams are distinct and reproducible") {
    const Rng root(9);
    Rng d1 = root.derive("dataset"), d2 = root.derive("dataset"), other = root.derive("init");
    const auto x = d1.next_u64();
    CHECK(x == d2.next_u64());
    CHECK(x != other.next_u64());
    CHECK(root.derive(std::uint64_t{0}).next_u64() != root.derive(std::uint64_t{1}).next_u64());
  }

  TEST_CASE("uniform stays in range with the right mean") {
    Rng rng(5);
    double total = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      total += u;
    }
    CHECK(total / n == doctest::Approx(0.5).epsilon(0.01));
  }

  TEST_CASE("below covers the range") {
    Rng rng(6);
    int counts[5] = {};
    for (int i = 0; i < 5000; ++i) ++counts[rng.below(5)];
    for (int c : counts) CHECK(c > 850);
  }
}
