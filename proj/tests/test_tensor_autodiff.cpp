// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mpgd/autodiff.hpp"
#include "mpgd/error.hpp"
#include "mpgd/rng.hpp"
#include "mpgd/tensor.hpp"
#include "support/oracles.hpp"

using namespace mpgd;
namespace fs = std::filesystem;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "mpgd_test_tensor";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(t.reshaped({4}), Error);
  CHECK(t.reshaped({3, 2}).shape() == std::vector<std::size_t>{3, 2});
}

TEST_CASE("tensor binary file round-trip is bit-exact") {
  const auto dir = temp_dir();
  Rng rng(11);
  const Tensor t = random_tensor({3, 4, 5}, rng);
  t.save(dir / "t.mpgt");
  const Tensor back = Tensor::load(dir / "t.mpgt");
  CHECK(back == t);

  SUBCASE("bad magic is rejected") {
    std::ofstream bad(dir / "bad.mpgt", std::ios::binary);
    bad << "NOPE" << std::string(16, '\0');
    bad.close();
    CHECK_THROWS_AS(Tensor::load(dir / "bad.mpgt"), Error);
  }
  SUBCASE("truncated payload is rejected") {
    std::ifstream in(dir / "t.mpgt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream cut(dir / "cut.mpgt", std::ios::binary);
    cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    cut.close();
    CHECK_THROWS_AS(Tensor::load(dir / "cut.mpgt"), Error);
  }
  fs::remove_all(dir);
}

TEST_CASE("elementwise forward values") {
  auto a = ad::constant(vec({1, 2}));
  auto b = ad::constant(vec({3, 4}));
  CHECK(ad::add(a, b)->value == vec({4, 6}));
  CHECK(ad::square(ad::constant(vec({0, -3})))->value == vec({0, 9}));
  CHECK(ad::sub(a, b)->value == vec({-2, -2}));
  CHECK(ad::mul(a, b)->value == vec({3, 8}));
  CHECK(ad::abs(ad::constant(vec({-1.5, 2})))->value == vec({1.5, 2}));
  CHECK(ad::max_with_scalar(ad::constant(vec({-1, 3})), 0.0)->value == vec({0, 3}));
}

TEST_CASE("product rule on mul") {
  auto a = ad::parameter(vec({2}));
  auto b = ad::parameter(vec({5}));
  auto root = ad::sum(ad::mul(a, b));
  ad::backward(root);
  CHECK(a->grad[0] == 5.0);
  CHECK(b->grad[0] == 2.0);
}

TEST_CASE("scalar broadcast in both positions") {
  auto a = ad::parameter(vec({1, 2, 3}));
  auto s = ad::parameter(Tensor::scalar(2.0));
  auto root = ad::sum(ad::mul(a, s));
  ad::backward(root);
  CHECK(root->value[0] == 12.0);
  CHECK(s->grad[0] == 6.0);  // sum of the other operand
  CHECK(a->grad[0] == 2.0);

  auto swapped = ad::sum(ad::mul(s, a));
  CHECK(swapped->value[0] == 12.0);
}

TEST_CASE("elementwise shape errors") {
  auto a = ad::constant(vec({1, 2}));
  auto b = ad::constant(vec({1, 2, 3}));
  CHECK_THROWS_AS(ad::add(a, b), Error);
  CHECK_THROWS_AS(ad::div(a, ad::constant(vec({1.0, 0.0}))), Error);
}

TEST_CASE("reductions") {
  CHECK(ad::mean(ad::constant(vec({2, 4, 6})))->value[0] == 4.0);
  CHECK(ad::sum(ad::constant(vec({2, 4, 6})))->value[0] == 12.0);
  CHECK(ad::max(ad::constant(vec({2, 9, 6})))->value[0] == 9.0);

  auto g = ad::gather_mean(ad::constant(vec({1, 2, 3, 4})), {1, 3});
  CHECK(g->value[0] == 3.0);

  auto a = ad::parameter(vec({1, 2, 3, 4}));
  auto root = ad::gather_mean(a, {1, 3});
  ad::backward(root);
  CHECK(a->grad.values() == std::vector<double>{0.0, 0.5, 0.0, 0.5});
}

TEST_CASE("gather_mean index validation") {
  auto a = ad::constant(vec({1, 2, 3}));
  CHECK_THROWS_AS(ad::gather_mean(a, {}), Error);
  CHECK_THROWS_AS(ad::gather_mean(a, {0, 3}), Error);
  CHECK_THROWS_AS(ad::gather_mean(a, {1, 1}), Error);
  CHECK_THROWS_AS(ad::gather_mean(a, {2, 1}), Error);
}

TEST_CASE("gather_mean over all indices equals mean bitwise") {
  Rng rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor t = random_tensor({17}, rng);
    std::vector<std::size_t> all(t.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto a = ad::constant(t);
    CHECK(ad::gather_mean(a, all)->value[0] == ad::mean(a)->value[0]);
  }
}

TEST_CASE("max routes gradient to the first arg-max entry") {
  auto a = ad::parameter(vec({3, 7, 7, 1}));
  auto root = ad::max(a);
  ad::backward(root);
  CHECK(a->grad.values() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("abs subgradient at zero is zero") {
  auto a = ad::parameter(vec({0.0, -2.0}));
  auto root = ad::sum(ad::abs(a));
  ad::backward(root);
  CHECK(a->grad[0] == 0.0);
  CHECK(a->grad[1] == -1.0);
}

TEST_CASE("matmul values") {
  auto eye = ad::constant(Tensor({2, 2}, {1, 0, 0, 1}));
  auto x = ad::constant(Tensor({2, 2}, {5, 6, 7, 8}));
  CHECK(ad::matmul(eye, x)->value == x->value);

  auto row = ad::constant(Tensor({1, 2}, {1, 2}));
  auto col = ad::constant(Tensor({2, 1}, {3, 4}));
  CHECK(ad::matmul(row, col)->value == Tensor({1, 1}, {11}));

  CHECK_THROWS_AS(ad::matmul(row, row), Error);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(31);
  const Tensor a0 = random_tensor({2, 3}, rng);
  const Tensor b0 = random_tensor({3, 2}, rng);
  const auto build = [](const std::vector<ad::NodePtr>& p) {
    return ad::mean(ad::square(ad::matmul(p[0], p[1])));
  };
  const auto r = testing::grad_check(build, {a0, b0});
  CHECK(r.ok);
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("conv2d values") {
  Rng rng(41);
  const Tensor img = random_tensor({1, 4, 4}, rng);

  auto scale2 = ad::conv2d(ad::constant(img), ad::constant(Tensor({1, 1, 1, 1}, {2.0})));
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(scale2->value[i] == 2.0 * img[i]);

  auto zero = ad::conv2d(ad::constant(img), ad::constant(Tensor({1, 1, 3, 3})));
  for (std::size_t i = 0; i < zero->value.size(); ++i)
    CHECK(zero->value[i] == 0.0);

  CHECK_THROWS_AS(ad::conv2d(ad::constant(img), ad::constant(Tensor({1, 1, 2, 2}))),
                  Error);
  CHECK_THROWS_AS(ad::conv2d(ad::constant(img), ad::constant(Tensor({1, 2, 3, 3}))),
                  Error);
}

TEST_CASE("conv2d cross-correlation orientation") {
  // A kernel with a single off-center tap shifts the image; cross-correlation
  // semantics mean out[y][x] = in[y + dy - ph][x + dx - pw].
  Tensor img({1, 3, 3});
  img[1 * 3 + 1] = 1.0;  // center pixel
  Tensor k({1, 1, 3, 3});
  k[0 * 3 + 0] = 1.0;  // dy = 0, dx = 0 -> reads in[y - 1][x - 1]
  auto out = ad::conv2d(ad::constant(img), ad::constant(k));
  CHECK(out->value[2 * 3 + 2] == 1.0);
  CHECK(out->value[1 * 3 + 1] == 0.0);
}

namespace {

/// Brute-force same-padded cross-correlation, index-checked.
Tensor conv2d_reference(const Tensor& x, const Tensor& k) {
  const std::size_t ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t co = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  Tensor out({co, h, w});
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < ci; ++ic)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - ph;
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + dx) - pw;
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
                  sx >= static_cast<std::ptrdiff_t>(w))
                continue;
              acc += x[(ic * h + static_cast<std::size_t>(sy)) * w +
                       static_cast<std::size_t>(sx)] *
                     k[((oc * ci + ic) * kh + dy) * kw + dx];
            }
        out[(oc * h + y) * w + xx] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the brute-force oracle, kernels wider than the map included") {
  Rng rng(45);
  const std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
      shapes = {
          {{1, 4, 4}, {2, 1, 3, 3}},
          {{2, 5, 3}, {1, 2, 3, 5}},
          {{1, 1, 3}, {1, 1, 5, 5}},  // kernel taller than the image
          {{1, 2, 2}, {1, 1, 7, 7}},  // kernel dwarfs the image
      };
  for (const auto& [xs, ks] : shapes) {
    const Tensor x = random_tensor(xs, rng);
    const Tensor k = random_tensor(ks, rng);
    const Tensor got = ad::conv2d(ad::constant(x), ad::constant(k))->value;
    const Tensor want = conv2d_reference(x, k);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  // Gradients stay finite-difference-correct in the oversized-kernel regime.
  const Tensor img = random_tensor({1, 2, 2}, rng);
  const Tensor kern = random_tensor({1, 1, 5, 5}, rng);
  const auto build = [](const std::vector<ad::NodePtr>& p) {
    return ad::mean(ad::square(ad::conv2d(p[0], p[1])));
  };
  CHECK(testing::grad_check(build, {img, kern}).ok);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(51);
  const Tensor img = random_tensor({1, 4, 4}, rng);
  const Tensor kern = random_tensor({1, 1, 3, 3}, rng);
  const auto build = [](const std::vector<ad::NodePtr>& p) {
    return ad::mean(ad::square(ad::conv2d(p[0], p[1])));
  };
  const auto r = testing::grad_check(build, {img, kern});
  CHECK(r.ok);
  CHECK(r.max_rel_err < 1e-5);

  // Multi-channel case.
  const Tensor img2 = random_tensor({2, 5, 5}, rng);
  const Tensor kern2 = random_tensor({3, 2, 3, 3}, rng);
  const auto r2 = testing::grad_check(build, {img2, kern2});
  CHECK(r2.ok);
}

TEST_CASE("backward basics") {
  auto w = ad::parameter(vec({1, 2}));
  auto root = ad::sum(ad::square(w));
  ad::backward(root);
  CHECK(w->grad.values() == std::vector<double>{2, 4});

  auto w2 = ad::parameter(vec({3}));
  auto root2 = ad::mean(ad::square(ad::sub(w2, ad::constant(vec({1})))));
  ad::backward(root2);
  CHECK(w2->grad[0] == 4.0);

  CHECK_THROWS_AS(ad::backward(ad::parameter(vec({1, 2}))), Error);
}

TEST_CASE("backward is deterministic across runs") {
  Rng rng(61);
  const Tensor a0 = random_tensor({8}, rng);
  const Tensor b0 = random_tensor({8}, rng);
  auto run = [&]() {
    auto a = ad::parameter(a0);
    auto b = ad::parameter(b0);
    auto root = ad::mean(ad::square(ad::mul(ad::add(a, b), ad::sub(a, b))));
    ad::backward(root);
    return a->grad;
  };
  const Tensor g1 = run();
  const Tensor g2 = run();
  CHECK(g1 == g2);

  // Same graph object, backward twice: grads are re-zeroed, not accumulated.
  auto a = ad::parameter(a0);
  auto root = ad::sum(ad::square(a));
  ad::backward(root);
  const Tensor first = a->grad;
  ad::backward(root);
  CHECK(a->grad == first);
}

TEST_CASE("gradient of a sum of independent subgraphs is the sum of gradients") {
  Rng rng(71);
  const Tensor w0 = random_tensor({6}, rng);
  auto build_f = [](const ad::NodePtr& w) { return ad::mean(ad::square(w)); };
  auto build_g = [](const ad::NodePtr& w) {
    return ad::max(ad::abs(ad::mul(w, 1.5)));
  };

  auto wf = ad::parameter(w0);
  ad::backward(build_f(wf));
  auto wg = ad::parameter(w0);
  ad::backward(build_g(wg));
  auto wb = ad::parameter(w0);
  ad::backward(ad::add(build_f(wb), build_g(wb)));

  for (std::size_t i = 0; i < w0.size(); ++i)
    CHECK(wb->grad[i] == doctest::Approx(wf->grad[i] + wg->grad[i]).epsilon(1e-12));
}

TEST_CASE("non-finite results are reported") {
  auto big = ad::constant(vec({710.0}));
  CHECK_THROWS_AS(ad::exp(big), Error);  // exp overflows to inf
  auto huge = ad::constant(vec({1e308}));
  CHECK_THROWS_AS(ad::mul(huge, 1e10), Error);
}

namespace {

/// Deterministic random composite graph over the elementwise/reduce/matmul op
/// set. The builder re-seeds its own Rng so repeated calls make the same
/// graph, which is what the finite-difference oracle requires.
testing::GraphBuilder make_random_builder(std::uint64_t seed) {
  return [seed](const std::vector<ad::NodePtr>& p) -> ad::NodePtr {
    Rng rng(seed);
    ad::NodePtr v = p[0];
    const std::size_t n_ops = 3 + rng.index(4);
    for (std::size_t op = 0; op < n_ops; ++op) {
      switch (rng.index(9)) {
        case 0: v = ad::add(v, p[1]); break;
        case 1: v = ad::sub(v, p[1]); break;
        case 2: v = ad::mul(v, p[1]); break;
        case 3: v = ad::div(v, ad::add(ad::square(p[1]), 1.0)); break;
        case 4: v = ad::add(v, rng.uniform(-1.0, 1.0)); break;
        case 5: v = ad::mul(v, rng.uniform(-1.5, 1.5)); break;
        case 6: v = ad::abs(v); break;
        case 7: v = ad::max_with_scalar(v, rng.uniform(-1.0, 1.0)); break;
        case 8: v = ad::exp(ad::div(v, ad::add(ad::square(v), 10.0))); break;
      }
    }
    ad::NodePtr scalar;
    switch (rng.index(3)) {
      case 0: scalar = ad::mean(v); break;
      case 1: scalar = ad::mul(ad::sum(v), 0.25); break;
      default: {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < v->value.size(); ++i)
          if (rng.unit() < 0.5) idx.push_back(i);
        if (idx.empty()) idx.push_back(0);
        scalar = ad::gather_mean(v, idx);
      }
    }
    auto mat_part = ad::mean(ad::square(ad::matmul(p[2], p[3])));
    return ad::add(scalar, ad::mul(mat_part, 0.5));
  };
}

}  // namespace

TEST_CASE("finite-difference oracle over 100 random composite graphs") {
  Rng master(0xC0FFEE);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::vector<Tensor> init = {
        random_tensor({5}, master), random_tensor({5}, master),
        random_tensor({2, 3}, master), random_tensor({3, 2}, master)};
    const auto build = make_random_builder(master.next_u64());
    const auto r = testing::grad_check(build, init);
    CAPTURE(rep);
    CAPTURE(r.max_rel_err);
    CHECK(r.ok);
    ++checked;
  }
  CHECK(checked == 100);
}
