// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpgd/error.hpp"
#include "mpgd/losses.hpp"
#include "mpgd/models.hpp"
#include "mpgd/rng.hpp"
#include "support/oracles.hpp"

using namespace mpgd;
using models::Activation;
using models::Model;
using models::ModelConfig;
using models::ModelKind;
namespace fs = std::filesystem;

namespace {

ModelConfig mlp_config(std::vector<std::size_t> widths, Activation act,
                       std::uint64_t seed = 0) {
  ModelConfig mc;
  mc.kind = ModelKind::kMlp;
  mc.layer_widths = std::move(widths);
  mc.activation = act;
  mc.seed = seed;
  return mc;
}

ModelConfig fcn_config(std::vector<std::size_t> channels, std::size_t kernel,
                       Activation act, std::uint64_t seed = 0) {
  ModelConfig mc;
  mc.kind = ModelKind::kFcn;
  mc.channels = std::move(channels);
  mc.kernel_size = kernel;
  mc.activation = act;
  mc.seed = seed;
  return mc;
}

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace

TEST_CASE("init shapes and determinism") {
  const Model a = models::init(mlp_config({4, 8, 2}, Activation::kRelu, 7));
  REQUIRE(a.params.size() == 4);
  CHECK(a.params[0].name == "w0");
  CHECK(a.params[0].value.shape() == std::vector<std::size_t>{8, 4});
  CHECK(a.params[1].value.size() == 8);
  CHECK(a.params[2].value.shape() == std::vector<std::size_t>{2, 8});
  CHECK(a.params[3].value.size() == 2);

  const Model b = models::init(mlp_config({4, 8, 2}, Activation::kRelu, 7));
  for (std::size_t i = 0; i < a.params.size(); ++i)
    CHECK(a.params[i].value == b.params[i].value);

  const Model c = models::init(mlp_config({4, 8, 2}, Activation::kRelu, 8));
  CHECK_FALSE(c.params[0].value == a.params[0].value);
}

TEST_CASE("init respects the fan-in bound and zero biases") {
  const Model m = models::init(mlp_config({4, 8, 2}, Activation::kRelu, 3));
  for (std::size_t i = 0; i < m.params[0].value.size(); ++i)
    CHECK(std::fabs(m.params[0].value[i]) < 0.5);  // s = sqrt(1/4)
  for (std::size_t i = 0; i < m.params[1].value.size(); ++i)
    CHECK(m.params[1].value[i] == 0.0);

  const Model f = models::init(fcn_config({2, 4, 1}, 3, Activation::kRelu, 3));
  const double bound = std::sqrt(1.0 / (2.0 * 9.0));
  for (std::size_t i = 0; i < f.params[0].value.size(); ++i)
    CHECK(std::fabs(f.params[0].value[i]) < bound);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(models::init(mlp_config({4}, Activation::kRelu)), Error);
  CHECK_THROWS_AS(models::init(mlp_config({4, 0, 2}, Activation::kRelu)), Error);
  CHECK_THROWS_AS(models::init(fcn_config({2, 4, 1}, 4, Activation::kRelu)),
                  Error);
}

TEST_CASE("identity one-layer mlp is the identity map") {
  Model m = models::init(mlp_config({1, 1}, Activation::kIdentity));
  m.params[0].value = Tensor({1, 1}, {1.0});
  m.params[1].value = Tensor({1, 1}, {0.0});
  CHECK(models::predict(m, vec({3.0})) == vec({3.0}));
}

TEST_CASE("zero weights leave only the bias") {
  Model m = models::init(mlp_config({3, 2}, Activation::kIdentity));
  m.params[0].value = Tensor({2, 3});
  m.params[1].value = Tensor({2, 1}, {0.7, -0.3});
  const Tensor out = models::predict(m, vec({9, 8, 7}));
  CHECK(out == vec({0.7, -0.3}));
}

TEST_CASE("relu fcn clips a negative map to zero") {
  Model m = models::init(fcn_config({1, 1}, 1, Activation::kRelu));
  m.params[0].value = Tensor({1, 1, 1, 1}, {2.0});
  const Tensor input = Tensor::full({1, 3, 3}, -1.0);
  const Tensor out = models::predict(m, input);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
  // identity activation confirms the pre-activation was -2
  Model id = models::init(fcn_config({1, 1}, 1, Activation::kIdentity));
  id.params[0].value = Tensor({1, 1, 1, 1}, {2.0});
  CHECK(models::predict(id, input)[0] == -2.0);
}

TEST_CASE("forward validates input shape") {
  const Model m = models::init(mlp_config({3, 2}, Activation::kIdentity));
  CHECK_THROWS_AS(models::predict(m, vec({1, 2})), Error);
  const Model f = models::init(fcn_config({2, 1}, 3, Activation::kRelu));
  CHECK_THROWS_AS(models::predict(f, Tensor({1, 4, 4})), Error);
}

TEST_CASE("forward is pure") {
  const Model m = models::init(mlp_config({4, 3, 2}, Activation::kRelu, 5));
  const Model copy = m;
  Rng rng(5);
  Tensor x({4});
  for (std::size_t i = 0; i < 4; ++i) x[i] = rng.uniform(-1, 1);
  const Tensor y1 = models::predict(m, x);
  const Tensor y2 = models::predict(m, x);
  CHECK(y1 == y2);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    CHECK(m.params[i].value == copy.params[i].value);
}

TEST_CASE("parameter gradients through every loss pass finite differences") {
  Rng rng(17);
  const std::vector<losses::LossSpec> specs = {
      losses::LossSpec::mse(), losses::LossSpec::max_error(),
      losses::LossSpec::shrinkage(10, 0.2), losses::LossSpec::biased(20, 0.4),
      losses::LossSpec::amse(0.05)};

  const auto check_model = [&](const Model& m, const Tensor& x,
                               const Tensor& target) {
    for (const auto& spec : specs) {
      std::vector<Tensor> init;
      for (const auto& p : m.params) init.push_back(p.value);
      testing::GraphBuilder build;
      if (spec.kind == losses::LossKind::kAmse) {
        // selection frozen from the unperturbed prediction
        const auto crit =
            losses::ias_sample(models::predict(m, x), target, *spec.lambda);
        build = [&m, &x, &target, crit](const std::vector<ad::NodePtr>& params) {
          return losses::amse(models::forward(m, params, x), target, crit);
        };
      } else {
        build = [&m, &x, &target, spec](const std::vector<ad::NodePtr>& params) {
          return losses::compute_loss(spec, models::forward(m, params, x), target)
              .loss;
        };
      }
      const auto r = testing::grad_check(build, init);
      CAPTURE(spec.name());
      CAPTURE(r.max_rel_err);
      CHECK(r.ok);
    }
  };

  SUBCASE("mlp") {
    const Model m = models::init(mlp_config({3, 4, 2}, Activation::kRelu, 19));
    Tensor x({3}), target({2});
    for (std::size_t i = 0; i < 3; ++i) x[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < 2; ++i) target[i] = rng.uniform(0, 1);
    check_model(m, x, target);
  }

  SUBCASE("fcn") {
    const Model m = models::init(fcn_config({2, 3, 1}, 3, Activation::kRelu, 23));
    Tensor x({2, 5, 5}), target({1, 5, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.uniform(0, 1);
    check_model(m, x, target);
  }
}

TEST_CASE("checkpoint round-trip") {
  const auto dir = fs::temp_directory_path() / "mpgd_test_models";
  fs::remove_all(dir);

  const Model m = models::init(fcn_config({2, 4, 1}, 3, Activation::kRelu, 29));
  models::save_model(m, dir / "ckpt");
  const Model back = models::load_model(dir / "ckpt");
  CHECK(back.config.kind == m.config.kind);
  CHECK(back.config.channels == m.config.channels);
  CHECK(back.config.kernel_size == m.config.kernel_size);
  REQUIRE(back.params.size() == m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.params[i].name == m.params[i].name);
    CHECK(back.params[i].value == m.params[i].value);
  }

  SUBCASE("missing manifest") {
    CHECK_THROWS_AS(models::load_model(dir / "nope"), Error);
  }
  SUBCASE("tampered architecture is rejected") {
    std::ofstream manifest(dir / "ckpt" / "model.txt");
    manifest << "kind = fcn\nchannels = 2,5,1\nkernel = 3\n"
             << "activation = relu\nseed = 29\nparams = k0,k1\n";
    manifest.close();
    CHECK_THROWS_AS(models::load_model(dir / "ckpt"), Error);
  }
  fs::remove_all(dir);
}
