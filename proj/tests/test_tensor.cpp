#include <catch2/catch_amalgamated.hpp>

#include "graph_gen.hpp"
#include "nerfmark/nn.hpp"
#include "nerfmark/tensor.hpp"

using namespace nerfmark;

TEST_CASE("elementwise forward basics", "[tensor]") {
  Tensor x = Tensor::from_vector({3}, {0.0f, 1.0f, -1.0f});
  Tensor s = sigmoid(x);
  CHECK(s.values()[0] == Catch::Approx(0.5));
  CHECK(s.values()[1] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));

  Tensor ones = Tensor::filled({2, 3}, 1.0f);
  CHECK(sum(ones).item() == Catch::Approx(6.0));
  CHECK(mean(ones).item() == Catch::Approx(1.0));

  Tensor a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_vector({2, 2}, {5, 6, 7, 8});
  Tensor c = a * b;
  CHECK(c.values() == std::vector<float>{5, 12, 21, 32});
}

TEST_CASE("matmul identity returns operand exactly", "[tensor]") {
  Tensor eye = Tensor::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  std::vector<float> av(9);
  for (auto& v : av) v = rng.uniformf(-2, 2);
  Tensor a = Tensor::from_vector({3, 3}, av);
  Tensor out = matmul(eye, a);
  CHECK(out.values() == av);  // bit-exact
}

TEST_CASE("broadcasting rules", "[tensor]") {
  Tensor a = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from_vector({3}, {10, 20, 30});
  Tensor col = Tensor::from_vector({2, 1}, {100, 200});
  Tensor r1 = a + row;
  CHECK(r1.values() == std::vector<float>{11, 22, 33, 14, 25, 36});
  Tensor r2 = a + col;
  CHECK(r2.values() == std::vector<float>{101, 102, 103, 204, 205, 206});

  Tensor bad = Tensor::from_vector({4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(a + bad, Error);
  CHECK_THROWS_AS(matmul(a, a), Error);  // 2x3 @ 2x3
}

TEST_CASE("domain errors never produce silent NaN", "[tensor]") {
  Tensor neg = Tensor::from_vector({2}, {1.0f, -0.5f});
  CHECK_THROWS_AS(log(neg), Error);
  Tensor z = Tensor::from_vector({2}, {1.0f, 0.0f});
  CHECK_THROWS_AS(Tensor::filled({2}, 1.0f) / z, Error);
  Tensor inf = Tensor::from_vector({1}, {std::numeric_limits<float>::infinity()});
  CHECK_FALSE(inf.all_finite());
  CHECK_THROWS_AS(inf.check_finite("test"), Error);
}

TEST_CASE("backward on simple graphs", "[tensor]") {
  SECTION("d(sum(w*w))/dw = 2w") {
    Tensor w = Tensor::from_vector({2}, {1.0f, 2.0f}, true);
    Tensor loss = sum(w * w);
    backward(loss);
    CHECK(w.grad()[0] == Catch::Approx(2.0));
    CHECK(w.grad()[1] == Catch::Approx(4.0));
  }
  SECTION("sigmoid'(0) = 1/4") {
    Tensor x = Tensor::scalar(0.0f, true);
    Tensor y = sigmoid(x);
    backward(y);
    CHECK(x.grad()[0] == Catch::Approx(0.25));
  }
  SECTION("backward on non-scalar is rejected") {
    Tensor x = Tensor::from_vector({2}, {1, 2}, true);
    Tensor y = x * x;
    CHECK_THROWS_AS(backward(y), Error);
    discard_tape();
  }
  SECTION("backward twice on the same tape is rejected") {
    Tensor x = Tensor::scalar(1.0f, true);
    Tensor y = sum(x * x);
    backward(y);
    CHECK_THROWS_AS(backward(y), Error);
  }
  SECTION("grads accumulate across consecutive tapes") {
    Tensor x = Tensor::scalar(3.0f, true);
    backward(sum(x * 2.0f));
    backward(sum(x * 5.0f));
    CHECK(x.grad()[0] == Catch::Approx(7.0));
  }
  SECTION("NoGradGuard suppresses recording") {
    Tensor x = Tensor::scalar(1.0f, true);
    size_t before = tape_size();
    {
      NoGradGuard ng;
      Tensor y = x * x;
      CHECK(tape_size() == before);
      CHECK_THROWS_AS(backward(y), Error);
    }
  }
  SECTION("gradient seeding on non-scalars") {
    Tensor x = Tensor::from_vector({3}, {1, 2, 3}, true);
    Tensor y = x * x;
    std::vector<float> seed = {1.0f, 0.5f, 2.0f};
    backward(y, seed);
    CHECK(x.grad()[0] == Catch::Approx(2.0));
    CHECK(x.grad()[1] == Catch::Approx(2.0));
    CHECK(x.grad()[2] == Catch::Approx(12.0));
  }
}

TEST_CASE("reductions and shape ops", "[tensor]") {
  Tensor a = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum_axis(a, 1).values() == std::vector<float>{6, 15});
  CHECK(sum_axis(a, 0).values() == std::vector<float>{5, 7, 9});
  CHECK(mean_axis(a, 1).values() == std::vector<float>{2, 5});

  Tensor cs = cumsum_exclusive(a);
  CHECK(cs.values() == std::vector<float>{0, 1, 3, 0, 4, 9});

  Tensor sl = slice(a, 1, 1, 2);
  CHECK(sl.values() == std::vector<float>{2, 3, 5, 6});
  CHECK_THROWS_AS(slice(a, 1, 2, 5), Error);

  Tensor cc = concat({a, a}, 0);
  CHECK(cc.shape() == Shape{4, 3});

  Tensor p = permute(a, {1, 0});
  CHECK(p.shape() == Shape{3, 2});
  CHECK(p.values() == std::vector<float>{1, 4, 2, 5, 3, 6});

  Tensor r = reshape(a, {3, -1});
  CHECK(r.shape() == Shape{3, 2});
}

TEST_CASE("determinism: identical graphs give identical bits", "[tensor]") {
  auto run = [] {
    Rng rng(42);
    std::vector<float> v(60);
    for (auto& x : v) x = rng.uniformf(-1, 1);
    Tensor a = Tensor::from_vector({6, 10}, v);
    Tensor b = sigmoid(a) * 3.0f;
    Tensor c = sum_axis(b, 1);
    return sum(exp(c * 0.1f)).item();
  };
  float r1 = run(), r2 = run();
  CHECK(std::memcmp(&r1, &r2, sizeof(float)) == 0);
}

TEST_CASE("adam optimizer", "[tensor][adam]") {
  SECTION("default learning rate matches the documented setting") {
    AdamConfig cfg;
    CHECK(cfg.lr == Catch::Approx(1e-3));
    CHECK(cfg.beta1 == Catch::Approx(0.9));
    CHECK(cfg.beta2 == Catch::Approx(0.999));
  }
  SECTION("zero gradient leaves parameter unchanged") {
    Tensor p = Tensor::from_vector({2}, {1.0f, -2.0f}, true);
    p.d_->grad.assign(2, 0.0f);
    Adam opt({p});
    opt.step();
    CHECK(p.values() == std::vector<float>{1.0f, -2.0f});
    CHECK(opt.step_count() == 1);
  }
  SECTION("constant gradient drives |step| toward lr") {
    Tensor p = Tensor::scalar(0.0f, true);
    Adam opt({p}, {.lr = 1e-3f});
    float prev = p.item();
    float last_delta = 0.0f;
    for (int i = 0; i < 200; ++i) {
      p.d_->grad.assign(1, 0.37f);
      opt.step();
      last_delta = std::abs(p.item() - prev);
      prev = p.item();
    }
    CHECK(last_delta == Catch::Approx(1e-3).epsilon(0.05));
  }
  SECTION("missing gradient is an error") {
    Tensor p = Tensor::scalar(0.0f, true);
    Adam opt({p});
    CHECK_THROWS_AS(opt.step(), Error);
  }
  SECTION("grads are zeroed after a step") {
    Tensor p = Tensor::scalar(1.0f, true);
    Adam opt({p});
    p.d_->grad.assign(1, 1.0f);
    opt.step();
    CHECK_FALSE(p.has_grad());
  }
}

TEST_CASE("reverse mode matches finite differences on random graphs",
          "[tensor][fd]") {
  auto rep = testgen::run_fd_sweep(/*seed=*/20240817, /*n_graphs=*/40);
  INFO("graphs=" << rep.graphs << " params=" << rep.params_checked
                 << " max_rel_err=" << rep.max_rel_err);
  CHECK(rep.graphs == 40);
  CHECK(rep.params_checked > 500);
  CHECK(rep.max_rel_err < 1e-4);
}
