#include <doctest.h>

#include "support.hpp"
#include "tempoflow/diffusion.hpp"
#include "tempoflow/errors.hpp"

using namespace tempoflow;
using namespace tftest;

namespace {

// Always returns the true noise of a known trajectory.
class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(Tensor eps) : eps_(std::move(eps)) {}

 protected:
  Tensor predict(const Tensor&, const Tensor&, int, const DiffusionSchedule&) const override { return eps_; }

 private:
  Tensor eps_;
};

}  // namespace

TEST_CASE("linear schedule") {
  const DiffusionSchedule s = make_schedule(10, 1e-3);
  REQUIRE(s.alpha_bar.size() == 11);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[10] == 1e-3);
  CHECK(s.alpha_bar[5] == doctest::Approx(1.0 - 0.999 * 0.5));
  for (int l = 1; l <= 10; ++l) CHECK(s.alpha_bar[l] < s.alpha_bar[l - 1]);
  CHECK(s.eta == 0.0);
  CHECK_THROWS_AS(make_schedule(0, 1e-3), ContractViolation);
  CHECK_THROWS_AS(make_schedule(10, 1.0), ContractViolation);
}

TEST_CASE("an oracle denoiser inverts the forward process at every level") {
  std::mt19937_64 rng(4);
  const DiffusionSchedule s = make_schedule(6, 1e-3);
  const Tensor x0 = random_tensor(rng, {3, 4, 4});
  const Tensor eps = random_normal(rng, {3, 4, 4});
  const OracleDenoiser oracle(eps);
  const Tensor cond = Tensor::zeros({1, 4, 4});
  for (int start = 1; start <= 6; ++start) {
    const Tensor z = diffuse(x0, eps, start, s);
    const Tensor out = ddim_denoise(z, start, cond, oracle, s);
    CHECK((out.data() - x0.data()).abs().maxCoeff() < 1e-12);
  }
  CHECK(oracle.calls() == 21);
}

TEST_CASE("ddim makes one generator call per level") {
  const DiffusionSchedule s = make_schedule(10, 1e-3);
  ToyGenerator gen(GeneratorSpec{1, 4}, 1);
  const Tensor z = Tensor::constant({3, 3, 3}, 0.2), cond = Tensor::constant({1, 3, 3}, 0.5);
  for (int start : {1, 2, 7, 10}) {
    gen.reset_calls();
    ddim_denoise(z, start, cond, gen, s);
    CHECK(gen.calls() == static_cast<std::uint64_t>(start));
  }
  CHECK_THROWS_AS(ddim_denoise(z, 0, cond, gen, s), ContractViolation);
  CHECK_THROWS_AS(ddim_denoise(z, 11, cond, gen, s), ContractViolation);
}

TEST_CASE("the last step returns the generator's clean estimate") {
  std::mt19937_64 rng(8);
  const DiffusionSchedule s = make_schedule(4, 1e-3);
  const ToyGenerator gen(GeneratorSpec{3, 8}, 3);
  const Tensor z = random_normal(rng, {3, 5, 5}), cond = random_tensor(rng, {3, 5, 5}, 0, 1);
  const Tensor direct = gen.predict_clean(z, cond, 1, s);
  const Tensor stepped = ddim_denoise(z, 1, cond, gen, s);
  CHECK((direct.data() - stepped.data()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("toy generator is deterministic per seed") {
  std::mt19937_64 rng(2);
  const DiffusionSchedule s = make_schedule(10, 1e-3);
  const Tensor z = random_normal(rng, {3, 6, 6}), cond = random_tensor(rng, {1, 6, 6}, 0, 1);
  const Tensor a = toy_generator(z, cond, 5, GeneratorSpec{7, 8}, s);
  const Tensor b = toy_generator(z, cond, 5, GeneratorSpec{7, 8}, s);
  const Tensor c = toy_generator(z, cond, 5, GeneratorSpec{8, 8}, s);
  CHECK(a.shape() == Shape{3, 6, 6});
  CHECK(bit_equal(a.data(), b.data()));
  CHECK(!bit_equal(a.data(), c.data()));
  // The level is an input.
  CHECK(!bit_equal(a.data(), toy_generator(z, cond, 6, GeneratorSpec{7, 8}, s).data()));
  CHECK_THROWS_AS(toy_generator(z, Tensor::zeros({1, 5, 6}), 5, GeneratorSpec{}, s), ContractViolation);
}

TEST_CASE("sampler gradient matches finite differences at L=3") {
  std::mt19937_64 rng(13);
  const DiffusionSchedule s = make_schedule(3, 1e-3);
  const ToyGenerator gen(GeneratorSpec{5, 6}, 1);
  const Tensor cond = random_tensor(rng, {1, 4, 4}, 0, 1);
  const Tensor weights = random_tensor(rng, {3, 4, 4});
  for (int start : {1, 3}) {
    Tensor z = random_normal(rng, {3, 4, 4}) * 0.3;
    z.set_requires_grad();
    backward(sum(frame_decode(ddim_denoise(z, start, cond, gen, s)) * weights));
    const auto f = [&](const Tensor& v) {
      return sum(frame_decode(ddim_denoise(v, start, cond, gen, s)) * weights).item();
    };
    CHECK(relative_error(z.grad(), numeric_gradient(f, z.detach())) < 1e-6);
  }
}

TEST_CASE("frame_decode maps [-1,1] to [0,1] and clips") {
  Tensor z = Tensor::from_values({3}, {-3.0, 0.2, 5.0});
  z.set_requires_grad();
  const Tensor f = frame_decode(z);
  CHECK(f.data()[0] == 0.0);
  CHECK(f.data()[1] == doctest::Approx(0.6));
  CHECK(f.data()[2] == 1.0);
  backward(sum(f));
  CHECK(z.grad()[0] == 0.0);
  CHECK(z.grad()[1] == 0.5);
  CHECK(z.grad()[2] == 0.0);
}

TEST_CASE("renoise_to_level follows the forward process") {
  const DiffusionSchedule s = make_schedule(10, 1e-3);
  const Tensor x0 = Tensor::constant({3, 1, 1}, 0.5), zl = Tensor::constant({3, 1, 1}, -1.0);
  const Tensor r = renoise_to_level(x0, zl, 10, s);
  CHECK(r.data()[0] == doctest::Approx(std::sqrt(1e-3) * 0.5 - std::sqrt(1 - 1e-3)));
  CHECK_THROWS_AS(renoise_to_level(x0, zl, 0, s), ContractViolation);
}
