#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mclone/gradcheck.hpp"
#include "mclone/mclt.hpp"
#include "mclone/ops.hpp"

using namespace mclone;

namespace {

Tensor random_tensor(Shape dims, std::uint64_t seed, float stddev = 1.0f) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(dims), rng, stddev);
}

// Independent oracle: plain triple loop in double.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  const auto m = a.dims()[0], n = a.dims()[1], p = b.dims()[1];
  std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < p; ++j)
      for (std::int64_t k = 0; k < n; ++k)
        out[static_cast<std::size_t>(i * p + j)] +=
            static_cast<double>(a[static_cast<std::size_t>(i * n + k)]) * b[static_cast<std::size_t>(k * p + j)];
  return out;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).vec() == std::vector<float>{1, 2, 3, 4});

  Tensor sel({2, 2}, {1, 0, 0, 0});
  Tensor r({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(sel, r).vec() == std::vector<float>{5, 6, 0, 0});

  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = random_tensor({4, 2}, 2);
  auto expect = matmul_oracle(a, b);
  auto got = matmul(a, b);
  REQUIRE(got.dims() == Shape{3, 2});
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-6));
}

TEST_CASE("matmul batched and shape errors") {
  Tensor a = random_tensor({2, 3, 4}, 3);
  Tensor b = random_tensor({2, 4, 5}, 4);
  Tensor w = random_tensor({4, 5}, 5);
  auto batched = matmul(a, b);
  auto shared = matmul(a, w);
  CHECK(batched.dims() == Shape{2, 3, 5});
  CHECK(shared.dims() == Shape{2, 3, 5});
  for (int i = 0; i < 2; ++i) {
    Tensor ai({3, 4}, std::vector<float>(a.vec().begin() + i * 12, a.vec().begin() + (i + 1) * 12));
    auto expect = matmul_oracle(ai, w);
    for (std::size_t k = 0; k < expect.size(); ++k)
      CHECK(shared[static_cast<std::size_t>(i) * 15 + k] == doctest::Approx(expect[k]).epsilon(1e-5));
  }
  try {
    matmul(random_tensor({3, 4}, 1), random_tensor({3, 2}, 2));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[3,4]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity property") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tensor a = random_tensor({3, 4}, 100 + s), b = random_tensor({4, 5}, 200 + s), c = random_tensor({5, 2}, 300 + s);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < left.numel(); ++i) {
      num += std::pow(left[i] - right[i], 2);
      den += std::pow(left[i], 2);
    }
    CHECK(std::sqrt(num / den) < 1e-4);
  }
}

TEST_CASE("softmax_last examples") {
  auto s = softmax_last(Tensor({2}, {0, 0}));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  auto big = softmax_last(Tensor({2}, {1000, 0}));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  auto logs = softmax_last(Tensor({3}, {0.0f, std::log(2.0f), std::log(3.0f)}));
  CHECK(logs[0] == doctest::Approx(1.0 / 6).epsilon(1e-6));
  CHECK(logs[1] == doctest::Approx(2.0 / 6).epsilon(1e-6));
  CHECK(logs[2] == doctest::Approx(3.0 / 6).epsilon(1e-6));

  CHECK_THROWS_AS(softmax_last(Tensor({2}, {std::nanf(""), 0})), NumericError);
}

TEST_CASE("softmax rows sum to one (property)") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> len(1, 9);
  std::uniform_real_distribution<float> spread(0.1f, 50.0f);
  for (int trial = 0; trial < 200; ++trial) {
    const int f = len(rng);
    Tensor x = Tensor::randn({7, f}, rng, spread(rng));
    auto y = softmax_last(x);
    for (int r = 0; r < 7; ++r) {
      double total = 0;
      for (int j = 0; j < f; ++j) {
        CHECK(y[static_cast<std::size_t>(r * f + j)] >= 0.0f);
        total += y[static_cast<std::size_t>(r * f + j)];
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("mse examples") {
  Tensor a = random_tensor({4, 3}, 11);
  CHECK(mse(a, a).item() == 0.0f);
  CHECK(mse(Tensor::zeros({2, 5, 3}), Tensor::ones({2, 5, 3})).item() == 1.0f);
  Tensor b = random_tensor({4, 3}, 12);
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::pow(static_cast<double>(a[i]) - b[i], 2);
  CHECK(mse(a, b).item() == doctest::Approx(acc / 12).epsilon(1e-6));
  CHECK_THROWS_AS(mse(a, Tensor::zeros({3, 4})), ShapeError);
}

TEST_CASE("backward closed forms and errors") {
  Tensor x = random_tensor({3, 4}, 21);
  {
    Tape tape;
    auto xl = tape.watch(x);
    tape.backward(sum(xl));
    auto g = tape.grad(xl);
    for (float v : g.data()) CHECK(v == 1.0f);
  }
  {
    Tape tape;
    auto xl = tape.watch(x);
    tape.backward(mse(xl, Tensor::zeros(x.dims())));
    auto g = tape.grad(xl);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g[i] == doctest::Approx(2.0 * x[i] / 12).epsilon(1e-6));
    CHECK_THROWS_AS(tape.backward(sum(xl)), TapeError);
  }
  {
    Tape tape;
    auto xl = tape.watch(x);
    CHECK_THROWS_AS(tape.backward(scale(xl, 2.0f)), TapeError);
  }
  {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(sum(x)), TapeError);
  }
}

TEST_CASE("backward visits each recorded node once") {
  Tape tape;
  auto x = tape.watch(random_tensor({2, 3}, 5));
  auto y = silu(x);
  auto z = add(y, x);
  auto root = sum(z);
  auto unused = scale(x, 3.0f);
  (void)unused;
  tape.backward(root);
  CHECK(tape.visited_count() == tape.node_count());
}

TEST_CASE("finite_diff_check basics") {
  Tensor x = random_tensor({3, 5}, 31);
  CHECK(finite_diff_check([](const Tensor& v) { return sum(v); }, x, 1e-3f).max_rel_error < 1e-6);
  Tensor c = random_tensor({3, 5}, 32);
  CHECK(finite_diff_check([&](const Tensor& v) { return mse(v, c); }, x, 1e-3f).max_rel_error < 1e-4);
}

TEST_CASE("gradient of mse(softmax(xW), target) matches finite differences") {
  Tensor x = random_tensor({4, 3}, 41);
  Tensor w = random_tensor({3, 5}, 42);
  Tensor target = softmax_last(random_tensor({4, 5}, 43));
  auto fn = [&](const Tensor& v) { return mse(softmax_last(matmul(v, w)), target); };
  auto res = finite_diff_check(fn, x, 1e-3f);
  INFO("worst index " << res.worst_index << " analytic " << res.analytic_at_worst << " numeric "
                      << res.numeric_at_worst);
  CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("elementary op gradients") {
  // Random linear readout in double precision; a five-point stencil with a
  // wide step keeps float rounding of the op outputs below the 1e-3 budget.
  auto readout = [](const Tensor& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.5f, 1.5f);
    std::vector<float> w(y.numel());
    for (auto& v : w) v = u(rng);
    return dot(y, Tensor(y.dims(), w));
  };
  // A relative check is only meaningful where no coordinate's gradient sits
  // at the float32 noise floor, so pick the first readout whose gradients all
  // clear 2e-3 in magnitude.
  auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& op, const Tensor& x) {
    std::uint64_t seed = 77;
    for (; seed < 177; ++seed) {
      Tape tape;
      auto leaf = tape.watch(x);
      tape.backward(readout(op(leaf), seed));
      auto g = tape.grad(leaf);
      bool ok = true;
      for (float v : g.data()) ok = ok && std::abs(v) >= 2e-3f;
      if (ok) break;
    }
    auto res = finite_diff_check([&](const Tensor& v) { return readout(op(v), seed); }, x, 0.1f, Stencil::kFivePoint);
    INFO(std::string(name) << " seed " << seed << " worst " << res.worst_index << " analytic "
                           << res.analytic_at_worst << " numeric " << res.numeric_at_worst);
    CHECK(res.max_rel_error < 1e-3);
  };
  Tensor img = random_tensor({2, 3, 4, 4}, 51);
  Tensor kw = random_tensor({2, 3, 3, 3}, 52, 0.3f);
  Tensor kb = random_tensor({2}, 53);
  check("conv2d.x", [&](const Tensor& v) { return conv2d(v, kw, kb); }, img);
  check("conv2d.w", [&](const Tensor& v) { return conv2d(img, v, kb); }, kw);
  check("conv2d.b", [&](const Tensor& v) { return conv2d(img, kw, v); }, kb);
  Tensor k1 = random_tensor({2, 3, 1, 1}, 54);
  check("conv1x1.x", [&](const Tensor& v) { return conv2d(v, k1, Tensor()); }, img);
  Tensor gamma = add(Tensor::ones({3}), random_tensor({3}, 55, 0.3f)), beta = random_tensor({3}, 56);
  check("group_norm.x", [&](const Tensor& v) { return group_norm(v, 3, gamma, beta); }, img);
  check("group_norm.gamma", [&](const Tensor& v) { return group_norm(img, 1, v, beta); }, gamma);
  check("avg_pool2", [](const Tensor& v) { return avg_pool2(v); }, img);
  check("upsample", [](const Tensor& v) { return upsample_nearest2(v); }, img);
  check("silu", [](const Tensor& v) { return silu(v); }, img);
  check("permute", [](const Tensor& v) { return permute(v, {2, 0, 3, 1}); }, img);
  check("concat", [&](const Tensor& v) { return concat(v, img, 1); }, img);
  Tensor bias2 = random_tensor({2, 3}, 57);
  check("add_channel_bias", [&](const Tensor& v) { return add_channel_bias(v, bias2, 1); }, img);
  check("add_channel_bias.b", [&](const Tensor& v) { return add_channel_bias(img, v, 1); }, bias2);
  Tensor table = random_tensor({5, 4}, 58);
  check("gather_rows", [](const Tensor& v) { return gather_rows(v, {1, 3, 1}); }, table);
  Tensor q = random_tensor({2, 3, 4}, 59), kt = random_tensor({2, 4, 3}, 60);
  check("matmul.a", [&](const Tensor& v) { return matmul(v, kt); }, q);
  check("matmul.b", [&](const Tensor& v) { return matmul(q, v); }, kt);
  check("sum_squares", [](const Tensor& v) { return scale(sum_squares(v), 1.0f); }, q);
  check("dot", [&](const Tensor& v) { return dot(v, q); }, q);
  check("softmax_last", [](const Tensor& v) { return softmax_last(v); }, q);
  check("mul", [&](const Tensor& v) { return mul(v, q); }, q);
  check("sub", [&](const Tensor& v) { return sub(q, v); }, q);
}

TEST_CASE("ops reject non-finite results") {
  Tensor big({1}, {3e38f});
  CHECK_THROWS_AS(scale(big, 10.0f), NumericError);
}

TEST_CASE("MCLT container") {
  Tensor t = random_tensor({2, 3, 4}, 61);
  std::stringstream ss;
  mclt::write(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == mclt::encoded_size(t.dims()));
  CHECK(bytes.substr(0, 4) == "MCLT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 3);
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);  // first dim, little-endian u32
  CHECK(static_cast<unsigned char>(bytes[8]) == 0);

  std::stringstream in(bytes);
  CHECK(mclt::read(in).bit_equal(t));

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(mclt::read(truncated), FormatError);

  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  CHECK_THROWS_AS(mclt::read(bad_magic), FormatError);

  std::string bad_version = bytes;
  bad_version[4] = 2;
  std::stringstream bv(bad_version);
  CHECK_THROWS_WITH_AS(mclt::read(bv), doctest::Contains("version"), FormatError);

  auto path = std::filesystem::temp_directory_path() / "mclone_test_multi.mclt";
  mclt::save_all(path, {t, Tensor::scalar(2.5f)});
  auto back = mclt::load_all(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].bit_equal(t));
  CHECK(back[1].item() == 2.5f);
  std::filesystem::remove(path);
}
