#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "mclone/mclt.hpp"
#include "mclone/synthgen.hpp"

using namespace mclone;

namespace {

float px(const Tensor& clip, int f, int y, int x) {
  const auto h = clip.dims()[2], w = clip.dims()[3], c = clip.dims()[1];
  return clip[static_cast<std::size_t>((f * c * h + y) * w + x)];
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mclone_synth_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("static clip: identical frames and zero truth") {
  auto g = gen_clip(MotionKind::kStatic, {}, 3);
  const auto& d = g.clip.data;
  REQUIRE(d.dims() == Shape{8, 1, 32, 32});
  for (int f = 1; f < 8; ++f)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) REQUIRE(px(d, f, y, x) == px(d, 0, y, x));
  for (int f = 0; f < 8; ++f) {
    CHECK(g.truth.dx[f] == 0);
    CHECK(g.truth.dy[f] == 0);
  }
}

TEST_CASE("translate (1, 0): centroid advances one pixel per frame") {
  MotionParams p;
  p.vx = 1;
  p.vy = 0;
  p.size = 9;
  auto g = gen_clip(MotionKind::kTranslate, p, 5);
  for (int f = 1; f < 8; ++f) {
    CHECK(g.truth.cx[f] - g.truth.cx[f - 1] == 1.0);
    CHECK(g.truth.cy[f] == g.truth.cy[0]);
    CHECK(g.truth.dx[f] == 1);
    CHECK(g.truth.dy[f] == 0);
  }
}

TEST_CASE("same seed renders bitwise identical clips") {
  for (auto kind : {MotionKind::kTranslate, MotionKind::kPan, MotionKind::kRotate, MotionKind::kStatic}) {
    auto p = random_params(kind, 17);
    auto a = gen_clip(kind, p, 17);
    auto b = gen_clip(kind, p, 17);
    CHECK(a.clip.data.bit_equal(b.clip.data));
    CHECK(a.clip.id == b.clip.id);
  }
}

TEST_CASE("path leaving the frame is rejected") {
  MotionParams p;
  p.vx = 2;
  p.vy = 0;
  p.size = 10;
  p.x0 = 20;
  p.y0 = 4;
  CHECK_THROWS_AS(gen_clip(MotionKind::kTranslate, p, 1), ConfigError);
}

TEST_CASE("values stay in [-1, 1] for every kind") {
  for (std::uint64_t s = 0; s < 20; ++s)
    for (int k = 1; k <= 4; ++k) {
      auto kind = kind_from_class(k);
      auto g = gen_clip(kind, random_params(kind, s), s);
      for (float v : g.clip.data.data()) REQUIRE((v >= -1.0f && v <= 1.0f));
    }
}

TEST_CASE("truth matches content: pans wrap exactly") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto p = random_params(MotionKind::kPan, s);
    CHECK(std::abs(p.vx) != std::abs(p.vy));
    auto g = gen_clip(MotionKind::kPan, p, s);
    const auto& d = g.clip.data;
    for (int f = 1; f < 8; ++f)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const int sx = ((x - g.truth.dx[f]) % 32 + 32) % 32, sy = ((y - g.truth.dy[f]) % 32 + 32) % 32;
          REQUIRE(px(d, f, y, x) == px(d, f - 1, sy, sx));
        }
  }
}

TEST_CASE("truth matches content: the square moves with its texture") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto p = random_params(MotionKind::kTranslate, s);
    CHECK(p.vx != p.vy);
    auto g = gen_clip(MotionKind::kTranslate, p, s);
    const auto& d = g.clip.data;
    for (int f = 1; f < 8; ++f) {
      const int ox = p.x0 + f * p.vx, oy = p.y0 + f * p.vy;
      for (int y = oy; y < oy + p.size; ++y)
        for (int x = ox; x < ox + p.size; ++x)
          REQUIRE(px(d, f, y, x) == px(d, f - 1, y - g.truth.dy[f], x - g.truth.dx[f]));
    }
  }
}

TEST_CASE("rotation truth records the angular step") {
  MotionParams p;
  p.omega = 0.25;
  auto g = gen_clip(MotionKind::kRotate, p, 2);
  CHECK(g.truth.omega == 0.25);
  CHECK_FALSE(g.clip.data.bit_equal(gen_clip(MotionKind::kStatic, p, 2).clip.data));
}

TEST_CASE("corpus is balanced and ids are unique") {
  auto corpus = gen_corpus(5, 9);
  REQUIRE(corpus.size() == 20);
  int counts[5] = {0, 0, 0, 0, 0};
  std::set<std::string> ids;
  for (const auto& g : corpus) {
    ++counts[class_id(g.clip.kind)];
    ids.insert(g.clip.id);
  }
  for (int k = 1; k <= 4; ++k) CHECK(counts[k] == 5);
  CHECK(ids.size() == 20);
}

TEST_CASE("gen_dataset count 0 writes an empty manifest and no clips") {
  auto dir = temp_dir("empty");
  auto entries = gen_dataset(dir, 0, 1);
  CHECK(entries.empty());
  CHECK(std::filesystem::exists(dir / "manifest.txt"));
  CHECK(std::filesystem::file_size(dir / "manifest.txt") == 0);
  CHECK_FALSE(std::filesystem::exists(dir / "clips"));
  CHECK(read_dataset_manifest(dir).empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("gen_dataset round trip") {
  auto dir = temp_dir("rt");
  auto entries = gen_dataset(dir, 2, 4);
  REQUIRE(entries.size() == 8);
  auto back = read_dataset_manifest(dir);
  REQUIRE(back.size() == 8);
  auto corpus = gen_corpus(2, 4);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == corpus[i].clip.id);
    CHECK(back[i].class_id == class_id(corpus[i].clip.kind));
    CHECK(mclt::load(dir / back[i].clip_file).bit_equal(corpus[i].clip.data));
    auto truth = read_truth(dir / back[i].truth_file);
    CHECK(truth.kind == corpus[i].truth.kind);
    CHECK(truth.dx == corpus[i].truth.dx);
    CHECK(truth.dy == corpus[i].truth.dy);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("kind names and class ids") {
  CHECK(kind_from_name("pan") == MotionKind::kPan);
  CHECK(kind_name(kind_from_class(1)) == "translate");
  CHECK_THROWS_AS(kind_from_name("zoom"), ConfigError);
  CHECK_THROWS_AS(kind_from_class(0), ConfigError);
}
