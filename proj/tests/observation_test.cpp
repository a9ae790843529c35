#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "assembly/io.hpp"
#include "assembly/observation.hpp"
#include "oracles.hpp"

using namespace assembly;

namespace {

WorldState cube_at(Cell c, int color, const Site& site = {}) {
  return WorldState({{0, 1, color, c.center(0.5), Orientation::kAlongX}}, site);
}

int components(const Observation& obs, int color) {
  std::vector<int> seen(obs.segmentation.size(), 0);
  int n = 0;
  for (int v = 0; v < obs.height; ++v) {
    for (int u = 0; u < obs.width; ++u) {
      if (obs.seg_at(u, v) != color || seen[static_cast<std::size_t>(v * obs.width + u)]) continue;
      ++n;
      std::vector<std::pair<int, int>> stack{{u, v}};
      seen[static_cast<std::size_t>(v * obs.width + u)] = 1;
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& d : nb) {
          const int xx = x + d[0];
          const int yy = y + d[1];
          if (xx < 0 || yy < 0 || xx >= obs.width || yy >= obs.height) continue;
          const std::size_t i = static_cast<std::size_t>(yy * obs.width + xx);
          if (seen[i] || obs.seg_at(xx, yy) != color) continue;
          seen[i] = 1;
          stack.push_back({xx, yy});
        }
      }
    }
  }
  return n;
}

}  // namespace

TEST_CASE("empty table depth follows the ray-plane distance") {
  const CameraModel cam;
  const Observation obs = render(WorldState(), Phase::kPick);
  for (auto s : obs.segmentation) REQUIRE(s == 0);
  const int pixels[5][2] = {{0, 0}, {255, 0}, {128, 128}, {0, 255}, {255, 255}};
  for (const auto& p : pixels) {
    const auto expected = oracle::plane_depth(oracle::pixel_ray(cam, p[0], p[1]));
    REQUIRE(expected);
    CHECK(std::abs(obs.depth_at(p[0], p[1]) - *expected) <= 1e-4);
  }
}

TEST_CASE("cube top depth matches the analytic face distance") {
  const CameraModel cam;
  const WorldState s = cube_at({5, 9}, color::kRed);
  const Observation obs = render(s, Phase::kPick);
  const auto [pu, pv] = cam.project({5.5, 9.5, 1.0});
  const int u = static_cast<int>(std::lround(pu));
  const int v = static_cast<int>(std::lround(pv));
  const oracle::Ray ray = oracle::pixel_ray(cam, u, v);
  // intersection with the top face plane z = 1
  const double t = (1.0 - ray.origin.z) / ray.dir.z;
  const double x = ray.origin.x + t * ray.dir.x;
  const double y = ray.origin.y + t * ray.dir.y;
  REQUIRE(x > 5.0);
  REQUIRE(x < 6.0);
  REQUIRE(y > 9.0);
  REQUIRE(y < 10.0);
  CHECK(obs.seg_at(u, v) == color::kRed);
  CHECK(std::abs(obs.depth_at(u, v) - t * kUnitMeters) <= 1e-4);
}

TEST_CASE("the whole workspace is in view and every pixel has depth") {
  const CameraModel cam;
  for (double x : {0.0, 16.0}) {
    for (double y : {0.0, 16.0}) {
      for (double z : {0.0, 8.0}) {
        const auto [u, v] = cam.project({x, y, z});
        CHECK(u >= 0.0);
        CHECK(v >= 0.0);
        CHECK(u <= cam.width - 1.0);
        CHECK(v <= cam.height - 1.0);
      }
    }
  }
  std::mt19937_64 rng(3);
  const WorldState s = oracle::random_state(rng, {{{6, 11}, {8, 11}}, true}, 8, 6);
  const Observation obs = render(s, Phase::kPick);
  for (float d : obs.depth) REQUIRE(d > 0.0f);
  for (auto c : obs.segmentation) REQUIRE(c < kPaletteSize);
}

TEST_CASE("renderer agrees with the face-plane oracle on random scenes") {
  const CameraModel cam;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pix(0, 255);
  const Site site{{{6, 11}, {8, 11}}, true};
  for (int scene = 0; scene < 10; ++scene) {
    const WorldState s = oracle::random_state(rng, site, 6, 8);
    const Observation obs = render(s, Phase::kPick);
    for (int k = 0; k < 200; ++k) {
      const int u = pix(rng);
      const int v = pix(rng);
      const oracle::Ray ray = oracle::pixel_ray(cam, u, v);
      double best = *oracle::plane_depth(ray);
      int seg = 0;
      for (const auto& p : s.primitives()) {
        const auto t = oracle::face_depth(ray, p.box());
        if (t && *t < best) {
          best = *t;
          seg = p.color;
        }
      }
      REQUIRE(std::abs(obs.depth_at(u, v) - best) <= 1e-4);
      // colors can only differ on exact ties between touching faces
      if (obs.seg_at(u, v) != seg) {
        bool tie = false;
        for (const auto& p : s.primitives()) {
          const auto t = oracle::face_depth(ray, p.box());
          tie = tie || (t && p.color == obs.seg_at(u, v) && std::abs(*t - best) < 1e-9);
        }
        CHECK(tie);
      }
    }
  }
}

TEST_CASE("nearer box wins overlapping pixels") {
  const CameraModel cam;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> pos(2.0, 14.0);
  std::uniform_real_distribution<double> ext(0.5, 3.0);
  std::uniform_real_distribution<double> height(0.0, 4.0);
  int overlaps = 0;
  for (int scene = 0; scene < 200; ++scene) {
    std::uniform_real_distribution<double> offset(-2.0, 2.0);
    std::vector<SceneBox> boxes;
    const Vec3 lo0{pos(rng), pos(rng), height(rng)};
    const Vec3 lo1 = lo0 + Vec3{offset(rng), offset(rng) - 1.0, offset(rng) + 2.0};
    boxes.push_back({{lo0, lo0 + Vec3{ext(rng), ext(rng), ext(rng)}}, 1});
    boxes.push_back({{lo1, lo1 + Vec3{ext(rng), ext(rng), ext(rng)}}, 2});
    const Observation obs = render_boxes(boxes, cam);
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        const oracle::Ray ray = oracle::pixel_ray(cam, u, v);
        const auto t0 = oracle::face_depth(ray, boxes[0].box);
        const auto t1 = oracle::face_depth(ray, boxes[1].box);
        if (!t0 || !t1 || std::abs(*t0 - *t1) < 1e-9) continue;
        ++overlaps;
        REQUIRE(obs.seg_at(u, v) == (*t0 < *t1 ? 1 : 2));
      }
    }
  }
  CHECK(overlaps > 1000);
}

TEST_CASE("place phase shows the held primitive once at the hover pose") {
  const CameraModel cam;
  const Site site{{{6, 11}, {8, 11}}, true};
  WorldState s({{0, 1, color::kPurple, Cell{2, 3}.center(0.5), Orientation::kAlongX},
                {1, 2, color::kYellow, {6.5, 11.5, 1.0}, Orientation::kAlongZ},
                {2, 1, color::kRed, Cell{12, 4}.center(0.5), Orientation::kAlongX}},
               site);
  const Observation obs = render(s, Phase::kPlace, 0);
  CHECK(obs.phase == Phase::kPlace);
  REQUIRE(obs.held);
  CHECK(obs.held->position.z == doctest::Approx(3.5));
  CHECK(components(obs, color::kPurple) == 1);
  const auto [u, v] = cam.project(obs.held->position);
  CHECK(obs.seg_at(static_cast<int>(std::lround(u)), static_cast<int>(std::lround(v))) == color::kPurple);
  // the cube left its table cell
  const auto [tu, tv] = cam.project({2.5, 3.5, 1.0});
  CHECK(obs.seg_at(static_cast<int>(std::lround(tu)), static_cast<int>(std::lround(tv))) == color::kTable);
  CHECK_THROWS_AS(render(s, Phase::kPlace, 7), HeldNotInState);
}

TEST_CASE("rendering is a pure function") {
  std::mt19937_64 rng(5);
  const WorldState s = oracle::random_state(rng, {{{6, 11}, {8, 11}}, true}, 7, 5);
  const Observation a = render(s, Phase::kPick);
  const Observation b = render(s, Phase::kPick);
  CHECK(std::memcmp(a.depth.data(), b.depth.data(), a.depth.size() * sizeof(float)) == 0);
  CHECK(a.segmentation == b.segmentation);
}

TEST_CASE("augmentation noise models") {
  const Observation obs = render_boxes({{{{4.0, 6.0, 0.0}, {12.0, 9.0, 4.0}}, color::kBlue}});

  SUBCASE("p = 0 and no jitter change nothing") {
    const Observation same = augment(obs, 0.0, 0.0, 9);
    CHECK(same.segmentation == obs.segmentation);
    CHECK(std::memcmp(same.depth.data(), obs.depth.data(), obs.depth.size() * sizeof(float)) == 0);
  }
  SUBCASE("Bernoulli drop rate") {
    std::size_t mask = 0;
    for (auto c : obs.segmentation) mask += c != 0;
    REQUIRE(mask >= 1000);
    const Observation noisy = augment(obs, 0.1, 0.0, 10);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < obs.segmentation.size(); ++i) {
      if (obs.segmentation[i] == 0) {
        CHECK(noisy.segmentation[i] == 0);
      } else if (noisy.segmentation[i] == 0) {
        ++flipped;
      }
    }
    const double rate = static_cast<double>(flipped) / static_cast<double>(mask);
    // 3 sigma of a binomial over the whole mask is well inside 0.03
    CHECK(rate >= 0.07);
    CHECK(rate <= 0.13);
    CHECK(augment(obs, 0.1, 0.0, 10).segmentation == noisy.segmentation);
    CHECK(augment(obs, 0.1, 0.0, 11).segmentation != noisy.segmentation);
  }
  SUBCASE("extent jitter re-renders deterministically") {
    const Observation a = augment(obs, 0.0, 0.1, 4);
    const Observation b = augment(obs, 0.0, 0.1, 4);
    CHECK(a.depth != obs.depth);
    CHECK(std::memcmp(a.depth.data(), b.depth.data(), a.depth.size() * sizeof(float)) == 0);
  }
  CHECK_THROWS(augment(obs, 1.0, 0.0, 1));
}

TEST_CASE("observation files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "assembly_obs_test";
  std::filesystem::create_directories(dir);
  const Observation obs = render(cube_at({3, 3}, color::kGreen), Phase::kPick);
  const ObservationFiles f = write_observation(obs, dir / "x", CameraModel{});
  CHECK(read_f32_blob(f.depth) == obs.depth);
  CHECK(read_u8_blob(f.seg) == obs.segmentation);
  const auto side = nlohmann::json::parse(read_text(f.depth.string() + ".json"));
  CHECK(side.at("shape") == nlohmann::json::array({256, 256}));
  std::filesystem::remove_all(dir);
}
