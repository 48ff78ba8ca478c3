#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gcrl/dataio.hpp"
#include "support.hpp"

using namespace gcrl;
namespace fs = std::filesystem;

namespace {

std::string track_rows(std::int64_t ped, int first_frame, int len, double x0 = 0.0) {
  std::ostringstream os;
  for (int f = first_frame; f < first_frame + len; ++f) {
    os << f << '\t' << ped << '\t' << x0 + 0.1 * f << '\t' << -0.05 * f << '\n';
  }
  return os.str();
}

Tracks parse(const std::string& text) {
  std::istringstream in(text);
  return parse_trajectories(in, "fixture");
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("gcrl_dataio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("parsing tracks") {
  CHECK(parse("").empty());
  CHECK(parse("# only a comment\n\n").empty());
  Tracks one = parse(track_rows(3, 0, 20));
  REQUIRE(one.size() == 1);
  CHECK(one.at(3).size() == 20);

  // Shuffled rows give the same tracks as the sorted file.
  std::string sorted = track_rows(1, 0, 25) + track_rows(2, 5, 22, 1.0);
  std::vector<std::string> lines;
  std::istringstream is(sorted);
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  std::mt19937 g(4);
  std::shuffle(lines.begin(), lines.end(), g);
  std::string shuffled;
  for (auto& l : lines) shuffled += l + "\n";
  Tracks a = parse(sorted), b = parse(shuffled);
  REQUIRE(a.size() == b.size());
  for (auto& [id, track] : a) {
    const auto& other = b.at(id);
    REQUIRE(track.size() == other.size());
    for (std::size_t i = 0; i < track.size(); ++i) {
      CHECK(track[i].frame == other[i].frame);
      CHECK(track[i].x == other[i].x);
      CHECK(track[i].y == other[i].y);
    }
  }

  Tracks sig = parse("0 1 0.5 0.5 2.0\n1 1 0.6 0.5 3.0\n");
  CHECK(sig.at(1)[1].sigma.value() == 3.0);
}

TEST_CASE("malformed input is reported with its line") {
  CHECK_THROWS_WITH_AS(parse("0 1 0 0\n1 1 zero 0\n"), doctest::Contains("fixture:2"), DataError);
  CHECK_THROWS_WITH_AS(parse("0 1 0\n"), doctest::Contains("fixture:1"), DataError);
  CHECK_THROWS_AS(parse("0 1.5 0 0\n"), DataError);
  CHECK_THROWS_WITH_AS(parse("0 1 0 0\n0 1 1 1\n"), doctest::Contains("non-monotone"), DataError);
  CHECK_THROWS_AS(load_trajectories("/nonexistent/file.tsv"), DataError);
}

TEST_CASE("windowing") {
  CHECK(window_scenes(parse(track_rows(1, 0, 19)), 0).empty());
  CHECK(window_scenes(parse(track_rows(1, 0, 21)), 0).size() == 2);

  // Two pedestrians sharing exactly 20 frames.
  auto two = window_scenes(parse(track_rows(1, 0, 20) + track_rows(2, 0, 20, 3.0)), 4);
  REQUIRE(two.size() == 1);
  CHECK(two[0].num_agents == 2);
  CHECK(two[0].env_id == 4);
  CHECK(two[0].x(1, 0) == doctest::Approx(3.0));

  // Coverage: every co-present length-20 span appears exactly once.
  auto mixed = window_scenes(parse(track_rows(1, 0, 30) + track_rows(2, 8, 25, 1.0)), 0);
  int agent_windows = 0;
  for (auto& s : mixed) agent_windows += s.num_agents;
  CHECK(agent_windows == (30 - 20 + 1) + (25 - 20 + 1));
  CHECK(mixed.size() == 14);  // starts 0..10 for ped 1, 8..13 for ped 2

  // A gap in a track breaks the run.
  auto gap = window_scenes(parse(track_rows(1, 0, 15) + track_rows(1, 16, 20) + track_rows(9, 15, 1)), 0);
  CHECK(gap.size() == 1);

  // Cap on agents per scene.
  std::string crowd;
  for (int p = 0; p < 5; ++p) crowd += track_rows(p, 0, 20, p);
  auto split = window_scenes(parse(crowd), 0, 20, 2);
  REQUIRE(split.size() == 3);
  CHECK(split[0].num_agents + split[1].num_agents + split[2].num_agents == 5);
}

TEST_CASE("relative and absolute forms are inverse") {
  Scene s = gcrl::test::linear_scene({{{1.5, -2.0, 0.4, 0.0}}, {{0.0, 0.0, 0.0, 0.0}}});
  Displacements d = to_relative(s);
  for (int t = 0; t < s.num_steps - 1; ++t) {
    CHECK(d.delta[static_cast<std::size_t>(2 * t)] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(d.delta[static_cast<std::size_t>(2 * t + 1)] == 0.0);
    const std::size_t o = static_cast<std::size_t>(2 * (s.num_steps - 1) + 2 * t);
    CHECK(d.delta[o] == 0.0);
    CHECK(d.delta[o + 1] == 0.0);
  }
  Rng rng(2);
  Scene r(1, 3);
  for (auto& v : r.xy) v = rng.uniform(-10.0, 10.0);
  Scene back = to_absolute(to_relative(r), 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < r.xy.size(); ++i) worst = std::max(worst, std::abs(back.xy[i] - r.xy[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("written scenes load back unchanged") {
  Scene a = gcrl::test::linear_scene({{{0.1, 0.2, 0.3, 0.4}}, {{-1.0, 0.5, 0.0, 0.1}}});
  Scene b = gcrl::test::linear_scene({{{0.123456789012345, 7.0, -0.2, 0.0}}});
  std::ostringstream os;
  write_scenes_tsv(os, {a, b}, {"k=v"});
  CHECK(os.str().starts_with("# k=v\n"));
  auto dir = scratch("roundtrip");
  write(dir / "s.tsv", os.str());
  auto loaded = load_scenes(dir / "s.tsv", 2);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].xy == a.xy);
  CHECK(loaded[1].xy == b.xy);
  CHECK(loaded[1].env_id == 2);
  fs::remove_all(dir);
}

TEST_CASE("manifest and leave-one-out") {
  auto dir = scratch("manifest");
  const char* names[] = {"zara2", "hotel", "eth", "univ", "zara1"};
  std::string manifest = "coord_mode=relative\n";
  int k = 0;
  for (const char* n : names) {
    write(dir / (std::string(n) + ".txt"), track_rows(k, 0, 24, k) + track_rows(k + 100, 0, 20, k));
    manifest += std::string("env.") + n + "=" + n + ".txt\n";
    ++k;
  }
  write(dir / "m.txt", manifest);
  DatasetManifest m = load_manifest(dir / "m.txt");
  CHECK(m.envs.size() == 5);
  CHECK(m.coord_mode == CoordMode::kRelative);
  CHECK(m.obs_len == 8);

  LeaveOneOutSplit split = leave_one_out(m, "eth");
  CHECK(split.train_envs == std::vector<std::string>{"hotel", "univ", "zara1", "zara2"});
  for (const auto& s : split.train) {
    CHECK(s.env_id >= 0);
    CHECK(s.env_id < 4);
  }
  for (const auto& s : split.test) CHECK(s.env_id == 4);
  CHECK(split.test.size() == 5);
  CHECK(split.train.size() + split.val.size() == 4 * 5);

  CHECK_THROWS_AS(leave_one_out(m, "nowhere"), std::invalid_argument);
  std::istringstream single("env.only=a.txt\n");
  DatasetManifest one = parse_manifest(single, dir);
  CHECK_THROWS_AS(leave_one_out_envs(one, "only"), std::invalid_argument);

  std::istringstream bad("coord_mode=relative\nfoo=bar\n");
  CHECK_THROWS_AS(parse_manifest(bad, dir), DataError);
  fs::remove_all(dir);
}
