#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ltx/checkpoint.hpp"
#include "ltx/init.hpp"
#include "ltx/pruning.hpp"

using namespace ltx;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

Architecture tiny_fc() { return make_preset("fc-small", {1, 4, 4}, 3); }

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly in both precisions") {
  const auto arch = tiny_fc();
  const auto layout = param_layout(arch);
  const auto dir = scratch_dir("ltx-ckpt-roundtrip");
  fs::create_directories(dir);

  auto p32 = init_params<float>(arch, {}, 11);
  const auto path32 = (dir / "p.ltck").string();
  save_checkpoint(path32, p32);
  CHECK(bit_equal(load_checkpoint<float>(path32, layout), p32));

  auto p64 = init_params<double>(arch, {}, 11);
  const auto path64 = (dir / "p64.ltck").string();
  save_checkpoint(path64, p64);
  CHECK(bit_equal(load_checkpoint<double>(path64, layout), p64));

  // Loading an f64 file through the f32 loader is a dtype mismatch, not a
  // silent cast.
  try {
    load_checkpoint<float>(path64, layout);
    FAIL("expected io_error");
  } catch (const io_error& e) {
    CHECK(e.kind() == io_error::Kind::bad_value);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loading is strict about layout") {
  const auto arch = tiny_fc();
  const auto dir = scratch_dir("ltx-ckpt-strict");
  fs::create_directories(dir);
  const auto path = (dir / "p.ltck").string();
  save_checkpoint(path, init_params<float>(arch, {}, 3));

  SUBCASE("different architecture") {
    const auto other = make_preset("fc-large", {1, 4, 4}, 3);
    try {
      load_checkpoint<float>(path, param_layout(other));
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.kind() == io_error::Kind::bad_value);
    }
  }
  SUBCASE("different shape, same names") {
    const auto other = make_preset("fc-small", {1, 5, 5}, 3);
    try {
      load_checkpoint<float>(path, param_layout(other));
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.kind() == io_error::Kind::bad_value);
    }
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
    f.close();
    try {
      load_checkpoint<float>(path, param_layout(arch));
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.kind() == io_error::Kind::bad_magic);
    }
  }
  SUBCASE("truncation") {
    fs::resize_file(path, fs::file_size(path) / 2);
    try {
      load_checkpoint<float>(path, param_layout(arch));
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.kind() == io_error::Kind::truncated);
    }
  }
  SUBCASE("missing file") {
    try {
      load_checkpoint<float>((dir / "gone.ltck").string(), param_layout(arch));
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(e.kind() == io_error::Kind::not_found);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("trajectory best is the earliest minimum") {
  const auto arch = tiny_fc();
  const auto dir = scratch_dir("ltx-traj-best");
  auto params = init_params<float>(arch, {}, 5);

  TrajectoryStore traj(dir.string());
  CHECK(traj.empty());
  traj.record(0, params, 2.3);
  traj.record(100, params, 1.1);
  traj.record(200, params, 1.4);
  CHECK(traj.best().step == 100);
  CHECK(traj.best().val_loss == 1.1);
  CHECK(traj.final_step() == 200);

  // A later tie does not displace the earlier best.
  traj.record(300, params, 1.1);
  CHECK(traj.best().step == 100);
  fs::remove_all(dir);
}

TEST_CASE("trajectory rejects malformed recording orders") {
  const auto arch = tiny_fc();
  const auto dir = scratch_dir("ltx-traj-order");
  auto params = init_params<float>(arch, {}, 5);

  TrajectoryStore traj(dir.string());
  CHECK_THROWS_AS(traj.record(50, params, 1.0), contract_error);  // no step 0
  traj.record(0, params, 2.0);
  CHECK_THROWS_AS(traj.record(0, params, 1.0), contract_error);
  traj.record(10, params, 1.5);
  CHECK_THROWS_AS(traj.record(10, params, 1.0), contract_error);
  CHECK_THROWS_AS(traj.record(5, params, 1.0), contract_error);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(traj.record(20, params, nan), contract_error);
  CHECK(traj.records().size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("a trajectory resumes from its manifest") {
  const auto arch = tiny_fc();
  const auto layout = param_layout(arch);
  const auto dir = scratch_dir("ltx-traj-resume");
  auto p0 = init_params<float>(arch, {}, 5);
  auto p1 = init_params<float>(arch, {}, 6);

  {
    TrajectoryStore traj(dir.string());
    traj.record(0, p0, 2.0);
    traj.record(100, p1, 0.7);
  }
  TrajectoryStore resumed(dir.string());
  REQUIRE(resumed.records().size() == 2);
  CHECK(resumed.has_step(0));
  CHECK(resumed.has_step(100));
  CHECK_FALSE(resumed.has_step(50));
  CHECK(resumed.best().step == 100);
  CHECK(bit_equal(resumed.load_step<float>(0, layout), p0));
  CHECK(bit_equal(resumed.load_step<float>(100, layout), p1));

  // Appends keep working after a resume.
  resumed.record(200, p0, 0.9);
  CHECK(resumed.final_step() == 200);
  CHECK_THROWS_AS(resumed.record(150, p0, 0.5), contract_error);
  fs::remove_all(dir);
}

TEST_CASE("retain_essentials keeps step 0, the best, and the final step") {
  const auto arch = tiny_fc();
  const auto layout = param_layout(arch);
  const auto dir = scratch_dir("ltx-traj-retain");
  auto params = init_params<float>(arch, {}, 5);

  TrajectoryStore traj(dir.string());
  const double losses[] = {3.0, 2.0, 0.5, 1.0, 1.5};
  for (int i = 0; i < 5; ++i) traj.record(i * 100, params, losses[i]);
  traj.retain_essentials();

  REQUIRE(traj.records().size() == 3);
  CHECK(traj.has_step(0));
  CHECK(traj.has_step(200));  // best (0.5)
  CHECK(traj.has_step(400));  // final
  CHECK(traj.best().step == 200);

  // Survivors still load; the dropped files are really gone.
  CHECK(bit_equal(traj.load_step<float>(200, layout), params));
  int ltck_files = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ltck") ++ltck_files;
  CHECK(ltck_files == 3);

  // A fresh open sees the trimmed manifest.
  TrajectoryStore reopened(dir.string());
  CHECK(reopened.records().size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("resets rebuild each of the three restart points") {
  const auto arch = tiny_fc();
  const auto dir = scratch_dir("ltx-reset");
  auto theta0 = init_params<float>(arch, {}, 41);
  auto theta_best = init_params<float>(arch, {}, 42);
  auto theta_final = init_params<float>(arch, {}, 43);

  TrajectoryStore traj(dir.string());
  traj.record(0, theta0, 2.0);
  traj.record(100, theta_best, 0.4);
  traj.record(200, theta_final, 0.9);

  PruneSchedule sched;
  sched.dense_rate = 0.5;
  auto masks = prune_round(theta_best, ones_like(theta_best), sched);

  SUBCASE("ticket restores the step-0 draw under the mask") {
    auto r = reset<float>(arch, traj, {ResetMode::Kind::ticket, 0, -1, {}},
                          masks);
    CHECK(bit_equal(r, apply_mask(theta0, masks)));
    auto all = reset<float>(arch, traj, {ResetMode::Kind::ticket, 0, -1, {}},
                            ones_like(theta0));
    CHECK(bit_equal(all, theta0));
  }
  SUBCASE("late restores the best checkpoint under the mask") {
    auto r =
        reset<float>(arch, traj, {ResetMode::Kind::late, 0, -1, {}}, masks);
    CHECK(bit_equal(r, apply_mask(theta_best, masks)));
  }
  SUBCASE("at-step picks an arbitrary recorded step") {
    auto r = reset<float>(arch, traj, {ResetMode::Kind::at_step, 0, 200, {}},
                          masks);
    CHECK(bit_equal(r, apply_mask(theta_final, masks)));
    CHECK_THROWS_AS(
        reset<float>(arch, traj, {ResetMode::Kind::at_step, 0, 150, {}}, masks),
        contract_error);
  }
  SUBCASE("random draws a fresh seed-deterministic init") {
    ResetMode rnd{ResetMode::Kind::random, 7, -1, {}};
    auto a = reset<float>(arch, traj, rnd, masks);
    auto b = reset<float>(arch, traj, rnd, masks);
    CHECK(bit_equal(a, b));
    rnd.seed = 8;
    CHECK_FALSE(bit_equal(reset<float>(arch, traj, rnd, masks), a));
    CHECK_FALSE(bit_equal(a, apply_mask(theta0, masks)));
  }
  SUBCASE("every reset zeroes the masked coordinates") {
    for (auto kind : {ResetMode::Kind::ticket, ResetMode::Kind::late,
                      ResetMode::Kind::random}) {
      auto r = reset<float>(arch, traj, {kind, 9, -1, {}}, masks);
      for (const auto& e : masks.entries()) {
        const auto& w = r.at(e.name);
        for (int64_t i = 0; i < w.numel(); ++i)
          if (!e.mask.data()[i]) CHECK(w.data()[i] == 0.0f);
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("reset mode names round-trip") {
  for (auto kind : {ResetMode::Kind::ticket, ResetMode::Kind::late,
                    ResetMode::Kind::random, ResetMode::Kind::at_step})
    CHECK(reset_mode_from_name(reset_mode_name(kind)) == kind);
  CHECK(std::string(reset_mode_name(ResetMode::Kind::late)) == "late");
  CHECK_THROWS_AS(reset_mode_from_name("bogus"), config_error);
}
