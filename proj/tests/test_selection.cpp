#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "nbvsplat/io.hpp"
#include "nbvsplat/selection.hpp"
#include "nbvsplat/synth.hpp"
#include "test_util.hpp"

using namespace nbv;

namespace {

SyntheticData small_data(std::uint64_t seed, int cameras, int timesteps = 1) {
  SceneSpec spec;
  spec.seed = seed;
  spec.gaussians = 10;
  spec.timesteps = timesteps;
  spec.cameras.count = cameras;
  spec.cameras.test_count = 2;
  spec.cameras.image_size = 12;
  if (timesteps > 1) spec.motions.push_back({1, MotionKind::Linear, Eigen::Vector3d(0.0, 0.0, 0.2), 1.0});
  return generate(spec);
}

Schedule quick_schedule() {
  Schedule s;
  s.initial_views = 2;
  s.views_per_round = 1;
  s.iterations_per_round = 3;
  s.rounds = 10;
  s.final_iterations = 3;
  s.pretrain_iterations = 3;
  return s;
}

Candidate candidate_at(int id, const Eigen::Vector3d& eye, int size = 12) {
  Candidate c;
  c.id = id;
  c.camera = id;
  c.view = CameraView::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), size, size, 45.0);
  return c;
}

std::vector<int> ids_of(const CandidatePool& pool, const std::vector<std::size_t>& open) {
  std::vector<int> ids;
  for (std::size_t i : open) ids.push_back(pool[i].id);
  return ids;
}

}  // namespace

TEST_CASE("candidate pool bookkeeping") {
  CandidatePool pool({candidate_at(4, {0, -4, 0}), candidate_at(9, {4, 0, 0}), candidate_at(2, {0, 4, 0})});
  CHECK(pool.available_count() == 3);
  pool.take(9);
  CHECK_FALSE(pool.available_id(9));
  CHECK(pool.available_count() == 2);
  CHECK(ids_of(pool, pool.open()) == std::vector<int>{4, 2});
  CHECK_THROWS_AS(pool.take(9), ContractError);
  CHECK_THROWS_AS(pool.by_id(7), ContractError);
  CHECK_THROWS_AS(CandidatePool({candidate_at(1, {0, -4, 0}), candidate_at(1, {4, 0, 0})}), ContractError);
}

TEST_CASE("a pool with one available candidate selects it") {
  const SyntheticData data = small_data(1, 4);
  CandidatePool pool = CandidatePool::from_frames(data.pool);
  pool.take(0);
  pool.take(1);
  pool.take(3);
  Model model = initial_model(data, {}, false);
  const TrainingFisher train = TrainingFisher::zeros(ParamLayout(model.scene).total());
  CHECK(select_fisher(pool, model, train, {}).winner == 2);
  CHECK(select_random(pool, 5).winner == 2);
  CHECK(select_covariance(pool, model).winner == 2);
  pool.take(2);
  CHECK_THROWS_AS(select_fisher(pool, model, train, {}), ContractError);
}

TEST_CASE("geometry-only weights with semantics off reproduce the FisherRF ranking") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const SyntheticData data = small_data(10 + seed, 8);
    const CandidatePool pool = CandidatePool::from_frames(data.pool);
    Model model = initial_model(data, {}, false);
    TrainingFisher train = TrainingFisher::zeros(ParamLayout(model.scene).total());
    train.add(view_fisher(model, data.pool[0].view));
    FisherSelectionOptions opts;
    opts.weights = {1.0, 0.0, 0.0};
    opts.include_semantic = false;
    const SelectionRecord rec = select_fisher(pool, model, train, opts);
    const std::vector<double> rf = fisherrf_scores(pool, model, train.color, opts.lambda);
    CHECK(ranking(rec) == ranking(rf, ids_of(pool, pool.open())));
  }
}

TEST_CASE("an uncovered view beats a near duplicate of the training view") {
  std::mt19937_64 rng(3);
  testing::RandomSceneOptions ro;
  ro.log_scale_min = -2.2;
  ro.log_scale_max = -1.6;
  Model model;
  model.scene = testing::random_scene(rng, 12, ro);
  model.decoder = FeatureDecoder::identity(kDefaultFeatureDim);
  const Candidate seen = candidate_at(0, {0.0, -4.0, 0.0});
  CandidatePool pool({candidate_at(1, {0.05, -4.0, 0.05}), candidate_at(2, {4.0, 0.0, 0.0})});
  TrainingFisher train = TrainingFisher::zeros(ParamLayout(model.scene).total());
  train.add(view_fisher(model, seen.view));
  FisherSelectionOptions opts;
  opts.weights = {1.0, 1.0, 0.0};
  const SelectionRecord rec = select_fisher(pool, model, train, opts);
  CHECK(rec.winner == 2);
  CHECK(rec.scores[1].geometric > rec.scores[0].geometric);
  CHECK(rec.scores[1].semantic > rec.scores[0].semantic);
}

TEST_CASE("random selection is reproducible, uniform and respects the mask") {
  CandidatePool pool({candidate_at(0, {0, -4, 0}), candidate_at(1, {4, 0, 0}), candidate_at(2, {0, 4, 0}),
                      candidate_at(3, {-4, 0, 0}), candidate_at(4, {0, 0, 4}), candidate_at(5, {1, 1, 4})});
  pool.take(1);
  pool.take(4);
  CHECK(select_random(pool, 42).winner == select_random(pool, 42).winner);
  std::mt19937_64 rng(7);
  std::map<int, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[select_random(pool, rng).winner];
  CHECK(counts.count(1) == 0);
  CHECK(counts.count(4) == 0);
  const double expect = draws / 4.0, sigma = std::sqrt(draws * 0.25 * 0.75);
  for (int id : {0, 2, 3, 5}) {
    CAPTURE(id);
    CHECK(std::abs(counts[id] - expect) < 3.0 * sigma);
  }
}

TEST_CASE("feature covariance score") {
  std::mt19937_64 rng(11);
  const CameraView cam = testing::front_camera(12);

  SUBCASE("shared feature gives f^2 (W - W^2)") {
    for (int n : {1, 4}) {
      GaussianSet scene = testing::random_scene(rng, n);
      for (int i = 1; i < n; ++i) scene.features.row(i) = scene.features.row(0);
      const RenderOutput out = render(scene, cam);
      double expect = 0.0;
      for (double tr : out.final_transmittance) {
        const double w = 1.0 - tr;
        expect += scene.features.row(0).squaredNorm() * (w - w * w);
      }
      expect /= double(out.final_transmittance.size()) * double(scene.feature_dim());
      CAPTURE(n);
      CHECK(feature_covariance_score(scene, cam) == doctest::Approx(expect).epsilon(1e-9));
    }
  }

  SUBCASE("opaque stack with one feature has no covariance") {
    GaussianSet scene = testing::random_scene(rng, 25);
    for (int i = 0; i < 25; ++i) {
      scene.features.row(i) = scene.features.row(0);
      scene.log_scales.row(i).setConstant(1.0);
      scene.opacity_logits(i) = 9.0;
    }
    CHECK(feature_covariance_score(scene, cam) < 1e-6 * scene.features.row(0).squaredNorm());
  }

  SUBCASE("Gaussian order does not matter") {
    GaussianSet scene = testing::random_scene(rng, 6);
    GaussianSet rev = scene;
    for (int i = 0; i < 6; ++i) {
      rev.positions.row(i) = scene.positions.row(5 - i);
      rev.rotations.row(i) = scene.rotations.row(5 - i);
      rev.log_scales.row(i) = scene.log_scales.row(5 - i);
      rev.opacity_logits(i) = scene.opacity_logits(5 - i);
      rev.colors.row(i) = scene.colors.row(5 - i);
      rev.features.row(i) = scene.features.row(5 - i);
    }
    CHECK(feature_covariance_score(rev, cam) == doctest::Approx(feature_covariance_score(scene, cam)).epsilon(1e-12));
  }
}

TEST_CASE("z-normalization makes the winner invariant to affine rescaling") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(7), b(7);
    for (auto& v : a) v = normal(rng);
    for (auto& v : b) v = normal(rng);
    std::vector<double> a2(7), b2(7);
    for (int i = 0; i < 7; ++i) {
      a2[std::size_t(i)] = 1e6 * a[std::size_t(i)] + 3.0;
      b2[std::size_t(i)] = 1e-6 * b[std::size_t(i)] - 40.0;
    }
    auto combined = [](const std::vector<double>& x, const std::vector<double>& y) {
      const auto zx = z_normalize(x), zy = z_normalize(y);
      std::vector<double> c(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) c[i] = zx[i] + zy[i];
      return c;
    };
    std::vector<int> ids(7);
    std::iota(ids.begin(), ids.end(), 0);
    const auto c1 = combined(a, b), c2 = combined(a2, b2);
    CHECK(argmax_lowest_id(c1, ids) == argmax_lowest_id(c2, ids));
  }
  const auto z = z_normalize(std::vector<double>{2.0, 2.0, 2.0});
  CHECK(z == std::vector<double>{0.0, 0.0, 0.0});
  std::string note;
  CHECK(argmax_lowest_id(std::vector<double>{1.0, 3.0, 3.0}, std::vector<int>{5, 9, 7}, &note) == 2);
  CHECK_FALSE(note.empty());
  CHECK(ranking(std::vector<double>{1.0, 3.0, 3.0}, std::vector<int>{5, 9, 7}) == std::vector<int>{7, 9, 5});
}

TEST_CASE("strategy names round trip") {
  for (Strategy s : all_strategies()) CHECK(strategy_from_name(strategy_name(s)) == s);
  CHECK_THROWS_AS(strategy_from_name("greedy"), SpecError);
  CHECK(strategy_weights(Strategy::OursGeomDef).semantic == 0.0);
  CHECK(strategy_weights(Strategy::OursGeomSem).deformation == 0.0);
}

TEST_CASE("static acquisition schedule") {
  const SyntheticData data = small_data(20, 14);
  TrainConfig tc;
  tc.seed = 1;

  SUBCASE("ten rounds end with twelve distinct views") {
    for (Strategy strategy : {Strategy::Random, Strategy::Covariance, Strategy::FisherRFGeom, Strategy::OursFull}) {
      AcquisitionConfig cfg;
      cfg.strategy = strategy;
      cfg.schedule = quick_schedule();
      AcquisitionLoop loop(Trainer(initial_model(data, {}, false), tc), data.pool, cfg);
      loop.run();
      CAPTURE(strategy_name(strategy));
      CHECK(loop.training_ids().size() == 12);
      CHECK(std::set<int>(loop.training_ids().begin(), loop.training_ids().end()).size() == 12);
      REQUIRE(loop.records().size() == 10);
      for (std::size_t r = 0; r < 10; ++r) {
        CHECK(loop.records()[r].round == int(r));
        CHECK(loop.records()[r].winner == loop.training_ids()[r + 2]);
        CHECK(loop.records()[r].scores.size() == 14 - 2 - r);
      }
    }
  }

  SUBCASE("zero rounds select nothing") {
    AcquisitionConfig cfg;
    cfg.schedule = quick_schedule();
    cfg.schedule.rounds = 0;
    AcquisitionLoop loop(Trainer(initial_model(data, {}, false), tc), data.pool, cfg);
    loop.run();
    CHECK(loop.records().empty());
    CHECK(loop.training_ids().size() == 2);
  }

  SUBCASE("a schedule larger than the pool is rejected") {
    AcquisitionConfig cfg;
    cfg.schedule = quick_schedule();
    cfg.schedule.rounds = 13;
    CHECK_THROWS_AS(AcquisitionLoop(Trainer(initial_model(data, {}, false), tc), data.pool, cfg), ContractError);
  }

  SUBCASE("initial views depend only on the seed") {
    AcquisitionConfig a, b;
    a.schedule = b.schedule = quick_schedule();
    a.schedule.rounds = b.schedule.rounds = 0;
    a.strategy = Strategy::Random;
    b.strategy = Strategy::OursFull;
    AcquisitionLoop la(Trainer(initial_model(data, {}, false), tc), data.pool, a);
    AcquisitionLoop lb(Trainer(initial_model(data, {}, false), tc), data.pool, b);
    CHECK(la.training_ids() == lb.training_ids());
  }
}

TEST_CASE("dynamic acquisition takes one camera per timestep") {
  const SyntheticData data = small_data(21, 5, 4);
  TrainConfig tc;
  tc.mode = TrainMode::Dynamic;
  AcquisitionConfig cfg;
  cfg.strategy = Strategy::OursFull;
  cfg.schedule = quick_schedule();
  AcquisitionLoop loop(Trainer(initial_model(data, {}, true), tc), data.pool, cfg);
  CHECK(loop.stage_count() == 5);
  loop.run();
  REQUIRE(loop.records().size() == 3);
  for (int t = 1; t < 4; ++t) {
    const SelectionRecord& rec = loop.records()[std::size_t(t - 1)];
    CHECK(rec.scores.size() == 5);
    for (const CandidateScore& s : rec.scores) CHECK(s.id % 4 == t);
  }
  CHECK(loop.training_ids().size() == 5 + 3);
}

TEST_CASE("resuming the loop from a checkpoint is bit-transparent") {
  for (bool dynamic : {false, true}) {
    const SyntheticData data = dynamic ? small_data(30, 5, 3) : small_data(30, 8);
    TrainConfig tc;
    tc.seed = 4;
    tc.mode = dynamic ? TrainMode::Dynamic : TrainMode::Static;
    AcquisitionConfig cfg;
    cfg.strategy = Strategy::OursFull;
    cfg.schedule = quick_schedule();
    cfg.schedule.rounds = 4;
    cfg.seed = 9;
    AcquisitionLoop full(Trainer(initial_model(data, {}, dynamic), tc), data.pool, cfg);
    full.run();

    AcquisitionLoop half(Trainer(initial_model(data, {}, dynamic), tc), data.pool, cfg);
    for (int i = 0; i < 2; ++i) half.advance();
    Checkpoint ckpt;
    half.save(ckpt);
    const auto path = std::filesystem::temp_directory_path() / "nbvsplat_loop.ckpt";
    save_checkpoint(path, ckpt);
    AcquisitionLoop resumed = AcquisitionLoop::load(load_checkpoint(path), data.pool);
    std::filesystem::remove(path);
    resumed.run();

    CAPTURE(dynamic);
    CHECK(resumed.training_ids() == full.training_ids());
    CHECK(selection_csv(resumed.records()) == selection_csv(full.records()));
    CHECK(flatten(resumed.trainer().model().scene) == flatten(full.trainer().model().scene));
    CHECK(resumed.trainer().model().decoder.flat() == full.trainer().model().decoder.flat());
    if (dynamic) CHECK(resumed.trainer().model().deformation->params == full.trainer().model().deformation->params);
  }
}

TEST_CASE("selection log format") {
  SelectionRecord rec;
  rec.round = 3;
  rec.strategy = "ours-full";
  rec.scores = {{4, 1.0, 2.0, 0.5, 0.25}, {7, 0.0, 0.0, 0.0, -1.0}};
  rec.winner = 4;
  const std::vector<SelectionRecord> recs{rec};
  const std::string csv = selection_csv(recs);
  CHECK(csv.rfind("round,strategy,view_id,geometric_eig,semantic_eig,deformation_score,combined,selected\n", 0) == 0);
  CHECK(csv.find("3,ours-full,4,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
