#include "nbvsplat/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nbvsplat/io.hpp"

namespace nbv {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json init_json(const ModelInitSpec& s) {
  return {{"position_noise", s.position_noise}, {"log_scale_noise", s.log_scale_noise},
          {"initial_color", s.initial_color},   {"initial_opacity", s.initial_opacity},
          {"feature_std", s.feature_std},       {"seed", s.seed}};
}

ModelInitSpec init_from(const json& j) {
  ModelInitSpec s;
  s.position_noise = j.value("position_noise", s.position_noise);
  s.log_scale_noise = j.value("log_scale_noise", s.log_scale_noise);
  s.initial_color = j.value("initial_color", s.initial_color);
  s.initial_opacity = j.value("initial_opacity", s.initial_opacity);
  s.feature_std = j.value("feature_std", s.feature_std);
  s.seed = j.value("seed", s.seed);
  return s;
}

json weights_json(const ComponentWeights& w) {
  return {{"geometric", w.geometric}, {"semantic", w.semantic}, {"deformation", w.deformation}};
}

ComponentWeights weights_from(const json& j) {
  ComponentWeights w;
  w.geometric = j.value("geometric", w.geometric);
  w.semantic = j.value("semantic", w.semantic);
  w.deformation = j.value("deformation", w.deformation);
  return w;
}

const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::Static: return "static";
    case RunMode::Dynamic: return "dynamic";
    default: return "auto";
  }
}

RunMode mode_from(const std::string& s) {
  if (s == "auto") return RunMode::Auto;
  if (s == "static") return RunMode::Static;
  if (s == "dynamic") return RunMode::Dynamic;
  throw SpecError("unknown mode '" + s + "'");
}

const char* score_choice_name(DeformationScoreChoice c) {
  switch (c) {
    case DeformationScoreChoice::Gradient: return "gradient";
    case DeformationScoreChoice::Hutchinson: return "hutchinson";
    default: return "auto";
  }
}

DeformationScoreChoice score_choice_from(const std::string& s) {
  if (s == "auto") return DeformationScoreChoice::Auto;
  if (s == "gradient") return DeformationScoreChoice::Gradient;
  if (s == "hutchinson") return DeformationScoreChoice::Hutchinson;
  throw SpecError("unknown deformation score '" + s + "'");
}

// Scene given inline or as a path relative to the config file.
SceneSpec scene_from(const json& j, const fs::path& base) {
  if (j.contains("scene_path")) {
    const fs::path p = base / j.at("scene_path").get<std::string>();
    return json::parse(read_text(p)).get<SceneSpec>();
  }
  if (j.contains("scene")) return j.at("scene").get<SceneSpec>();
  throw SpecError("config needs either 'scene' or 'scene_path'");
}

json parse_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

std::vector<const Frame*> frame_pointers(const SyntheticData& data, const std::vector<int>& cameras, int t) {
  std::vector<const Frame*> out;
  for (int c : cameras) {
    NBV_REQUIRE(c >= 0 && c < int(data.pool_cameras.size()), SpecError, "camera " + std::to_string(c) + " not in pool");
    out.push_back(&data.pool_frame(c, t));
  }
  return out;
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

bool ExperimentConfig::dynamic() const {
  if (mode == RunMode::Auto) return scene.timesteps > 1;
  return mode == RunMode::Dynamic;
}

void ExperimentConfig::validate() const {
  scene.validate();
  schedule.validate();
  train.validate();
  if (strategies.empty()) throw SpecError("experiment needs at least one strategy");
  if (seeds.empty()) throw SpecError("experiment needs at least one seed");
  if (lambda_fisher < 0.0) throw SpecError("lambda_fisher must be nonnegative");
  if (hutchinson_probes < 1) throw SpecError("hutchinson_probes must be at least 1");
  if (output_dir.empty()) throw SpecError("output directory is empty");
  if (mode == RunMode::Dynamic && scene.timesteps < 2) throw SpecError("dynamic mode needs at least two timesteps");
}

void to_json(json& j, const ExperimentConfig& c) {
  json strategies = json::array();
  for (Strategy s : c.strategies) strategies.push_back(strategy_name(s));
  j = json{{"scene", c.scene},
           {"strategies", strategies},
           {"seeds", c.seeds},
           {"schedule", c.schedule},
           {"lambda_fisher", c.lambda_fisher},
           {"weights", weights_json(c.weights)},
           {"deformation_score", score_choice_name(c.deformation_score)},
           {"hutchinson_probes", c.hutchinson_probes},
           {"train", c.train},
           {"init", init_json(c.init)},
           {"mode", mode_name(c.mode)},
           {"vary_scene_with_seed", c.vary_scene_with_seed},
           {"record_wall_time", c.record_wall_time},
           {"write_checkpoints", c.write_checkpoints},
           {"write_images", c.write_images},
           {"output_dir", c.output_dir.string()}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("scene")) c.scene = j.at("scene").get<SceneSpec>();
  c.strategies.clear();
  for (const auto& s : j.at("strategies")) c.strategies.push_back(strategy_from_name(s.get<std::string>()));
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<Schedule>();
  c.lambda_fisher = j.value("lambda_fisher", c.lambda_fisher);
  if (j.contains("weights")) c.weights = weights_from(j.at("weights"));
  c.deformation_score = score_choice_from(j.value("deformation_score", std::string("auto")));
  c.hutchinson_probes = j.value("hutchinson_probes", c.hutchinson_probes);
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("init")) c.init = init_from(j.at("init"));
  c.mode = mode_from(j.value("mode", std::string("auto")));
  c.vary_scene_with_seed = j.value("vary_scene_with_seed", c.vary_scene_with_seed);
  c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
  c.write_checkpoints = j.value("write_checkpoints", c.write_checkpoints);
  c.write_images = j.value("write_images", c.write_images);
  c.output_dir = j.value("output_dir", c.output_dir.string());
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const json j = parse_file(path);
  ExperimentConfig c = j.get<ExperimentConfig>();
  c.scene = scene_from(j, path.parent_path());
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Runs

std::string run_name(Strategy s, std::uint64_t seed) {
  return std::string(strategy_name(s)) + "_s" + std::to_string(seed);
}

SceneSpec run_scene(const ExperimentConfig& cfg, std::uint64_t seed) {
  SceneSpec spec = cfg.scene;
  if (cfg.vary_scene_with_seed) spec.seed += seed;
  return spec;
}

RunResult run_single(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const SyntheticData data = generate(run_scene(cfg, seed));
  const bool dynamic = cfg.dynamic();

  ModelInitSpec init = cfg.init;
  init.seed += seed;
  TrainConfig tc = cfg.train;
  tc.seed += seed;
  tc.mode = dynamic ? TrainMode::Dynamic : TrainMode::Static;

  AcquisitionConfig ac;
  ac.strategy = strategy;
  ac.schedule = cfg.schedule;
  ac.seed = seed;
  ac.fisher.lambda = cfg.lambda_fisher;
  ac.fisher.weights = cfg.weights;
  ac.fisher.deformation_score = cfg.deformation_score;
  ac.fisher.hutchinson_probes = cfg.hutchinson_probes;
  ac.fisher.seed = seed;

  // Static runs only ever see the first timestep of the pool.
  std::vector<Frame> static_pool;
  std::span<const Frame> pool = data.pool;
  std::vector<Frame> test = data.test;
  if (!dynamic) {
    for (const Frame& f : data.pool)
      if (f.timestep == 0) static_pool.push_back(f);
    pool = static_pool;
    test = data.test_frames_at(0);
  }

  AcquisitionLoop loop(Trainer(initial_model(data, init, dynamic), tc), pool, ac);
  RunResult r;
  r.strategy = strategy;
  r.seed = seed;
  while (!loop.finished()) {
    loop.advance();
    StagePoint p;
    p.stage = loop.stage();
    p.iteration = loop.trainer().iteration();
    p.views = int(loop.training_ids().size());
    p.metrics = evaluate(loop.trainer().model(), test, loop.training_ids(), data.embedding);
    r.curve.push_back(p);
  }
  r.metrics = r.curve.back().metrics;
  r.n_views = int(loop.training_ids().size());
  r.records = loop.records();
  r.ok = true;

  if (!out_dir.empty()) {
    const std::string name = run_name(strategy, seed);
    write_text(out_dir / "selections" / (name + ".csv"), selection_csv(r.records));
    if (cfg.write_images) {
      const Frame& view = test.front();
      const Model& model = loop.trainer().model();
      emit_heatmap(model, view.view, view.view.timestamp, out_dir / "heatmaps" / (name + ".pgm"));
      write_ppm(out_dir / "strips" / (name + ".ppm"), comparison_strip(view.rgb, model.render_view(view.view).color));
    }
    if (cfg.write_checkpoints) {
      Checkpoint ckpt;
      loop.save(ckpt);
      // Enough for the heatmap tool to rebuild any pool view without regenerating frames.
      json cams = json::array();
      for (const CameraView& c : data.pool_cameras) cams.push_back(camera_to_json(c));
      json times = json::array();
      for (int t = 0; t < data.spec.timesteps; ++t) times.push_back(data.time_of(t));
      ckpt.meta["scene"] = {{"spec", data.spec}, {"pool_cameras", cams}, {"times", times}};
      save_checkpoint(out_dir / "checkpoints" / (name + ".ckpt"), ckpt);
    }
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

bool ExperimentResult::all_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.ok; });
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  ExperimentResult result;
  for (Strategy s : cfg.strategies)
    for (std::uint64_t seed : cfg.seeds) {
      try {
        result.runs.push_back(run_single(cfg, s, seed, cfg.output_dir));
        const RunResult& r = result.runs.back();
        if (log)
          *log << run_name(s, seed) << ": psnr " << fmt(r.metrics.psnr) << " miou " << fmt(r.metrics.miou) << '\n';
      } catch (const std::exception& e) {
        RunResult r;
        r.strategy = s;
        r.seed = seed;
        r.error = e.what();
        result.runs.push_back(r);
        if (log) *log << run_name(s, seed) << ": FAILED: " << e.what() << '\n';
      }
    }

  write_text(cfg.output_dir / "results.csv", results_csv(result.runs, cfg.record_wall_time));
  write_text(cfg.output_dir / "summary.csv", summary_csv(result.runs, cfg.strategies));
  write_text(cfg.output_dir / "metrics.csv", metrics_csv(result.runs));
  std::string failures;
  for (const RunResult& r : result.runs)
    if (!r.ok) {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      std::replace(msg.begin(), msg.end(), '"', '\'');
      failures += std::string(strategy_name(r.strategy)) + ',' + std::to_string(r.seed) + ",\"" + msg + "\"\n";
    }
  const fs::path fail_path = cfg.output_dir / "failures.csv";
  if (!failures.empty())
    write_text(fail_path, "strategy,seed,error\n" + failures);
  else if (fs::exists(fail_path))
    fs::remove(fail_path);
  return result;
}

std::string results_csv(std::span<const RunResult> runs, bool wall_time) {
  std::string out = "strategy,seed,psnr,ssim,miou,macc,n_views,wall_seconds\n";
  for (const RunResult& r : runs) {
    if (!r.ok) continue;
    const EvalMetrics& m = r.metrics;
    out += std::string(strategy_name(r.strategy)) + ',' + std::to_string(r.seed) + ',' + fmt(m.psnr) + ',' +
           fmt(m.ssim) + ',' + fmt(m.miou) + ',' + fmt(m.macc) + ',' + std::to_string(r.n_views) + ',' +
           (wall_time ? fmt(r.wall_seconds) : std::string()) + '\n';
  }
  return out;
}

std::string summary_csv(std::span<const RunResult> runs, std::span<const Strategy> order) {
  std::string out = "strategy,runs,psnr_mean,psnr_std,ssim_mean,ssim_std,miou_mean,miou_std,macc_mean,macc_std\n";
  for (Strategy s : order) {
    std::vector<EvalMetrics> ms;
    for (const RunResult& r : runs)
      if (r.ok && r.strategy == s) ms.push_back(r.metrics);
    if (ms.empty()) continue;
    out += std::string(strategy_name(s)) + ',' + std::to_string(ms.size());
    for (double EvalMetrics::*field : {&EvalMetrics::psnr, &EvalMetrics::ssim, &EvalMetrics::miou, &EvalMetrics::macc}) {
      double mean = 0.0;
      for (const auto& m : ms) mean += m.*field;
      mean /= double(ms.size());
      // sample standard deviation; a single run reports 0
      double var = 0.0;
      for (const auto& m : ms) var += (m.*field - mean) * (m.*field - mean);
      const double sd = ms.size() > 1 ? std::sqrt(var / double(ms.size() - 1)) : 0.0;
      out += ',' + fmt(mean) + ',' + fmt(sd);
    }
    out += '\n';
  }
  return out;
}

std::string metrics_csv(std::span<const RunResult> runs) {
  std::string out = "strategy,seed,stage,iteration,n_views,psnr,ssim,miou,macc\n";
  for (const RunResult& r : runs)
    for (const StagePoint& p : r.curve)
      out += std::string(strategy_name(r.strategy)) + ',' + std::to_string(r.seed) + ',' + std::to_string(p.stage) +
             ',' + std::to_string(p.iteration) + ',' + std::to_string(p.views) + ',' + fmt(p.metrics.psnr) + ',' +
             fmt(p.metrics.ssim) + ',' + fmt(p.metrics.miou) + ',' + fmt(p.metrics.macc) + '\n';
  return out;
}

Image model_heatmap(const Model& model, const CameraView& view, double t) {
  const DeformationNet* net = model.deformation ? &*model.deformation : nullptr;
  return fisher_heatmap(model.scene, view, net, t, model.settings);
}

void emit_heatmap(const Model& model, const CameraView& view, double t, const fs::path& out) {
  write_pgm(out, normalize_heatmap(model_heatmap(model, view, t)));
}

Image checkpoint_heatmap(const fs::path& checkpoint, int view, int timestep) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  NBV_REQUIRE(ckpt.meta.contains("scene"), ContractError, checkpoint.string() + " carries no camera metadata");
  const json& scene = ckpt.meta.at("scene");
  const json& cams = scene.at("pool_cameras");
  const json& times = scene.at("times");
  NBV_REQUIRE(view >= 0 && view < int(cams.size()), ContractError, "view " + std::to_string(view) + " not in pool");
  NBV_REQUIRE(timestep >= 0 && timestep < int(times.size()), ContractError,
              "timestep " + std::to_string(timestep) + " out of range");
  const Trainer trainer = Trainer::load_state(ckpt);
  CameraView cam = camera_from_json(cams.at(std::size_t(view)));
  cam.timestamp = times.at(std::size_t(timestep)).get<double>();
  return model_heatmap(trainer.model(), cam, cam.timestamp);
}

Image comparison_strip(const Image& gt, const Image& render) {
  NBV_REQUIRE(gt.same_shape(render) && gt.channels == 3, ContractError, "strip needs two RGB images of one shape");
  Image strip(gt.height, 3 * gt.width, 3);
  for (int r = 0; r < gt.height; ++r)
    for (int c = 0; c < gt.width; ++c)
      for (int k = 0; k < 3; ++k) {
        strip.at(r, c, k) = gt.at(r, c, k);
        strip.at(r, gt.width + c, k) = render.at(r, c, k);
        strip.at(r, 2 * gt.width + c, k) = std::abs(gt.at(r, c, k) - render.at(r, c, k));
      }
  return strip;
}

// ---------------------------------------------------------------------------
// Oracle study

void OracleStudyConfig::validate() const {
  scene.validate();
  train.validate();
  if (train_cameras.empty()) throw SpecError("oracle study needs training cameras");
  if (candidate_cameras.size() < 2) throw SpecError("oracle study needs at least two candidates");
  if (seeds.empty()) throw SpecError("oracle study needs at least one seed");
  if (pretrain_iterations < 0 || oracle_iterations < 1) throw SpecError("oracle iteration counts are malformed");
  for (int c : candidate_cameras)
    if (std::find(train_cameras.begin(), train_cameras.end(), c) != train_cameras.end())
      throw SpecError("camera " + std::to_string(c) + " is both a training view and a candidate");
}

void to_json(json& j, const OracleStudyConfig& c) {
  j = json{{"scene", c.scene},
           {"train_cameras", c.train_cameras},
           {"candidate_cameras", c.candidate_cameras},
           {"pretrain_iterations", c.pretrain_iterations},
           {"oracle_iterations", c.oracle_iterations},
           {"seeds", c.seeds},
           {"lambda_fisher", c.lambda_fisher},
           {"weights", weights_json(c.weights)},
           {"train", c.train},
           {"init", init_json(c.init)}};
}

void from_json(const json& j, OracleStudyConfig& c) {
  c = OracleStudyConfig{};
  if (j.contains("scene")) c.scene = j.at("scene").get<SceneSpec>();
  c.train_cameras = j.value("train_cameras", c.train_cameras);
  c.candidate_cameras = j.value("candidate_cameras", c.candidate_cameras);
  c.pretrain_iterations = j.value("pretrain_iterations", c.pretrain_iterations);
  c.oracle_iterations = j.value("oracle_iterations", c.oracle_iterations);
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.lambda_fisher = j.value("lambda_fisher", c.lambda_fisher);
  if (j.contains("weights")) c.weights = weights_from(j.at("weights"));
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("init")) c.init = init_from(j.at("init"));
}

OracleStudyConfig load_oracle_config(const fs::path& path) {
  const json j = parse_file(path);
  OracleStudyConfig c = j.get<OracleStudyConfig>();
  c.scene = scene_from(j, path.parent_path());
  c.validate();
  return c;
}

OracleStudyResult run_oracle_study(const OracleStudyConfig& cfg, std::ostream* log) {
  cfg.validate();
  SceneSpec spec = cfg.scene;
  spec.timesteps = 1;
  spec.motions.clear();
  const SyntheticData data = generate(spec);
  const auto train = frame_pointers(data, cfg.train_cameras, 0);
  const auto cands = frame_pointers(data, cfg.candidate_cameras, 0);

  std::vector<Candidate> cand_list;
  for (const Frame* f : cands) cand_list.push_back({f->id, f->camera, f->timestep, f->view});
  const CandidatePool pool(cand_list);

  OracleStudyResult out;
  for (const Frame* f : cands) out.candidate_ids.push_back(f->id);
  for (std::uint64_t seed : cfg.seeds) {
    ModelInitSpec init = cfg.init;
    init.seed += seed;
    TrainConfig tc = cfg.train;
    tc.seed += seed;
    tc.mode = TrainMode::Static;
    Trainer trainer(initial_model(data, init, false), tc);
    trainer.train_burst(train, cfg.pretrain_iterations);

    TrainingFisher fisher = TrainingFisher::zeros(ParamLayout(trainer.model().scene).total());
    for (const Frame* f : train) fisher.add(view_fisher(trainer.model(), f->view));
    FisherSelectionOptions opts;
    opts.lambda = cfg.lambda_fisher;
    opts.weights = cfg.weights;
    opts.weights.deformation = 0.0;
    const SelectionRecord rec = select_fisher(pool, trainer.model(), fisher, opts);
    std::vector<double> score;
    for (const CandidateScore& s : rec.scores) score.push_back(s.combined);
    out.scores.push_back(score);
    out.drops.push_back(oracle_error_drop(trainer, train, cands, data.test, cfg.oracle_iterations));
    if (log) {
      *log << "seed " << seed << ":";
      for (std::size_t k = 0; k < score.size(); ++k)
        *log << " [" << out.candidate_ids[k] << ": " << fmt(score[k]) << " / " << fmt(out.drops.back()[k]) << "]";
      *log << '\n';
    }
  }
  for (std::size_t k = 0; k < out.candidate_ids.size(); ++k) {
    std::vector<double> s, d;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      s.push_back(out.scores[i][k]);
      d.push_back(out.drops[i][k]);
    }
    out.median_score.push_back(median(s));
    out.median_drop.push_back(median(d));
  }
  out.spearman = spearman(out.median_score, out.median_drop);
  return out;
}

std::string oracle_csv(const OracleStudyResult& r) {
  std::string out = "view_id,median_score,median_psnr_gain\n";
  for (std::size_t k = 0; k < r.candidate_ids.size(); ++k)
    out += std::to_string(r.candidate_ids[k]) + ',' + fmt(r.median_score[k]) + ',' + fmt(r.median_drop[k]) + '\n';
  return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  NBV_REQUIRE(a.size() == b.size() && a.size() >= 2, ContractError, "spearman needs two samples of equal length >= 2");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double median(std::vector<double> v) {
  NBV_REQUIRE(!v.empty(), ContractError, "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace nbv
