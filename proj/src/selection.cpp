#include "nbvsplat/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace nbv {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Pool

CandidatePool::CandidatePool(std::vector<Candidate> candidates)
    : candidates_(std::move(candidates)), available_(candidates_.size(), true) {
  std::set<int> ids;
  for (const Candidate& c : candidates_)
    NBV_REQUIRE(ids.insert(c.id).second, ContractError, "candidate id " + std::to_string(c.id) + " repeats");
}

CandidatePool CandidatePool::from_frames(std::span<const Frame> frames) {
  std::vector<Candidate> out;
  out.reserve(frames.size());
  for (const Frame& f : frames) out.push_back({f.id, f.camera, f.timestep, f.view});
  return CandidatePool(std::move(out));
}

std::size_t CandidatePool::index_of(int id) const {
  for (std::size_t i = 0; i < candidates_.size(); ++i)
    if (candidates_[i].id == id) return i;
  throw ContractError("no candidate with id " + std::to_string(id));
}

const Candidate& CandidatePool::by_id(int id) const { return candidates_[index_of(id)]; }
bool CandidatePool::available_id(int id) const { return available_[index_of(id)]; }

int CandidatePool::available_count() const { return int(std::count(available_.begin(), available_.end(), true)); }

std::vector<std::size_t> CandidatePool::open(std::optional<int> timestep) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < candidates_.size(); ++i)
    if (available_[i] && (!timestep || candidates_[i].timestep == *timestep)) out.push_back(i);
  return out;
}

void CandidatePool::take(int id) {
  const std::size_t i = index_of(id);
  NBV_REQUIRE(available_[i], ContractError, "candidate " + std::to_string(id) + " was already taken");
  available_[i] = false;
}

// ---------------------------------------------------------------------------
// Scoring helpers

void TrainingFisher::add(const FisherComponents& view) {
  color += view.color;
  features += view.features;
}

namespace {

struct ViewGeometry {
  GaussianSet scene;
  std::vector<GeometryChain> chain;
};

ViewGeometry geometry_at(const Model& model, double t) {
  if (!model.deformation) return {model.scene, {}};
  return {deform(model.scene, *model.deformation, t),
          deformation_geometry_jacobians(model.scene, *model.deformation, t)};
}

FisherComponents view_fisher(const Model& model, const CameraView& view, bool include_semantic) {
  const ViewGeometry g = geometry_at(model, view.timestamp);
  FisherOptions opts;
  opts.settings = model.settings;
  opts.geometry_chain = g.chain;
  if (include_semantic) return fisher_components(g.scene, view, opts);
  const Index n = ParamLayout(g.scene).total();
  return {fisher_diag(g.scene, view, false, opts), FisherDiagonal::zeros(n)};
}

std::vector<int> open_ids(const CandidatePool& pool, const std::vector<std::size_t>& open) {
  std::vector<int> ids;
  for (std::size_t i : open) ids.push_back(pool[i].id);
  return ids;
}

const Frame* latest_earlier_frame(std::span<const Frame* const> known, const Candidate& c) {
  const Frame* best = nullptr;
  for (const Frame* f : known)
    if (f->camera == c.camera && f->timestep < c.timestep && (!best || f->timestep > best->timestep)) best = f;
  return best;
}

double deformation_component(const Model& model, const Candidate& c, std::span<const Frame* const> known,
                             const FisherSelectionOptions& opts) {
  const DeformationNet& net = *model.deformation;
  const double t = c.view.timestamp;
  const Frame* proxy = opts.deformation_score == DeformationScoreChoice::Hutchinson ? nullptr
                                                                                     : latest_earlier_frame(known, c);
  if (proxy) return deformation_score_grad(model.scene, net, c.view, t, proxy->rgb, model.settings).value;
  const Image own = model.render_view(c.view).color;
  if (opts.deformation_score == DeformationScoreChoice::Gradient)
    return deformation_score_grad(model.scene, net, c.view, t, own, model.settings).value;
  return deformation_score_hutchinson(model.scene, net, c.view, t, own, opts.hutchinson_probes, opts.seed,
                                      model.settings)
      .value;
}

SelectionRecord finish_record(std::string strategy, std::vector<CandidateScore> scores) {
  SelectionRecord rec;
  rec.strategy = std::move(strategy);
  std::vector<double> combined;
  std::vector<int> ids;
  for (const CandidateScore& s : scores) {
    combined.push_back(s.combined);
    ids.push_back(s.id);
  }
  rec.winner = ids[argmax_lowest_id(combined, ids, &rec.tie_break)];
  rec.scores = std::move(scores);
  return rec;
}

}  // namespace

FisherComponents view_fisher(const Model& model, const CameraView& view) { return view_fisher(model, view, true); }

std::size_t argmax_lowest_id(std::span<const double> scores, std::span<const int> ids, std::string* note) {
  NBV_REQUIRE(!scores.empty() && scores.size() == ids.size(), ContractError, "no candidates to choose from");
  std::size_t best = 0;
  int tied = 1;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) {
      best = i;
      tied = 1;
    } else if (scores[i] == scores[best]) {
      ++tied;
      if (ids[i] < ids[best]) best = i;
    }
  }
  if (note) *note = tied > 1 ? std::to_string(tied) + "-way tie, lowest id kept" : "";
  return best;
}

std::vector<double> z_normalize(std::span<const double> x) {
  std::vector<double> z(x.size(), 0.0);
  if (x.empty()) return z;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / double(x.size()));
  if (sd < 1e-12) return z;
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mean) / sd;
  return z;
}

std::vector<int> ranking(std::span<const double> scores, std::span<const int> ids) {
  NBV_REQUIRE(scores.size() == ids.size(), ContractError, "scores and ids differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<int> out;
  for (std::size_t i : order) out.push_back(ids[i]);
  return out;
}

std::vector<int> ranking(const SelectionRecord& record) {
  std::vector<double> s;
  std::vector<int> ids;
  for (const CandidateScore& c : record.scores) {
    s.push_back(c.combined);
    ids.push_back(c.id);
  }
  return ranking(s, ids);
}

// ---------------------------------------------------------------------------
// Strategies

SelectionRecord select_fisher(const CandidatePool& pool, const Model& model, const TrainingFisher& train,
                              const FisherSelectionOptions& opts, std::span<const Frame* const> known,
                              std::optional<int> timestep) {
  const auto open = pool.open(timestep);
  NBV_REQUIRE(!open.empty(), ContractError, "candidate pool has no available views");
  const ComponentWeights& w = opts.weights;
  const bool semantic = opts.include_semantic && w.semantic != 0.0;
  const bool deformation = model.deformation && w.deformation != 0.0;

  std::vector<CandidateScore> scores;
  std::vector<double> geo, sem, def;
  for (std::size_t i : open) {
    const Candidate& c = pool[i];
    const FisherComponents f = view_fisher(model, c.view, semantic);
    CandidateScore s;
    s.id = c.id;
    s.geometric = eig(f.color, train.color, opts.lambda);
    if (semantic) s.semantic = eig(f.features, train.features, opts.lambda);
    if (deformation) s.deformation = deformation_component(model, c, known, opts);
    geo.push_back(s.geometric);
    sem.push_back(s.semantic);
    def.push_back(s.deformation);
    scores.push_back(s);
  }
  const auto zg = z_normalize(geo), zs = z_normalize(sem), zd = z_normalize(def);
  for (std::size_t k = 0; k < scores.size(); ++k)
    scores[k].combined = w.geometric * zg[k] + w.semantic * zs[k] + w.deformation * zd[k];
  return finish_record("fisher", std::move(scores));
}

std::vector<double> fisherrf_scores(const CandidatePool& pool, const Model& model, const FisherDiagonal& train_color,
                                    double lambda, std::optional<int> timestep) {
  std::vector<double> out;
  for (std::size_t i : pool.open(timestep)) {
    const CameraView& view = pool[i].view;
    const ViewGeometry g = geometry_at(model, view.timestamp);
    FisherOptions opts;
    opts.settings = model.settings;
    opts.geometry_chain = g.chain;
    out.push_back(eig(fisher_diag(g.scene, view, false, opts), train_color, lambda));
  }
  return out;
}

SelectionRecord select_random(const CandidatePool& pool, std::mt19937_64& rng, std::optional<int> timestep) {
  const auto open = pool.open(timestep);
  NBV_REQUIRE(!open.empty(), ContractError, "candidate pool has no available views");
  std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
  const std::size_t chosen = pick(rng);
  std::vector<CandidateScore> scores;
  for (std::size_t k = 0; k < open.size(); ++k) {
    CandidateScore s;
    s.id = pool[open[k]].id;
    s.combined = k == chosen ? 1.0 : 0.0;
    scores.push_back(s);
  }
  return finish_record("random", std::move(scores));
}

SelectionRecord select_random(const CandidatePool& pool, std::uint64_t seed, std::optional<int> timestep) {
  std::mt19937_64 rng(seed);
  return select_random(pool, rng, timestep);
}

double feature_covariance_score(const GaussianSet& scene, const CameraView& view, const RenderSettings& settings) {
  GaussianSet squared = scene;
  squared.features = scene.features.array().square().matrix();
  const Image m2 = render(squared, view, settings).features;
  const Image mean = render(scene, view, settings).features;
  double acc = 0.0;
  for (std::size_t i = 0; i < m2.data.size(); ++i) acc += m2.data[i] - mean.data[i] * mean.data[i];
  return m2.data.empty() ? 0.0 : acc / double(m2.data.size());
}

SelectionRecord select_covariance(const CandidatePool& pool, const Model& model, std::optional<int> timestep) {
  const auto open = pool.open(timestep);
  NBV_REQUIRE(!open.empty(), ContractError, "candidate pool has no available views");
  std::vector<CandidateScore> scores;
  for (std::size_t i : open) {
    const Candidate& c = pool[i];
    CandidateScore s;
    s.id = c.id;
    s.combined = feature_covariance_score(model.scene_at(c.view.timestamp), c.view, model.settings);
    scores.push_back(s);
  }
  return finish_record("covariance", std::move(scores));
}

// ---------------------------------------------------------------------------
// Strategy table

namespace {

struct StrategyInfo {
  Strategy strategy;
  const char* name;
};
constexpr StrategyInfo kStrategies[] = {
    {Strategy::Random, "random"},
    {Strategy::Covariance, "covariance"},
    {Strategy::FisherRFGeom, "fisherrf-geom"},
    {Strategy::OursGeomSem, "ours-geom-sem"},
    {Strategy::OursGeomDef, "ours-geom-def"},
    {Strategy::OursFull, "ours-full"},
};

}  // namespace

const char* strategy_name(Strategy s) {
  for (const auto& info : kStrategies)
    if (info.strategy == s) return info.name;
  return "unknown";
}

Strategy strategy_from_name(const std::string& name) {
  for (const auto& info : kStrategies)
    if (name == info.name) return info.strategy;
  throw SpecError("unknown strategy '" + name + "'");
}

std::vector<Strategy> all_strategies() {
  std::vector<Strategy> out;
  for (const auto& info : kStrategies) out.push_back(info.strategy);
  return out;
}

ComponentWeights strategy_weights(Strategy s) {
  switch (s) {
    case Strategy::FisherRFGeom: return {1.0, 0.0, 0.0};
    case Strategy::OursGeomSem: return {1.0, 1.0, 0.0};
    case Strategy::OursGeomDef: return {1.0, 0.0, 1.0};
    default: return {1.0, 1.0, 1.0};
  }
}

void Schedule::validate() const {
  if (initial_views < 1) throw SpecError("schedule needs at least one initial view");
  if (views_per_round < 1 || rounds < 0) throw SpecError("schedule rounds are malformed");
  if (iterations_per_round < 0 || final_iterations < 0 || pretrain_iterations < 0)
    throw SpecError("schedule iteration counts must be nonnegative");
}

void to_json(json& j, const Schedule& s) {
  j = json{{"initial_views", s.initial_views},           {"views_per_round", s.views_per_round},
           {"iterations_per_round", s.iterations_per_round}, {"rounds", s.rounds},
           {"final_iterations", s.final_iterations},     {"pretrain_iterations", s.pretrain_iterations}};
}

void from_json(const json& j, Schedule& s) {
  s = Schedule{};
  s.initial_views = j.value("initial_views", s.initial_views);
  s.views_per_round = j.value("views_per_round", s.views_per_round);
  s.iterations_per_round = j.value("iterations_per_round", s.iterations_per_round);
  s.rounds = j.value("rounds", s.rounds);
  s.final_iterations = j.value("final_iterations", s.final_iterations);
  s.pretrain_iterations = j.value("pretrain_iterations", s.pretrain_iterations);
}

// ---------------------------------------------------------------------------
// Acquisition loop

namespace {

const char* deformation_choice_name(DeformationScoreChoice c) {
  switch (c) {
    case DeformationScoreChoice::Gradient: return "gradient";
    case DeformationScoreChoice::Hutchinson: return "hutchinson";
    default: return "auto";
  }
}

DeformationScoreChoice deformation_choice(const std::string& s) {
  if (s == "auto") return DeformationScoreChoice::Auto;
  if (s == "gradient") return DeformationScoreChoice::Gradient;
  if (s == "hutchinson") return DeformationScoreChoice::Hutchinson;
  throw SpecError("unknown deformation score '" + s + "'");
}

json record_json(const SelectionRecord& r) {
  json scores = json::array();
  for (const CandidateScore& s : r.scores)
    scores.push_back({s.id, s.geometric, s.semantic, s.deformation, s.combined});
  return {{"round", r.round}, {"strategy", r.strategy}, {"winner", r.winner}, {"tie_break", r.tie_break},
          {"scores", scores}};
}

SelectionRecord record_from(const json& j) {
  SelectionRecord r;
  r.round = j.at("round");
  r.strategy = j.at("strategy");
  r.winner = j.at("winner");
  r.tie_break = j.at("tie_break");
  for (const json& s : j.at("scores"))
    r.scores.push_back({s.at(0).get<int>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>(),
                        s.at(4).get<double>()});
  return r;
}

}  // namespace

AcquisitionLoop::AcquisitionLoop(Trainer trainer, std::span<const Frame> frames, AcquisitionConfig cfg)
    : AcquisitionLoop(std::move(trainer), frames, cfg, true) {}

AcquisitionLoop::AcquisitionLoop(Trainer trainer, std::span<const Frame> frames, AcquisitionConfig cfg, bool fresh)
    : trainer_(std::move(trainer)), frames_(frames), cfg_(cfg), pool_(CandidatePool::from_frames(frames)),
      rng_(cfg.seed) {
  cfg_.schedule.validate();
  // The strategy switches components on or off; configured weights scale the ones left on.
  const ComponentWeights mask = strategy_weights(cfg_.strategy);
  cfg_.fisher.weights = {mask.geometric * cfg.fisher.weights.geometric, mask.semantic * cfg.fisher.weights.semantic,
                         mask.deformation * cfg.fisher.weights.deformation};
  NBV_REQUIRE(!frames.empty(), ContractError, "acquisition needs a nonempty pool");
  for (const Frame& f : frames) timesteps_ = std::max(timesteps_, f.timestep + 1);
  const Index n = ParamLayout(trainer_.model().scene).total();
  train_fisher_ = TrainingFisher::zeros(n);
  if (fresh) start();
}

int AcquisitionLoop::stage_count() const {
  return dynamic() ? timesteps_ + 1 : cfg_.schedule.rounds + 1;
}

bool AcquisitionLoop::uses_fisher() const {
  return cfg_.strategy != Strategy::Random && cfg_.strategy != Strategy::Covariance;
}

const Frame& AcquisitionLoop::frame(int id) const {
  for (const Frame& f : frames_)
    if (f.id == id) return f;
  throw ContractError("no pool frame with id " + std::to_string(id));
}

void AcquisitionLoop::start() {
  const Schedule& s = cfg_.schedule;
  std::vector<int> initial;
  if (dynamic()) {
    for (std::size_t i : pool_.open(0)) initial.push_back(pool_[i].id);
    for (int t = 1; t < timesteps_; ++t)
      NBV_REQUIRE(!pool_.open(t).empty(), ContractError, "no candidate camera at timestep " + std::to_string(t));
  } else {
    NBV_REQUIRE(s.initial_views + s.rounds * s.views_per_round <= int(pool_.size()), ContractError,
                "schedule needs " + std::to_string(s.initial_views + s.rounds * s.views_per_round) +
                    " views but the pool holds " + std::to_string(pool_.size()));
    std::vector<int> ids;
    for (std::size_t i = 0; i < pool_.size(); ++i) ids.push_back(pool_[i].id);
    std::shuffle(ids.begin(), ids.end(), rng_);
    initial.assign(ids.begin(), ids.begin() + s.initial_views);
  }
  for (int id : initial) acquire(id, nullptr);
}

void AcquisitionLoop::acquire(int id, const FisherComponents* fisher) {
  pool_.take(id);
  train_ids_.push_back(id);
  if (!uses_fisher()) return;
  if (fisher) {
    train_fisher_.add(*fisher);
    return;
  }
  const bool semantic = cfg_.strategy != Strategy::FisherRFGeom && cfg_.fisher.include_semantic;
  train_fisher_.add(view_fisher(trainer_.model(), frame(id).view, semantic));
}

void AcquisitionLoop::train(int iterations, bool train_deformation) {
  if (iterations <= 0) return;
  std::vector<const Frame*> views;
  for (int id : train_ids_) views.push_back(&frame(id));
  trainer_.train_burst(views, iterations, train_deformation);
}

SelectionRecord AcquisitionLoop::select(int round, std::optional<int> timestep) {
  const Model& model = trainer_.model();
  SelectionRecord rec;
  switch (cfg_.strategy) {
    case Strategy::Random: rec = select_random(pool_, rng_, timestep); break;
    case Strategy::Covariance: rec = select_covariance(pool_, model, timestep); break;
    case Strategy::FisherRFGeom: {
      const auto open = pool_.open(timestep);
      NBV_REQUIRE(!open.empty(), ContractError, "candidate pool has no available views");
      const auto scores = fisherrf_scores(pool_, model, train_fisher_.color, cfg_.fisher.lambda, timestep);
      std::vector<CandidateScore> table;
      for (std::size_t k = 0; k < open.size(); ++k)
        table.push_back({pool_[open[k]].id, scores[k], 0.0, 0.0, scores[k]});
      const auto ids = open_ids(pool_, open);
      rec.scores = std::move(table);
      rec.winner = ids[argmax_lowest_id(scores, ids, &rec.tie_break)];
      break;
    }
    default: {
      std::vector<const Frame*> known;
      for (int id : train_ids_) known.push_back(&frame(id));
      rec = select_fisher(pool_, model, train_fisher_, cfg_.fisher, known, timestep);
    }
  }
  rec.round = round;
  rec.strategy = strategy_name(cfg_.strategy);
  return rec;
}

void AcquisitionLoop::advance() {
  NBV_REQUIRE(!finished(), ContractError, "acquisition loop already finished");
  const Schedule& s = cfg_.schedule;
  const int last = stage_count() - 1;
  if (stage_ == last) {
    train(s.final_iterations, true);
  } else if (dynamic()) {
    if (stage_ == 0) {
      train(s.pretrain_iterations, false);
    } else {
      train(s.iterations_per_round, true);
      const SelectionRecord rec = select(stage_ - 1, stage_);
      records_.push_back(rec);
      acquire(rec.winner, nullptr);
    }
  } else {
    train(s.iterations_per_round, true);
    for (int k = 0; k < s.views_per_round; ++k) {
      const SelectionRecord rec = select(stage_, std::nullopt);
      records_.push_back(rec);
      acquire(rec.winner, nullptr);
    }
  }
  ++stage_;
}

void AcquisitionLoop::run() {
  while (!finished()) advance();
}

void AcquisitionLoop::save(Checkpoint& ckpt) const {
  trainer_.save_state(ckpt);
  json records = json::array();
  for (const SelectionRecord& r : records_) records.push_back(record_json(r));
  const FisherSelectionOptions& f = cfg_.fisher;
  ckpt.meta["acquisition"] = {{"strategy", strategy_name(cfg_.strategy)},
                              {"schedule", cfg_.schedule},
                              {"seed", cfg_.seed},
                              {"lambda", f.lambda},
                              {"weights", {f.weights.geometric, f.weights.semantic, f.weights.deformation}},
                              {"include_semantic", f.include_semantic},
                              {"deformation_score", deformation_choice_name(f.deformation_score)},
                              {"hutchinson_probes", f.hutchinson_probes},
                              {"probe_seed", f.seed},
                              {"stage", stage_},
                              {"training_ids", train_ids_},
                              {"rng", rng_to_string(rng_)},
                              {"records", records}};
  ckpt.put("fisher.train.color", train_fisher_.color.values);
  ckpt.put("fisher.train.features", train_fisher_.features.values);
}

AcquisitionLoop AcquisitionLoop::load(const Checkpoint& ckpt, std::span<const Frame> frames) {
  const json& a = ckpt.meta.at("acquisition");
  AcquisitionConfig cfg;
  cfg.strategy = strategy_from_name(a.at("strategy"));
  cfg.schedule = a.at("schedule").get<Schedule>();
  cfg.seed = a.at("seed");
  cfg.fisher.lambda = a.at("lambda");
  const json& w = a.at("weights");
  cfg.fisher.weights = {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()};
  cfg.fisher.include_semantic = a.at("include_semantic");
  cfg.fisher.deformation_score = deformation_choice(a.at("deformation_score"));
  cfg.fisher.hutchinson_probes = a.at("hutchinson_probes");
  cfg.fisher.seed = a.at("probe_seed");
  AcquisitionLoop loop(Trainer::load_state(ckpt), frames, cfg, false);
  loop.stage_ = a.at("stage");
  loop.train_ids_ = a.at("training_ids").get<std::vector<int>>();
  for (int id : loop.train_ids_) loop.pool_.take(id);
  loop.rng_ = rng_from_string(a.at("rng").get<std::string>());
  for (const json& r : a.at("records")) loop.records_.push_back(record_from(r));
  loop.train_fisher_.color.values = ckpt.vec("fisher.train.color");
  loop.train_fisher_.features.values = ckpt.vec("fisher.train.features");
  return loop;
}

std::string selection_csv(std::span<const SelectionRecord> records) {
  std::ostringstream out;
  out.precision(17);
  out << "round,strategy,view_id,geometric_eig,semantic_eig,deformation_score,combined,selected\n";
  for (const SelectionRecord& r : records)
    for (const CandidateScore& s : r.scores)
      out << r.round << ',' << r.strategy << ',' << s.id << ',' << s.geometric << ',' << s.semantic << ','
          << s.deformation << ',' << s.combined << ',' << (s.id == r.winner ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace nbv
