#include "rtsmono/train.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rtsmono/checkpoint.hpp"
#include "rtsmono/ops.hpp"

namespace rtsmono {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw std::invalid_argument("train config: lr0 must be > 0");
  if (total_steps < 1) throw std::invalid_argument("train config: total_steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (checkpoint_every < 0 || log_every < 0) throw std::invalid_argument("train config: intervals must be >= 0");
  if (prefetch < 1) throw std::invalid_argument("train config: prefetch must be >= 1");
  if (augment.brightness < 0 || augment.brightness >= 1) {
    throw std::invalid_argument("train config: brightness jitter must lie in [0, 1)");
  }
  weights.validate();
  model_config().validate();
  multi_scale_maps(width, height, scales);
}

PoseNetConfig TrainConfig::pose_config() const {
  if (variant == Variant::Test) return PoseNetConfig::tiny();
  return variant == Variant::Desk ? PoseNetConfig::compact() : PoseNetConfig{};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config key " + key + ": not a number: '" + v + "'");
  return d;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long d = 0;
  try {
    d = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config key " + key + ": not an integer: '" + v + "'");
  return d;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config key " + key + ": not a boolean: '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "variant") variant = parse_variant(v);
  else if (key == "width") width = static_cast<int>(parse_int(key, v));
  else if (key == "height") height = static_cast<int>(parse_int(key, v));
  else if (key == "lr0") lr0 = parse_double(key, v);
  else if (key == "total_steps") total_steps = parse_int(key, v);
  else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, v));
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, v));
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, v);
  else if (key == "log_every") log_every = parse_int(key, v);
  else if (key == "prefetch") prefetch = static_cast<int>(parse_int(key, v));
  else if (key == "alpha") weights.alpha = parse_double(key, v);
  else if (key == "gamma") weights.gamma = parse_double(key, v);
  else if (key == "beta") weights.beta = parse_double(key, v);
  else if (key == "lambda") weights.lambda = parse_double(key, v);
  else if (key == "ssim_c1") weights.ssim_c1 = parse_double(key, v);
  else if (key == "ssim_c2") weights.ssim_c2 = parse_double(key, v);
  else if (key == "cross_scale_plus_ssim") weights.cross_scale_plus_ssim = parse_bool(key, v);
  else if (key == "low_scale") scales.low_scale = parse_double(key, v);
  else if (key == "high_area") scales.high_area = parse_double(key, v);
  else if (key == "flip") augment.flip = parse_bool(key, v);
  else if (key == "brightness") augment.brightness = parse_double(key, v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

TrainConfig TrainConfig::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_text(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "variant = " << to_string(variant) << '\n'
    << "width = " << width << '\n'
    << "height = " << height << '\n'
    << "lr0 = " << fmt_double(lr0) << '\n'
    << "total_steps = " << total_steps << '\n'
    << "batch_size = " << batch_size << '\n'
    << "seed = " << seed << '\n'
    << "checkpoint_every = " << checkpoint_every << '\n'
    << "log_every = " << log_every << '\n'
    << "prefetch = " << prefetch << '\n'
    << "alpha = " << fmt_double(weights.alpha) << '\n'
    << "gamma = " << fmt_double(weights.gamma) << '\n'
    << "beta = " << fmt_double(weights.beta) << '\n'
    << "lambda = " << fmt_double(weights.lambda) << '\n'
    << "ssim_c1 = " << fmt_double(weights.ssim_c1) << '\n'
    << "ssim_c2 = " << fmt_double(weights.ssim_c2) << '\n'
    << "cross_scale_plus_ssim = " << (weights.cross_scale_plus_ssim ? "true" : "false") << '\n'
    << "low_scale = " << fmt_double(scales.low_scale) << '\n'
    << "high_area = " << fmt_double(scales.high_area) << '\n'
    << "flip = " << (augment.flip ? "true" : "false") << '\n'
    << "brightness = " << fmt_double(augment.brightness) << '\n';
  return o.str();
}

double cosine_lr(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(cfg.total_steps) + "]");
  }
  const double lr_min = cfg.lr0 / 100.0;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return lr_min + 0.5 * (cfg.lr0 - lr_min) * (1.0 + std::cos(phase));
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Var<float>> params) : params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var<float>& p = params_[k];
    const Tensor<float> g = p.grad();
    float* w = p.mutable_value().ptr();
    float* m = m_[k].ptr();
    float* v = v_[k].ptr();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double mi = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
      const double vi = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      w[i] = static_cast<float>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + kEps));
    }
  }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  depth_ = std::make_unique<DepthNet<float>>(cfg_.model_config(), cfg_.seed);
  pose_ = std::make_unique<PoseNet<float>>(cfg_.pose_config(), cfg_.seed + 1);
  std::vector<Var<float>> vars;
  for (const auto& p : named_parameters()) vars.push_back(p.var);
  adam_ = std::make_unique<Adam>(std::move(vars));
}

std::vector<NamedParam<float>> Trainer::named_parameters() const {
  std::vector<NamedParam<float>> out = depth_->parameters().items();
  const auto& pose = pose_->parameters().items();
  out.insert(out.end(), pose.begin(), pose.end());
  return out;
}

template <typename T>
LossTerms<T> compute_loss_terms(const DepthNet<T>& depth, const PoseNet<T>& pose, const Var<T>& target,
                                const Var<T>& prev, const Var<T>& next, const Intrinsics& K, const LossWeights& w,
                                const MultiScaleConfig& scales) {
  const ModelConfig& mc = depth.config();
  const MultiScaleInputs<T> ms = multi_scale_inputs(target, scales);

  const Var<T> disp_m = depth.forward(ms.mid);
  const Var<T> disp_l = depth.forward(ms.low);
  const Var<T> disp_h = depth.forward(ms.high);
  const Var<T> depth_m = disp_to_depth(disp_m, mc.dmin, mc.dmax);
  const Var<T> depth_l = disp_to_depth(disp_l, mc.dmin, mc.dmax);
  const Var<T> depth_h = disp_to_depth(disp_h, mc.dmin, mc.dmax);

  const SynthesizedView<T> from_prev = synthesize_view(prev, depth_m, pose(target, prev), K);
  const SynthesizedView<T> from_next = synthesize_view(next, depth_m, pose(target, next), K);

  LossTerms<T> l;
  l.lp = photometric_loss<T>(target, {{from_prev.image, from_prev.valid}, {from_next.image, from_next.valid}}, w);
  l.ls = smoothness_loss(disp_m, target);
  l.ld = cross_scale_consistency_loss<T>({depth_l, depth_m, depth_h, ms.lm, ms.mh}, w);
  l.total = total_loss(l.lp, l.ls, l.ld, w);
  return l;
}

template LossTerms<float> compute_loss_terms<float>(const DepthNet<float>&, const PoseNet<float>&,
                                                    const Var<float>&, const Var<float>&, const Var<float>&,
                                                    const Intrinsics&, const LossWeights&, const MultiScaleConfig&);
template LossTerms<double> compute_loss_terms<double>(const DepthNet<double>&, const PoseNet<double>&,
                                                      const Var<double>&, const Var<double>&, const Var<double>&,
                                                      const Intrinsics&, const LossWeights&,
                                                      const MultiScaleConfig&);

LossTerms<float> Trainer::compute_losses(const Batch& batch) const {
  if (batch.target.rank() != 4 || batch.target.dim(2) != cfg_.height || batch.target.dim(3) != cfg_.width) {
    throw ShapeError("train: batch " + shape_string(batch.target.shape()) + " does not match the configured " +
                     std::to_string(cfg_.width) + "x" + std::to_string(cfg_.height));
  }
  return compute_loss_terms(*depth_, *pose_, Var<float>(batch.target), Var<float>(batch.prev),
                            Var<float>(batch.next), batch.K, cfg_.weights, cfg_.scales);
}

StepStats Trainer::train_step(const Batch& batch, std::optional<double> lr_override) {
  if (step_ >= cfg_.total_steps) {
    throw std::out_of_range("train_step: already at the final step " + std::to_string(cfg_.total_steps));
  }
  const double lr = lr_override ? *lr_override : cosine_lr(step_, cfg_);
  auto params = named_parameters();
  for (auto& p : params) p.var.zero_grad();
  LossTerms<float> l;
  try {
    l = compute_losses(batch);
  } catch (const std::domain_error& e) {
    throw NonFiniteError(std::string("step ") + std::to_string(step_) + " aborted: " + e.what());
  }
  l.total.backward();
  double sq = 0;
  for (const auto& p : params) {
    const Tensor<float> g = p.var.grad();
    double s = 0;
    for (float v : g.data()) s += static_cast<double>(v) * v;
    if (!std::isfinite(s)) {
      for (auto& q : params) q.var.zero_grad();
      throw NonFiniteError("step " + std::to_string(step_) + " aborted: non-finite gradient in " + p.name);
    }
    sq += s;
  }
  adam_->step(lr);
  for (auto& p : params) p.var.zero_grad();
  StepStats s;
  s.step = step_;
  s.lr = lr;
  s.lp = l.lp.item();
  s.ls = l.ls.item();
  s.ld = l.ld.item();
  s.total = l.total.item();
  s.grad_norm = std::sqrt(sq);
  ++step_;
  return s;
}

void Trainer::save(const fs::path& path) const {
  std::vector<ArchiveEntry> entries;
  entries.push_back(ArchiveEntry::from_bytes("meta/config", cfg_.to_text()));
  entries.push_back(ArchiveEntry::from_bytes("meta/step", std::to_string(step_)));
  const auto params = named_parameters();
  for (const auto& p : params) entries.push_back(ArchiveEntry::from_tensor(p.name, p.var.value()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    entries.push_back(ArchiveEntry::from_tensor("adam/m/" + params[k].name, adam_->first_moments()[k]));
    entries.push_back(ArchiveEntry::from_tensor("adam/v/" + params[k].name, adam_->second_moments()[k]));
  }
  write_archive(path, entries);
}

std::unique_ptr<Trainer> Trainer::load(const fs::path& path) {
  const auto entries = read_archive(path);
  std::map<std::string, const ArchiveEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw std::runtime_error(path.string() + ": duplicate entry " + e.name);
  }
  auto get = [&](const std::string& name, ArchiveEntry::Dtype dtype) -> const ArchiveEntry& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error(path.string() + ": missing entry " + name);
    if (it->second->dtype != dtype) throw std::runtime_error(path.string() + ": entry " + name + " has the wrong dtype");
    return *it->second;
  };
  const TrainConfig cfg = TrainConfig::from_text(get("meta/config", ArchiveEntry::Dtype::U8).bytes());
  auto t = std::make_unique<Trainer>(cfg);
  const std::string step_text = get("meta/step", ArchiveEntry::Dtype::U8).bytes();
  try {
    t->step_ = std::stoll(step_text);
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed meta/step");
  }
  if (t->step_ < 0 || t->step_ > cfg.total_steps) throw std::runtime_error(path.string() + ": step out of range");
  t->adam_->set_steps(t->step_);

  auto fill = [&](const std::string& name, Tensor<float>& dst) {
    const ArchiveEntry& e = get(name, ArchiveEntry::Dtype::F32);
    if (e.shape != dst.shape()) {
      throw std::runtime_error(path.string() + ": entry " + name + " has shape " + shape_string(e.shape) +
                               ", model expects " + shape_string(dst.shape()));
    }
    std::copy(e.f32.begin(), e.f32.end(), dst.ptr());
  };
  auto params = t->named_parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    fill(params[k].name, params[k].var.mutable_value());
    fill("adam/m/" + params[k].name, t->adam_->first_moments()[k]);
    fill("adam/v/" + params[k].name, t->adam_->second_moments()[k]);
  }
  const std::size_t expected = 2 + 3 * params.size();
  if (entries.size() != expected) {
    throw std::runtime_error(path.string() + ": " + std::to_string(entries.size()) + " entries, expected " +
                             std::to_string(expected));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training run

Batch batch_for_step(const Dataset& data, const TrainConfig& cfg, std::int64_t step) {
  return make_batch(data, sample_indices(data.size(), cfg.batch_size, cfg.seed, step), cfg.augment, cfg.seed, step);
}

namespace {

std::string log_row(const StepStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(s.step), s.lr, s.lp, s.ls,
                s.ld, s.total);
  return buf;
}

constexpr const char* kLogHeader = "step,lr,L_p,L_s,L_d,total";

// Keeps header and rows for steps before `start`, so a resumed run continues the same log.
void prepare_log(const fs::path& path, std::int64_t start) {
  std::vector<std::string> keep{kLogHeader};
  if (start > 0 && fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < start) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

std::vector<StepStats> run_training(const TrainConfig& cfg_in, const TrainRun& run) {
  std::unique_ptr<Trainer> trainer;
  if (run.resume.empty()) {
    trainer = std::make_unique<Trainer>(cfg_in);
  } else {
    trainer = Trainer::load(run.resume);
    if (trainer->config().to_text() != cfg_in.to_text()) {
      spdlog::warn("resuming with the configuration stored in {}", run.resume.string());
    }
  }
  const TrainConfig& cfg = trainer->config();
  const auto entries = run.split.empty() ? list_frames(run.data) : read_split(run.split);
  Dataset data(run.data, entries, {cfg.width, cfg.height, false});
  if (data.size() == 0) throw std::runtime_error("training data " + run.data.string() + " has no usable triplets");

  fs::create_directories(run.out);
  const fs::path log_path = run.out / "train_log.csv";
  const std::int64_t start = trainer->step();
  prepare_log(log_path, start);
  std::ofstream log(log_path, std::ios::app);
  spdlog::info("training {} from step {} to {} on {} triplets", to_string(cfg.variant), start, cfg.total_steps,
               data.size());

  std::vector<StepStats> history;
  Prefetcher<Batch> batches([&](std::int64_t s) { return batch_for_step(data, cfg, s); }, start, cfg.total_steps,
                            static_cast<std::size_t>(cfg.prefetch));
  while (auto batch = batches.next()) {
    const StepStats s = trainer->train_step(*batch);
    history.push_back(s);
    log << log_row(s) << '\n';
    if (cfg.log_every > 0 && (s.step % cfg.log_every == 0 || s.step + 1 == cfg.total_steps)) {
      log.flush();
      spdlog::info("step {:5d} lr {:.3e} L_p {:.5f} L_s {:.5f} L_d {:.5f} total {:.5f} |g| {:.3e}", s.step, s.lr,
                   s.lp, s.ls, s.ld, s.total, s.grad_norm);
    }
    if (cfg.checkpoint_every > 0 && trainer->step() % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06lld.bin", static_cast<long long>(trainer->step()));
      trainer->save(run.out / name);
    }
    if (run.on_step) run.on_step(s);
  }
  log.flush();
  trainer->save(run.out / "last.bin");
  return history;
}

}  // namespace rtsmono
