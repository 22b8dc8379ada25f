#include "samlab/optimizers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace samlab::optim {

std::string to_string(Family f) {
  switch (f) {
    case Family::SGD: return "SGD";
    case Family::SAM: return "SAM";
    case Family::USAM: return "USAM";
    case Family::SAM_INDEP: return "SAM_INDEP";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  std::string u(s);
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  if (u == "SGD") return Family::SGD;
  if (u == "SAM") return Family::SAM;
  if (u == "USAM") return Family::USAM;
  if (u == "SAM_INDEP") return Family::SAM_INDEP;
  throw ConfigError("unknown optimizer family '" + s + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer: lr must be > 0");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("optimizer: rho must be >= 0");
  if (!(grad_norm_floor > 0.0)) throw ConfigError("optimizer: grad_norm_floor must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"family", to_string(c.family)},
          {"lr", c.lr},
          {"rho", c.rho},
          {"batch_size", c.batch_size},
          {"grad_norm_floor", c.grad_norm_floor},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}};
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.family = family_from_string(j.value("family", std::string("SGD")));
  c.lr = j.value("lr", c.lr);
  c.rho = j.value("rho", c.rho);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_norm_floor = j.value("grad_norm_floor", c.grad_norm_floor);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.validate();
  return c;
}

namespace {

models::LossGrad checked_grad(const models::Model& model, const ParamVector& theta, Batch batch) {
  auto lg = model.loss_grad(theta, batch);
  if (!lg.grad.allFinite() || !std::isfinite(lg.loss)) {
    throw DivergenceError("non-finite gradient (|theta|=" + io::fmt(theta.norm()) + ")");
  }
  return lg;
}

ParamVector apply(const ParamVector& theta, double lr, const ParamVector& d) {
  ParamVector next = theta - lr * d;
  if (!next.allFinite()) throw DivergenceError("non-finite iterate");
  return next;
}

}  // namespace

Direction sgd_direction(const models::Model& model, const ParamVector& theta, Batch batch) {
  auto lg = checked_grad(model, theta, batch);
  Direction d;
  d.loss = lg.loss;
  d.grad_norm = lg.grad.norm();
  d.grad = std::move(lg.grad);
  return d;
}

Direction sam_direction(const models::Model& model, const ParamVector& theta, Batch batch,
                        double rho, double grad_norm_floor) {
  const auto lg = checked_grad(model, theta, batch);
  Direction d;
  d.loss = lg.loss;
  d.grad_norm = lg.grad.norm();
  if (d.grad_norm < grad_norm_floor) {
    d.perturbation_skipped = true;
    d.grad = lg.grad;
    return d;
  }
  const ParamVector probe = theta + (rho / d.grad_norm) * lg.grad;
  d.grad = checked_grad(model, probe, batch).grad;
  return d;
}

Direction usam_direction(const models::Model& model, const ParamVector& theta, Batch batch,
                         double rho) {
  const auto lg = checked_grad(model, theta, batch);
  Direction d;
  d.loss = lg.loss;
  d.grad_norm = lg.grad.norm();
  const ParamVector probe = theta + rho * lg.grad;
  d.grad = checked_grad(model, probe, batch).grad;
  return d;
}

Direction sam_independent_direction(const models::Model& model, const ParamVector& theta,
                                    Batch batch1, Batch batch2, double rho) {
  const auto inner = checked_grad(model, theta, batch1);
  Direction d;
  d.loss = inner.loss;
  d.grad_norm = inner.grad.norm();
  const ParamVector probe = theta + rho * inner.grad;
  d.grad = checked_grad(model, probe, batch2).grad;
  return d;
}

ParamVector sgd_step(const models::Model& model, const ParamVector& theta, Batch batch,
                     double lr) {
  return apply(theta, lr, sgd_direction(model, theta, batch).grad);
}

ParamVector sam_step(const models::Model& model, const ParamVector& theta, Batch batch,
                     double lr, double rho, double grad_norm_floor) {
  return apply(theta, lr, sam_direction(model, theta, batch, rho, grad_norm_floor).grad);
}

ParamVector usam_step(const models::Model& model, const ParamVector& theta, Batch batch,
                      double lr, double rho) {
  return apply(theta, lr, usam_direction(model, theta, batch, rho).grad);
}

ParamVector sam_step_independent(const models::Model& model, const ParamVector& theta,
                                 Batch batch1, Batch batch2, double lr, double rho) {
  return apply(theta, lr, sam_independent_direction(model, theta, batch1, batch2, rho).grad);
}

// --- batches ---------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), size_(batch_size), rng_(seed), perm_(n) {
  if (n == 0) throw ConfigError("batch sampler: empty dataset");
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  full_ = batch_size == kFullBatch || batch_size >= n;
  if (full_) size_ = n;
  per_epoch_ = full_ ? 1 : n / size_;
  cursor_ = per_epoch_;
}

Batch BatchSampler::next() {
  if (cursor_ == per_epoch_) {
    cursor_ = 0;
    ++epoch_;
    if (!full_) rng_.shuffle(perm_);
  }
  Batch b(perm_.data() + cursor_ * size_, size_);
  ++cursor_;
  return b;
}

// --- schedules -------------------------------------------------------------

void SwitchSchedule::validate() const {
  if (total_steps < 0) throw ConfigError("schedule: total_steps must be >= 0");
  if (switch_step < 0 || switch_step > total_steps) {
    throw ConfigError("schedule: switch_step must lie in [0, total_steps]");
  }
  before.validate();
  after.validate();
  if (before.batch_size != after.batch_size) {
    throw ConfigError("schedule: before and after must share a batch size");
  }
}

nlohmann::json to_json(const SwitchSchedule& s) {
  return {{"total_steps", s.total_steps},
          {"switch_step", s.switch_step},
          {"before", to_json(s.before)},
          {"after", to_json(s.after)}};
}

SwitchSchedule schedule_from_json(const nlohmann::json& j) {
  SwitchSchedule s;
  s.total_steps = j.at("total_steps").get<long>();
  s.switch_step = j.at("switch_step").get<long>();
  s.before = optimizer_from_json(j.at("before"));
  s.after = optimizer_from_json(j.at("after"));
  s.validate();
  return s;
}

io::CsvTable TrajectoryRecord::to_csv() const {
  io::CsvTable t;
  t.header = {"step", "epoch", "loss", "grad_norm", "optimizer_family"};
  for (const auto& [name, col] : probes) t.header.push_back(name);
  for (std::size_t i = 0; i < step.size(); ++i) {
    std::vector<std::string> row{io::fmt(static_cast<long long>(step[i])),
                                 io::fmt(static_cast<long long>(epoch[i])), io::fmt(loss[i]),
                                 io::fmt(grad_norm[i]), to_string(family[i])};
    for (const auto& [name, col] : probes) row.push_back(io::fmt(col[i]));
    t.add_row(std::move(row));
  }
  return t;
}

TrajectoryRecord run_schedule(const models::Model& model, const ParamVector& theta0,
                              const SwitchSchedule& schedule, std::uint64_t seed,
                              const RunOptions& options) {
  schedule.validate();
  for (const auto& p : options.probes) {
    if (p.every < 1 || !p.fn) throw ConfigError("probe '" + p.name + "' needs every >= 1 and a function");
  }

  const std::size_t n = model.sample_count();
  BatchSampler outer(n, schedule.before.batch_size, seed);
  BatchSampler inner(n, schedule.before.batch_size, mix_seed(seed, 1));

  TrajectoryRecord rec;
  for (const auto& p : options.probes) rec.probes[p.name];
  ParamVector theta = theta0;
  ParamVector velocity;
  const auto reserve = static_cast<std::size_t>(schedule.total_steps);
  rec.step.reserve(reserve);
  rec.loss.reserve(reserve);

  for (long t = 0; t < schedule.total_steps; ++t) {
    const OptimizerConfig& cfg = schedule.at(t);
    if (t == schedule.switch_step) velocity.resize(0);
    const Batch batch = outer.next();
    const long epoch = outer.epoch();
    try {
      Direction d;
      switch (cfg.family) {
        case Family::SGD: d = sgd_direction(model, theta, batch); break;
        case Family::SAM: d = sam_direction(model, theta, batch, cfg.rho, cfg.grad_norm_floor); break;
        case Family::USAM: d = usam_direction(model, theta, batch, cfg.rho); break;
        case Family::SAM_INDEP: {
          const Batch b1 = inner.next();
          d = sam_independent_direction(model, theta, b1, batch, cfg.rho);
          break;
        }
      }
      rec.step.push_back(t);
      rec.epoch.push_back(epoch);
      rec.loss.push_back(d.loss);
      rec.grad_norm.push_back(d.grad_norm);
      rec.family.push_back(cfg.family);
      rec.perturbation_skipped.push_back(d.perturbation_skipped);
      for (const auto& p : options.probes) {
        rec.probes[p.name].push_back(t % p.every == 0 ? p.fn(theta)
                                                       : std::numeric_limits<double>::quiet_NaN());
      }
      if (options.snapshot_every > 0 && t % options.snapshot_every == 0) {
        rec.snapshots.emplace_back(t, theta);
      }

      ParamVector step_dir = std::move(d.grad);
      if (cfg.weight_decay > 0.0) step_dir += cfg.weight_decay * theta;
      if (cfg.momentum > 0.0) {
        if (velocity.size() == 0) velocity = ParamVector::Zero(theta.size());
        velocity = cfg.momentum * velocity + step_dir;
        step_dir = velocity;
      }
      theta = apply(theta, cfg.lr, step_dir);
    } catch (const DivergenceError& e) {
      rec.diverged = true;
      rec.divergence_step = t;
      rec.failure = e.what();
      break;
    }
  }

  rec.final_theta = theta;
  if (options.snapshot_every > 0 &&
      (rec.snapshots.empty() || rec.snapshots.back().first != static_cast<long>(rec.size()))) {
    rec.snapshots.emplace_back(static_cast<long>(rec.size()), theta);
  }
  if (!rec.diverged) {
    for (const auto& p : options.probes) rec.final_probes[p.name] = p.fn(theta);
  }
  return rec;
}

}  // namespace samlab::optim
