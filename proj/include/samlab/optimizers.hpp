#pragma once

#include "samlab/io.hpp"
#include "samlab/models.hpp"
#include "samlab/rng.hpp"

#include "json.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace samlab::optim {

enum class Family { SGD, SAM, USAM, SAM_INDEP };

std::string to_string(Family f);
/// Accepts "SGD", "SAM", "USAM", "SAM_INDEP" (case-insensitive).
Family family_from_string(const std::string& s);

/// Batch size meaning "the whole training set, in index order".
inline constexpr std::size_t kFullBatch = 0;

struct OptimizerConfig {
  Family family = Family::SGD;
  double lr = 0.1;
  double rho = 0.0;
  std::size_t batch_size = kFullBatch;
  double grad_norm_floor = 1e-12;
  // Heavy-ball momentum and decoupled L2 term, both off by default.
  double momentum = 0.0;
  double weight_decay = 0.0;

  /// ConfigError on η ≤ 0, ρ < 0, momentum outside [0, 1), negative decay.
  void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_from_json(const nlohmann::json& j);

/// The gradient an update moves against, plus readings at the current θ.
struct Direction {
  ParamVector grad;          // gradient evaluated at the (possibly perturbed) point
  double loss = 0.0;         // batch loss at θ
  double grad_norm = 0.0;    // ‖∇L_batch(θ)‖
  bool perturbation_skipped = false;
};

Direction sgd_direction(const models::Model& model, const ParamVector& theta, Batch batch);
/// Gradient at θ + ρ g/‖g‖. When ‖g‖ < floor the perturbation is dropped and
/// perturbation_skipped is set.
Direction sam_direction(const models::Model& model, const ParamVector& theta, Batch batch,
                        double rho, double grad_norm_floor = 1e-12);
/// Gradient at θ + ρ g.
Direction usam_direction(const models::Model& model, const ParamVector& theta, Batch batch,
                         double rho);
/// Gradient on batch2 at θ + ρ ∇L_batch1(θ). Readings refer to batch1.
Direction sam_independent_direction(const models::Model& model, const ParamVector& theta,
                                    Batch batch1, Batch batch2, double rho);

// Single updates θ − η d. All throw DivergenceError on a non-finite gradient
// or iterate.
ParamVector sgd_step(const models::Model& model, const ParamVector& theta, Batch batch,
                     double lr);
ParamVector sam_step(const models::Model& model, const ParamVector& theta, Batch batch,
                     double lr, double rho, double grad_norm_floor = 1e-12);
ParamVector usam_step(const models::Model& model, const ParamVector& theta, Batch batch,
                      double lr, double rho);
ParamVector sam_step_independent(const models::Model& model, const ParamVector& theta,
                                 Batch batch1, Batch batch2, double lr, double rho);

/// Mini-batches drawn without replacement: each epoch is a fresh shuffled
/// permutation cut into ⌊n/B⌋ batches, the remainder is dropped. B ≥ n or
/// kFullBatch yields the full index list every step, one step per epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);

  /// Next batch; the view stays valid until the following call.
  Batch next();
  /// Epoch of the batch most recently returned (0-based).
  long epoch() const { return epoch_; }
  std::size_t steps_per_epoch() const { return per_epoch_; }
  std::size_t batch_size() const { return size_; }

 private:
  std::size_t n_;
  std::size_t size_;
  std::size_t per_epoch_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
  long epoch_ = -1;
  bool full_ = false;
};

struct SwitchSchedule {
  long total_steps = 0;
  long switch_step = 0;
  OptimizerConfig before;
  OptimizerConfig after;

  /// 0 ≤ t ≤ T, both configs valid and with equal batch sizes.
  void validate() const;
  const OptimizerConfig& at(long step) const { return step < switch_step ? before : after; }
};

nlohmann::json to_json(const SwitchSchedule& s);
SwitchSchedule schedule_from_json(const nlohmann::json& j);

/// A scalar probe evaluated on θ_t every `every` steps (and at the final θ).
struct Probe {
  std::string name;
  long every = 1;
  std::function<double(const ParamVector&)> fn;
};

struct TrajectoryRecord {
  std::vector<long> step;
  std::vector<long> epoch;
  std::vector<double> loss;       // batch loss at θ_t
  std::vector<double> grad_norm;  // batch gradient norm at θ_t
  std::vector<Family> family;     // optimizer applied at step t
  std::vector<bool> perturbation_skipped;
  /// Probe columns aligned with `step`; NaN where the probe was not due.
  std::map<std::string, std::vector<double>> probes;
  /// Final-θ probe values.
  std::map<std::string, double> final_probes;
  /// θ_t every snapshot_every steps, plus the last iterate.
  std::vector<std::pair<long, ParamVector>> snapshots;

  ParamVector final_theta;
  bool diverged = false;
  long divergence_step = -1;
  std::string failure;

  std::size_t size() const { return step.size(); }
  /// Columns step, epoch, loss, grad_norm, optimizer_family, then probes
  /// in name order.
  io::CsvTable to_csv() const;
};

struct RunOptions {
  std::vector<Probe> probes;
  long snapshot_every = 0;
};

/// Runs T steps, using `before` for steps < t and `after` from t on. The
/// batch sequence depends only on (seed, B), so schedules sharing a seed see
/// identical batches. SAM_INDEP draws its inner batch from a second stream
/// seeded with mix_seed(seed, 1). A divergence stops the run; the partial
/// trajectory is returned with `diverged` set.
TrajectoryRecord run_schedule(const models::Model& model, const ParamVector& theta0,
                              const SwitchSchedule& schedule, std::uint64_t seed,
                              const RunOptions& options = {});

}  // namespace samlab::optim
