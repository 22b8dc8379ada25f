#include "samlab/models.hpp"

#include "samlab/io.hpp"
#include "samlab/rng.hpp"

#include "json.hpp"

#include <cmath>

namespace samlab::models {

void Model::check_theta(const ParamVector& theta) const {
  if (static_cast<std::size_t>(theta.size()) != dim()) {
    throw ConfigError(name() + ": parameter vector has dimension " +
                      std::to_string(theta.size()) + ", expected " + std::to_string(dim()));
  }
}

void Model::check_batch(Batch batch) const {
  if (batch.empty()) throw UsageError(name() + ": empty batch");
  const std::size_t n = sample_count();
  for (std::size_t i : batch) {
    if (i >= n) {
      throw UsageError(name() + ": batch index " + std::to_string(i) +
                       " out of range [0, " + std::to_string(n) + ")");
    }
  }
}

LossGrad Model::full_loss_grad(const ParamVector& theta) const {
  const auto idx = full_batch(sample_count());
  return loss_grad(theta, idx);
}

double Model::full_loss(const ParamVector& theta) const {
  const auto idx = full_batch(sample_count());
  return loss(theta, idx);
}

// --- toy -------------------------------------------------------------------

double toy_loss(double u, double v) {
  const double w = std::tanh(v * std::tanh(u));
  return 0.5 * w * w;
}

std::array<double, 2> toy_grad(double u, double v) {
  const double s = std::tanh(u);
  const double w = std::tanh(v * s);
  const double dq = w * (1.0 - w * w);  // dL/dq with q = v tanh u
  return {dq * v * (1.0 - s * s), dq * s};
}

Eigen::Matrix2d toy_hessian(double u, double v) {
  const double s = std::tanh(u);
  const double sech2 = 1.0 - s * s;
  const double w = std::tanh(v * s);
  const double phi = w * (1.0 - w * w);
  const double dphi = (1.0 - w * w) * (1.0 - 3.0 * w * w);
  const double qu = v * sech2;
  const double qv = s;
  const double quu = -2.0 * v * s * sech2;
  const double quv = sech2;
  Eigen::Matrix2d h;
  h(0, 0) = dphi * qu * qu + phi * quu;
  h(0, 1) = dphi * qu * qv + phi * quv;
  h(1, 0) = h(0, 1);
  h(1, 1) = dphi * qv * qv;
  return h;
}

LossGrad ToyModel::loss_grad(const ParamVector& theta, Batch batch) const {
  check_theta(theta);
  check_batch(batch);
  const auto g = toy_grad(theta[0], theta[1]);
  LossGrad out;
  out.loss = toy_loss(theta[0], theta[1]);
  out.grad = ParamVector{{g[0], g[1]}};
  return out;
}

std::optional<Matrix> ToyModel::hessian(const ParamVector& theta) const {
  check_theta(theta);
  return Matrix(toy_hessian(theta[0], theta[1]));
}

std::optional<Matrix> ToyModel::output_jacobian(const ParamVector& theta) const {
  check_theta(theta);
  const double s = std::tanh(theta[0]);
  const double w = std::tanh(theta[1] * s);
  const double dw = 1.0 - w * w;
  Matrix j(1, 2);
  j(0, 0) = dw * theta[1] * (1.0 - s * s);
  j(0, 1) = dw * s;
  return j;
}

// --- quadratic -------------------------------------------------------------

QuadraticModel::QuadraticModel(Matrix hessian, ParamVector minimum)
    : g_(std::move(hessian)), minimum_(std::move(minimum)) {
  if (g_.rows() != g_.cols() || g_.rows() == 0) {
    throw ConfigError("quadratic: curvature matrix must be square and non-empty");
  }
  if (minimum_.size() != g_.rows()) {
    throw ConfigError("quadratic: minimum has dimension " + std::to_string(minimum_.size()) +
                      ", curvature is " + std::to_string(g_.rows()) + "x" +
                      std::to_string(g_.cols()));
  }
  const double scale = std::max(1.0, g_.cwiseAbs().maxCoeff());
  if ((g_ - g_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ConfigError("quadratic: curvature matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g_, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw ConfigError("quadratic: curvature matrix is not positive semi-definite");
  }
}

QuadraticModel::QuadraticModel(Matrix hessian)
    : QuadraticModel(hessian, ParamVector::Zero(hessian.rows())) {}

QuadraticModel QuadraticModel::diagonal(const std::vector<double>& curvatures) {
  ParamVector d(static_cast<Eigen::Index>(curvatures.size()));
  for (std::size_t i = 0; i < curvatures.size(); ++i) d[static_cast<Eigen::Index>(i)] = curvatures[i];
  return QuadraticModel(Matrix(d.asDiagonal()));
}

LossGrad QuadraticModel::loss_grad(const ParamVector& theta, Batch batch) const {
  check_theta(theta);
  check_batch(batch);
  return quadratic_loss_grad(*this, theta);
}

LossGrad quadratic_loss_grad(const QuadraticModel& model, const ParamVector& theta) {
  if (theta.size() != model.minimum().size()) {
    throw ConfigError("quadratic: parameter vector has dimension " +
                      std::to_string(theta.size()) + ", expected " +
                      std::to_string(model.minimum().size()));
  }
  const ParamVector d = theta - model.minimum();
  LossGrad out;
  out.grad = model.curvature() * d;
  out.loss = 0.5 * d.dot(out.grad);
  return out;
}

// --- MLP -------------------------------------------------------------------

namespace {

struct MlpView {
  Eigen::Map<const RowMatrix> w1;
  Eigen::Map<const Eigen::VectorXd> b1;
  Eigen::Map<const Eigen::VectorXd> w2;
  double b2;

  MlpView(const MlpShape& s, const ParamVector& theta)
      : w1(theta.data() + s.w1_offset(), static_cast<Eigen::Index>(s.hidden),
           static_cast<Eigen::Index>(s.input)),
        b1(theta.data() + s.b1_offset(), static_cast<Eigen::Index>(s.hidden)),
        w2(theta.data() + s.w2_offset(), static_cast<Eigen::Index>(s.hidden)),
        b2(theta[static_cast<Eigen::Index>(s.b2_offset())]) {}
};

RowMatrix gather_rows(const RowMatrix& x, Batch batch) {
  RowMatrix out(static_cast<Eigen::Index>(batch.size()), x.cols());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(batch[k]));
  }
  return out;
}

}  // namespace

Eigen::VectorXd mlp_forward(const MlpShape& shape, const ParamVector& theta,
                            const RowMatrix& x) {
  const MlpView net(shape, theta);
  Matrix a = ((x * net.w1.transpose()).rowwise() + net.b1.transpose()).array().tanh().matrix();
  return (a * net.w2).array() + net.b2;
}

ParamVector mlp_random_init(const MlpShape& shape, double scale, std::uint64_t seed) {
  Rng rng(seed);
  ParamVector theta(static_cast<Eigen::Index>(shape.param_count()));
  const double sd_in = scale / std::sqrt(static_cast<double>(shape.input));
  const double sd_out = scale / std::sqrt(static_cast<double>(shape.hidden));
  for (std::size_t i = 0; i < shape.param_count(); ++i) {
    double sd = scale;
    if (i < shape.b1_offset()) {
      sd = sd_in;
    } else if (i >= shape.w2_offset() && i < shape.b2_offset()) {
      sd = sd_out;
    }
    theta[static_cast<Eigen::Index>(i)] = sd * rng.normal();
  }
  return theta;
}

SyntheticDataset make_synthetic_dataset(std::uint64_t seed, std::size_t n, std::size_t d,
                                        std::size_t teacher_hidden) {
  if (n == 0 || d == 0 || teacher_hidden == 0) {
    throw ConfigError("dataset: n, d and teacher_hidden must be >= 1");
  }
  SyntheticDataset data;
  data.seed = seed;
  data.teacher.shape = MlpShape{d, teacher_hidden};
  data.teacher.weights = mlp_random_init(data.teacher.shape, 1.0, mix_seed(seed, 0));
  Rng rng(mix_seed(seed, 1));
  data.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) data.inputs(i, j) = rng.normal();
  }
  data.targets = mlp_forward(data.teacher.shape, data.teacher.weights, data.inputs);
  return data;
}

SyntheticDataset make_heldout(const SyntheticDataset& train, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset: held-out size must be >= 1");
  SyntheticDataset data;
  data.seed = seed;
  data.teacher = train.teacher;
  Rng rng(mix_seed(seed, 2));
  data.inputs.resize(static_cast<Eigen::Index>(n), train.inputs.cols());
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) data.inputs(i, j) = rng.normal();
  }
  data.targets = mlp_forward(data.teacher.shape, data.teacher.weights, data.inputs);
  return data;
}

void export_dataset(const SyntheticDataset& data, const std::filesystem::path& csv_path,
                    const std::filesystem::path& json_path) {
  io::CsvTable t;
  const std::size_t d = data.input_dim();
  for (std::size_t j = 0; j < d; ++j) t.header.push_back("x_" + std::to_string(j));
  t.header.push_back("y");
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<std::string> row;
    row.reserve(d + 1);
    for (std::size_t j = 0; j < d; ++j) {
      row.push_back(io::fmt(data.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    row.push_back(io::fmt(data.targets[static_cast<Eigen::Index>(i)]));
    t.add_row(std::move(row));
  }
  io::write_csv(csv_path, t);

  nlohmann::json j;
  j["seed"] = data.seed;
  j["n"] = data.size();
  j["d"] = d;
  j["teacher"]["hidden"] = data.teacher.shape.hidden;
  j["teacher"]["activation"] = "tanh";
  j["teacher"]["layout"] = "W1(h x d, row-major), b1(h), w2(h), b2";
  j["teacher"]["weights"] =
      std::vector<double>(data.teacher.weights.data(),
                          data.teacher.weights.data() + data.teacher.weights.size());
  io::write_text_file(json_path, j.dump(2) + "\n");
}

SyntheticDataset import_dataset(const std::filesystem::path& csv_path,
                                const std::filesystem::path& json_path) {
  const auto meta = nlohmann::json::parse(io::read_text_file(json_path));
  const io::CsvTable t = io::read_csv(csv_path);
  const std::size_t d = meta.at("d").get<std::size_t>();
  const std::size_t n = meta.at("n").get<std::size_t>();
  if (t.header.size() != d + 1 || t.rows.size() != n) {
    throw UsageError("dataset: CSV shape does not match its JSON sidecar");
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (t.header[j] != "x_" + std::to_string(j)) throw UsageError("dataset: bad CSV header");
  }
  if (t.header[d] != "y") throw UsageError("dataset: bad CSV header");

  SyntheticDataset data;
  data.seed = meta.at("seed").get<std::uint64_t>();
  data.teacher.shape = MlpShape{d, meta.at("teacher").at("hidden").get<std::size_t>()};
  const auto w = meta.at("teacher").at("weights").get<std::vector<double>>();
  if (w.size() != data.teacher.shape.param_count()) {
    throw UsageError("dataset: teacher weight count does not match its shape");
  }
  data.teacher.weights = Eigen::Map<const ParamVector>(w.data(), static_cast<Eigen::Index>(w.size()));
  data.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  data.targets.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      data.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.number(i, j);
    }
    data.targets[static_cast<Eigen::Index>(i)] = t.number(i, d);
  }
  return data;
}

MlpModel::MlpModel(std::size_t hidden, std::shared_ptr<const SyntheticDataset> data)
    : shape_{data ? data->input_dim() : 0, hidden}, data_(std::move(data)) {
  if (!data_ || data_->size() == 0) throw ConfigError("mlp: dataset is empty");
  if (hidden == 0) throw ConfigError("mlp: hidden width must be >= 1");
}

LossGrad MlpModel::loss_grad(const ParamVector& theta, Batch batch) const {
  check_theta(theta);
  check_batch(batch);
  const MlpView net(shape_, theta);
  const RowMatrix x = gather_rows(data_->inputs, batch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  const Matrix a =
      ((x * net.w1.transpose()).rowwise() + net.b1.transpose()).array().tanh().matrix();
  Eigen::VectorXd r = (a * net.w2).array() + net.b2;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    r[static_cast<Eigen::Index>(k)] -= data_->targets[static_cast<Eigen::Index>(batch[k])];
  }

  LossGrad out;
  out.loss = 0.5 * r.squaredNorm() * inv_b;
  out.grad.resize(static_cast<Eigen::Index>(shape_.param_count()));
  // dL/dz for every (sample, unit): r_k w2_j (1 - a_kj²) / B
  const Matrix dz = ((r * net.w2.transpose()).array() * (1.0 - a.array().square())).matrix() * inv_b;
  Eigen::Map<RowMatrix> gw1(out.grad.data() + shape_.w1_offset(),
                            static_cast<Eigen::Index>(shape_.hidden),
                            static_cast<Eigen::Index>(shape_.input));
  gw1.noalias() = dz.transpose() * x;
  out.grad.segment(static_cast<Eigen::Index>(shape_.b1_offset()), static_cast<Eigen::Index>(shape_.hidden)) =
      dz.colwise().sum().transpose();
  out.grad.segment(static_cast<Eigen::Index>(shape_.w2_offset()), static_cast<Eigen::Index>(shape_.hidden)) =
      a.transpose() * r * inv_b;
  out.grad[static_cast<Eigen::Index>(shape_.b2_offset())] = r.sum() * inv_b;
  return out;
}

double MlpModel::loss(const ParamVector& theta, Batch batch) const {
  check_theta(theta);
  check_batch(batch);
  const RowMatrix x = gather_rows(data_->inputs, batch);
  Eigen::VectorXd r = mlp_forward(shape_, theta, x);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    r[static_cast<Eigen::Index>(k)] -= data_->targets[static_cast<Eigen::Index>(batch[k])];
  }
  return 0.5 * r.squaredNorm() / static_cast<double>(batch.size());
}

double MlpModel::loss_on(const ParamVector& theta, const SyntheticDataset& other) const {
  check_theta(theta);
  if (other.input_dim() != shape_.input) throw ConfigError("mlp: dataset input width mismatch");
  const Eigen::VectorXd r = mlp_forward(shape_, theta, other.inputs) - other.targets;
  return 0.5 * r.squaredNorm() / static_cast<double>(other.size());
}

std::optional<Matrix> MlpModel::output_jacobian(const ParamVector& theta) const {
  check_theta(theta);
  const MlpView net(shape_, theta);
  const RowMatrix& x = data_->inputs;
  const Matrix a =
      ((x * net.w1.transpose()).rowwise() + net.b1.transpose()).array().tanh().matrix();
  const auto n = x.rows();
  const auto h = static_cast<Eigen::Index>(shape_.hidden);
  const auto d = static_cast<Eigen::Index>(shape_.input);
  Matrix j(n, static_cast<Eigen::Index>(shape_.param_count()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index u = 0; u < h; ++u) {
      const double dz = net.w2[u] * (1.0 - a(i, u) * a(i, u));
      for (Eigen::Index c = 0; c < d; ++c) j(i, u * d + c) = dz * x(i, c);
      j(i, h * d + u) = dz;
      j(i, h * d + h + u) = a(i, u);
    }
    j(i, h * d + 2 * h) = 1.0;
  }
  return j;
}

}  // namespace samlab::models
