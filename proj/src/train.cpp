#include "minn/train.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>

#include "minn/error.hpp"

namespace minn {

void Dataset::validate() const {
  if (!output_mesh) throw Error(ErrorCode::DimMismatch, "dataset has no output mesh");
  if (inputs.cols() != targets.cols())
    throw Error(ErrorCode::DimMismatch, "dataset has " + std::to_string(inputs.cols()) + " inputs but " +
                                            std::to_string(targets.cols()) + " targets");
  if (targets.rows() != output_mesh->num_vertices())
    throw Error(ErrorCode::DimMismatch, "target size " + std::to_string(targets.rows()) +
                                            " differs from output mesh node count " +
                                            std::to_string(output_mesh->num_vertices()));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::ConfigError, "epochs must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::ConfigError, "lr must be positive");
  if (memory < 1 || max_line_search < 1 || iterations_per_epoch < 1)
    throw Error(ErrorCode::ConfigError, "L-BFGS memory, line-search trials and iterations must be >= 1");
}

namespace {

void check_dims(const MinnModel& model, const Dataset& data) {
  data.validate();
  if (model.in_dim() != data.inputs.rows() || model.out_dim() != data.targets.rows())
    throw Error(ErrorCode::DimMismatch, "model is " + std::to_string(model.in_dim()) + "->" +
                                            std::to_string(model.out_dim()) + " but dataset is " +
                                            std::to_string(data.inputs.rows()) + "->" +
                                            std::to_string(data.targets.rows()));
}

}  // namespace

double loss_l2_mse(const MinnModel& model, const Dataset& data) {
  check_dims(model, data);
  if (data.size() == 0) return 0.0;
  const Eigen::MatrixXd e = data.targets - model.forward_batch(data.inputs);
  const Eigen::MatrixXd me = data.output_mesh->mass() * e;
  return e.cwiseProduct(me).sum() / data.size();
}

double relative_l2_error(const MinnModel& model, const Dataset& data) {
  check_dims(model, data);
  if (data.size() == 0) return 0.0;
  const Eigen::MatrixXd pred = model.forward_batch(data.inputs);
  const auto& mesh = *data.output_mesh;
  double total = 0.0;
  for (int s = 0; s < data.size(); ++s) {
    const double denom = l2_norm(mesh, data.targets.col(s));
    if (denom == 0.0) throw Error(ErrorCode::ZeroTarget, "target " + std::to_string(s) + " has zero L2 norm");
    total += l2_norm(mesh, data.targets.col(s) - pred.col(s)) / denom;
  }
  return total / data.size();
}

Eigen::VectorXd gradient(const MinnModel& model, const Dataset& data, double* loss) {
  check_dims(model, data);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.param_count()));
  const int n = data.size();
  if (n == 0) {
    if (loss) *loss = 0.0;
    return grad;
  }
  const auto& layers = model.layers();

  // Forward, keeping each layer input and pre-activation.
  std::vector<Eigen::MatrixXd> inputs(layers.size());
  std::vector<Eigen::MatrixXd> pre(layers.size());
  Eigen::MatrixXd a = data.inputs;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    inputs[k] = a;
    pre[k] = layers[k].affine(a);
    const auto act = layers[k].activation();
    a = act == Activation::Identity ? pre[k] : pre[k].unaryExpr([&](double z) { return activate(act, z); });
  }
  const Eigen::MatrixXd e = data.targets - a;
  const Eigen::MatrixXd me = data.output_mesh->mass() * e;
  if (loss) *loss = e.cwiseProduct(me).sum() / n;

  // dL/d(output) = -(2/n) M e.
  Eigen::MatrixXd da = (-2.0 / n) * me;
  std::vector<std::size_t> offset(layers.size() + 1, 0);
  for (std::size_t k = 0; k < layers.size(); ++k) offset[k + 1] = offset[k] + layers[k].param_count();
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto act = layers[k].activation();
    if (act != Activation::Identity)
      da = da.cwiseProduct(pre[k].unaryExpr([&](double z) { return activate_derivative(act, z); }));
    std::span<double> g(grad.data() + offset[k], layers[k].param_count());
    da = layers[k].backward(da, inputs[k], g);
  }
  return grad;
}

double generalization_gap(const MinnModel& model, const Dataset& train_set, const Dataset& test_set) {
  return relative_l2_error(model, test_set) - relative_l2_error(model, train_set);
}

namespace {

class LbfgsState {
 public:
  explicit LbfgsState(int memory) : memory_(memory) {}

  Eigen::VectorXd direction(const Eigen::VectorXd& g) const {
    Eigen::VectorXd q = -g;
    const std::size_t m = s_.size();
    std::vector<double> alpha(m);
    for (std::size_t k = m; k-- > 0;) {
      alpha[k] = rho_[k] * s_[k].dot(q);
      q -= alpha[k] * y_[k];
    }
    if (m > 0) q *= s_.back().dot(y_.back()) / y_.back().squaredNorm();
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_[k] * y_[k].dot(q);
      q += (alpha[k] - beta) * s_[k];
    }
    return q;
  }

  void push(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    const double sy = s.dot(y);
    if (!(sy > 1e-10)) return;  // curvature condition violated
    if (static_cast<int>(s_.size()) == memory_) {
      s_.pop_front();
      y_.pop_front();
      rho_.pop_front();
    }
    s_.push_back(s);
    y_.push_back(y);
    rho_.push_back(1.0 / sy);
  }

  void reset() {
    s_.clear();
    y_.clear();
    rho_.clear();
  }
  bool empty() const { return s_.empty(); }

 private:
  int memory_;
  std::deque<Eigen::VectorXd> s_, y_;
  std::deque<double> rho_;
};

void check_finite(double f, int epoch) {
  if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite at epoch " + std::to_string(epoch));
}

void run_lbfgs(const Objective& objective, Eigen::VectorXd& x, const TrainConfig& cfg,
               const std::function<void(int, double)>& on_epoch) {
  LbfgsState state(cfg.memory);
  Eigen::VectorXd g(x.size());
  double f = objective(x, g);
  check_finite(f, 0);
  Eigen::VectorXd g_new(x.size());
  bool first = true;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int it = 0; it < cfg.iterations_per_epoch; ++it) {
      if (g.lpNorm<Eigen::Infinity>() == 0.0) break;
      Eigen::VectorXd d = state.direction(g);
      double slope = g.dot(d);
      if (!(slope < 0.0)) {
        state.reset();
        d = -g;
        slope = -g.squaredNorm();
      }
      // First step is scaled like a normalized gradient step.
      double t = first ? std::min(1.0, 1.0 / g.lpNorm<1>()) * cfg.lr : cfg.lr;
      first = false;

      bool accepted = false;
      Eigen::VectorXd x_new;
      double f_new = f;
      if (cfg.fixed_step) {
        x_new = x + t * d;
        f_new = objective(x_new, g_new);
        check_finite(f_new, epoch);
        accepted = true;
      } else {
        for (int trial = 0; trial < cfg.max_line_search; ++trial, t *= 0.5) {
          x_new = x + t * d;
          f_new = objective(x_new, g_new);
          if (std::isfinite(f_new) && f_new <= f + cfg.armijo_c * t * slope) {
            accepted = true;
            break;
          }
        }
      }
      if (!accepted) {
        // No decrease along this direction: drop curvature history and retry
        // from steepest descent next iteration.
        if (state.empty()) break;
        state.reset();
        continue;
      }
      state.push(x_new - x, g_new - g);
      x = std::move(x_new);
      g = g_new;
      f = f_new;
    }
    check_finite(f, epoch);
    if (on_epoch) on_epoch(epoch, f);
  }
}

void run_adam(const Objective& objective, Eigen::VectorXd& x, const TrainConfig& cfg,
              const std::function<void(int, double)>& on_epoch) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd g(x.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double f = objective(x, g);
    check_finite(f, epoch);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, epoch);
    const double c2 = 1.0 - std::pow(cfg.beta2, epoch);
    x.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
    if (on_epoch) {
      const double f_after = objective(x, g);
      check_finite(f_after, epoch);
      on_epoch(epoch, f_after);
    }
  }
}

}  // namespace

void minimize(const Objective& objective, Eigen::VectorXd& x, const TrainConfig& config,
              const std::function<void(int, double)>& on_epoch) {
  config.validate();
  if (config.optimizer == OptimizerKind::Lbfgs)
    run_lbfgs(objective, x, config, on_epoch);
  else
    run_adam(objective, x, config, on_epoch);
}

TrainResult train(MinnModel& model, const Dataset& data, const TrainConfig& config) {
  check_dims(model, data);
  config.validate();
  TrainResult result;
  Eigen::VectorXd params = model.parameters();
  MinnModel work = model;
  const Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    work.set_parameters(x);
    double f = 0.0;
    g = gradient(work, data, &f);
    return f;
  };
  minimize(objective, params, config, [&](int epoch, double loss) {
    work.set_parameters(params);
    result.trace.push_back({epoch, loss, data.size() ? relative_l2_error(work, data) : 0.0});
  });
  model.set_parameters(params);
  return result;
}

void write_trace_csv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << "epoch,loss,train_rel_err\n";
  char buf[96];
  for (const auto& r : result.trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.epoch, r.loss, r.train_rel_err);
    out << buf;
  }
}

}  // namespace minn
