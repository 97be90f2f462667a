#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "minn/mesh.hpp"
#include "minn/nn.hpp"

namespace minn {

/// Input/target snapshot pairs; column s of each matrix is sample s.
struct Dataset {
  Eigen::MatrixXd inputs;   // in_dim x n
  Eigen::MatrixXd targets;  // N_h x n, nodal values on output_mesh
  MeshPtr output_mesh;

  int size() const { return static_cast<int>(inputs.cols()); }
  /// Throws Error(DimMismatch) on inconsistent shapes.
  void validate() const;
};

enum class OptimizerKind { Lbfgs, Adam };

struct TrainConfig {
  int epochs = 50;
  OptimizerKind optimizer = OptimizerKind::Lbfgs;
  double lr = 1.0;
  // L-BFGS
  int memory = 10;
  int max_line_search = 25;
  double armijo_c = 1e-4;
  bool fixed_step = false;        // plain x + lr d, no line search
  int iterations_per_epoch = 1;   // quasi-Newton iterations per recorded epoch
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_rel_err = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
};

/// Mean over samples of e^T M e, e = target - prediction, M the output mesh
/// mass matrix.
double loss_l2_mse(const MinnModel& model, const Dataset& data);

/// Mean over samples of ||e||_{L2} / ||target||_{L2}. Throws Error(ZeroTarget).
double relative_l2_error(const MinnModel& model, const Dataset& data);

/// Reverse-mode gradient of loss_l2_mse with respect to model.parameters().
Eigen::VectorXd gradient(const MinnModel& model, const Dataset& data, double* loss = nullptr);

double generalization_gap(const MinnModel& model, const Dataset& train_set, const Dataset& test_set);

/// f(x) with its gradient written into g.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& g)>;

/// Runs `config.epochs` optimizer epochs on x in place; `on_epoch(epoch, loss)`
/// is called after each one. Throws Error(NonFiniteLoss).
void minimize(const Objective& objective, Eigen::VectorXd& x, const TrainConfig& config,
              const std::function<void(int, double)>& on_epoch = {});

/// Full-batch training of the model's parameters under loss_l2_mse.
TrainResult train(MinnModel& model, const Dataset& data, const TrainConfig& config);

/// `epoch,loss,train_rel_err` CSV.
void write_trace_csv(const TrainResult& result, const std::filesystem::path& path);

}  // namespace minn
