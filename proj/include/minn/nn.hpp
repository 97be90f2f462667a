#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "minn/mesh.hpp"
#include "minn/sparsity.hpp"

namespace minn {

enum class Activation { LeakyRelu, Identity };

inline constexpr double kLeakySlope = 0.1;

inline double activate(Activation a, double z) {
  return (a == Activation::Identity || z >= 0.0) ? z : kLeakySlope * z;
}

/// Derivative with the right limit at the kink: slope 1 at z = 0.
inline double activate_derivative(Activation a, double z) {
  return (a == Activation::Identity || z >= 0.0) ? 1.0 : kLeakySlope;
}

enum class LayerKind { Dense, MeshInformed };

/// Affine map plus componentwise activation.
///
/// Dense weights are stored row-major (out x in). Mesh-informed weights are
/// one value per pattern entry, in CSR order, so off-pattern entries are
/// zero by construction and no training step can touch them.
class Layer {
 public:
  static Layer dense(int in_dim, int out_dim, Activation activation);
  static Layer mesh_informed(SparsityPattern pattern, Activation activation);

  LayerKind kind() const { return kind_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  Activation activation() const { return activation_; }
  void set_activation(Activation a) { activation_ = a; }

  std::size_t weight_count() const { return weights_.size(); }
  std::size_t param_count() const { return weights_.size() + static_cast<std::size_t>(out_dim_); }

  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  Eigen::VectorXd& bias() { return bias_; }
  const Eigen::VectorXd& bias() const { return bias_; }
  const SparsityPattern* pattern() const { return pattern_ ? &*pattern_ : nullptr; }

  /// Weight matrix with off-pattern zeros filled in.
  Eigen::MatrixXd to_dense() const;

  /// Z = W X + b for a batch stored column-wise (in_dim x n).
  Eigen::MatrixXd affine(const Eigen::MatrixXd& x) const;

  /// Given dL/dZ (out x n) and the layer input X (in x n), accumulates the
  /// weight and bias gradients into `grad` (laid out like the parameters:
  /// weights then bias) and returns dL/dX.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dz, const Eigen::MatrixXd& x, std::span<double> grad) const;

 private:
  Layer() = default;

  LayerKind kind_ = LayerKind::Dense;
  int in_dim_ = 0;
  int out_dim_ = 0;
  Activation activation_ = Activation::Identity;
  std::vector<double> weights_;
  Eigen::VectorXd bias_;
  std::optional<SparsityPattern> pattern_;
};

/// Stack of layers composed in order; depth = layer count - 1.
class MinnModel {
 public:
  MinnModel() = default;
  MinnModel(std::vector<Layer> layers, std::string architecture = {});

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  int depth() const { return static_cast<int>(layers_.size()) - 1; }
  int in_dim() const { return layers_.front().in_dim(); }
  int out_dim() const { return layers_.back().out_dim(); }
  const std::string& architecture() const { return architecture_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  std::size_t param_count() const;
  /// Total stored weights (sum of nnz over mesh-informed layers plus full
  /// dense matrices).
  std::size_t nnz_total() const;

  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  /// Columns of `inputs` are samples.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;

 private:
  std::vector<Layer> layers_;
  std::string architecture_;
  std::uint64_t seed_ = 0;
};

/// He-type initialization: every stored weight i.i.d. N(0, 1/count), where
/// count is nnz (mesh-informed) or in*out (dense). Biases are zeroed.
void init_params(Layer& layer, std::uint64_t seed);
/// Layer k draws from seed sequence (seed, k).
void init_params(MinnModel& model, std::uint64_t seed);

Layer make_dense(int in_dim, int out_dim, Activation activation, std::uint64_t seed = 0);
/// Throws Error(EmptyPattern) when no node pair is within r.
Layer make_mesh_informed(const Mesh& mesh_in, const Mesh& mesh_out, double r, Activation activation,
                         std::uint64_t seed = 0);

using MeshRegistry = std::map<std::string, MeshPtr>;

/// Builds a model from stanzas separated by whitespace or ';':
///   in(<n|mesh>)          input dimension (optional when the first layer is mi)
///   dense(<n|mesh>)       dense layer onto n units or onto the mesh's nodes
///   mi(<mesh>,<mesh>,<r>) mesh-informed layer, r may be 'inf'
/// Hidden layers use leaky ReLU, the output layer none. Parameters are
/// initialized with init_params(model, seed). Throws Error(SpecError)
/// naming the offending stanza index.
MinnModel parse_architecture(const std::string& spec, const MeshRegistry& meshes, std::uint64_t seed = 0);

/// Same stanzas with every mi(a,b,r) replaced by dense(b).
std::string dense_counterpart(const std::string& spec);

void save_model(const MinnModel& model, const std::filesystem::path& path);
MinnModel load_model(const std::filesystem::path& path);

}  // namespace minn
