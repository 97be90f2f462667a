#include "minn/nn.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "minn/binary_io.hpp"
#include "minn/error.hpp"

namespace minn {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Layer Layer::dense(int in_dim, int out_dim, Activation activation) {
  if (in_dim < 1 || out_dim < 1)
    throw Error(ErrorCode::InvalidDim, "dense layer dims must be >= 1, got " + std::to_string(in_dim) + "x" +
                                           std::to_string(out_dim));
  Layer l;
  l.kind_ = LayerKind::Dense;
  l.in_dim_ = in_dim;
  l.out_dim_ = out_dim;
  l.activation_ = activation;
  l.weights_.assign(static_cast<std::size_t>(in_dim) * out_dim, 0.0);
  l.bias_ = Eigen::VectorXd::Zero(out_dim);
  return l;
}

Layer Layer::mesh_informed(SparsityPattern pattern, Activation activation) {
  if (pattern.rows < 1 || pattern.cols < 1) throw Error(ErrorCode::InvalidDim, "empty node set");
  Layer l;
  l.kind_ = LayerKind::MeshInformed;
  l.in_dim_ = pattern.cols;
  l.out_dim_ = pattern.rows;
  l.activation_ = activation;
  l.weights_.assign(pattern.nnz(), 0.0);
  l.bias_ = Eigen::VectorXd::Zero(pattern.rows);
  l.pattern_ = std::move(pattern);
  return l;
}

Eigen::MatrixXd Layer::to_dense() const {
  if (kind_ == LayerKind::Dense) return RowMajorMap(weights_.data(), out_dim_, in_dim_);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out_dim_, in_dim_);
  const auto& p = *pattern_;
  for (int i = 0; i < p.rows; ++i)
    for (int k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) w(i, p.col_idx[k]) = weights_[k];
  return w;
}

Eigen::MatrixXd Layer::affine(const Eigen::MatrixXd& x) const {
  if (x.rows() != in_dim_)
    throw Error(ErrorCode::DimMismatch, "layer expects input of size " + std::to_string(in_dim_) + ", got " +
                                            std::to_string(x.rows()));
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd z(out_dim_, n);
  if (kind_ == LayerKind::Dense) {
    z.noalias() = RowMajorMap(weights_.data(), out_dim_, in_dim_) * x;
  } else {
    const auto& p = *pattern_;
    for (Eigen::Index s = 0; s < n; ++s) {
      const double* xs = x.col(s).data();
      double* zs = z.col(s).data();
      for (int i = 0; i < out_dim_; ++i) {
        double acc = 0.0;
        for (int k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) acc += weights_[k] * xs[p.col_idx[k]];
        zs[i] = acc;
      }
    }
  }
  z.colwise() += bias_;
  return z;
}

Eigen::MatrixXd Layer::backward(const Eigen::MatrixXd& dz, const Eigen::MatrixXd& x, std::span<double> grad) const {
  const Eigen::Index n = x.cols();
  Eigen::Map<Eigen::VectorXd> gbias(grad.data() + weights_.size(), out_dim_);
  gbias += dz.rowwise().sum();
  if (kind_ == LayerKind::Dense) {
    RowMajorMutMap gw(grad.data(), out_dim_, in_dim_);
    gw.noalias() += dz * x.transpose();
    return RowMajorMap(weights_.data(), out_dim_, in_dim_).transpose() * dz;
  }
  const auto& p = *pattern_;
  Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(in_dim_, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double* xs = x.col(s).data();
    const double* dzs = dz.col(s).data();
    double* dxs = dx.col(s).data();
    for (int i = 0; i < out_dim_; ++i) {
      const double g = dzs[i];
      for (int k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
        grad[k] += g * xs[p.col_idx[k]];
        dxs[p.col_idx[k]] += weights_[k] * g;
      }
    }
  }
  return dx;
}

MinnModel::MinnModel(std::vector<Layer> layers, std::string architecture)
    : layers_(std::move(layers)), architecture_(std::move(architecture)) {
  if (layers_.empty()) throw Error(ErrorCode::InvalidDim, "model needs at least one layer");
  for (std::size_t k = 1; k < layers_.size(); ++k)
    if (layers_[k - 1].out_dim() != layers_[k].in_dim())
      throw Error(ErrorCode::DimMismatch, "layer " + std::to_string(k - 1) + " outputs " +
                                              std::to_string(layers_[k - 1].out_dim()) + " but layer " +
                                              std::to_string(k) + " expects " + std::to_string(layers_[k].in_dim()));
  if (layers_.back().activation() != Activation::Identity)
    throw Error(ErrorCode::InvalidDim, "output layer must not have an activation");
}

std::size_t MinnModel::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.param_count();
  return n;
}

std::size_t MinnModel::nnz_total() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight_count();
  return n;
}

Eigen::VectorXd MinnModel::parameters() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(param_count()));
  Eigen::Index pos = 0;
  for (const auto& l : layers_) {
    for (double w : l.weights()) flat[pos++] = w;
    flat.segment(pos, l.out_dim()) = l.bias();
    pos += l.out_dim();
  }
  return flat;
}

void MinnModel::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(param_count()))
    throw Error(ErrorCode::DimMismatch, "parameter vector has wrong length");
  Eigen::Index pos = 0;
  for (auto& l : layers_) {
    for (double& w : l.weights()) w = flat[pos++];
    l.bias() = flat.segment(pos, l.out_dim());
    pos += l.out_dim();
  }
}

Eigen::MatrixXd MinnModel::forward_batch(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != in_dim())
    throw Error(ErrorCode::DimMismatch, "model expects input of size " + std::to_string(in_dim()) + ", got " +
                                            std::to_string(inputs.rows()));
  Eigen::MatrixXd a = inputs;
  for (const auto& l : layers_) {
    a = l.affine(a);
    if (l.activation() != Activation::Identity) a = a.unaryExpr([&](double z) { return activate(l.activation(), z); });
  }
  return a;
}

Eigen::VectorXd MinnModel::forward(const Eigen::VectorXd& input) const { return forward_batch(input); }

void init_params(Layer& layer, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  const double count = static_cast<double>(std::max<std::size_t>(1, layer.weight_count()));
  std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / count));
  for (double& w : layer.weights()) w = normal(rng);
  layer.bias().setZero();
}

void init_params(MinnModel& model, std::uint64_t seed) {
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::uint64_t layer_seed = 0;
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    layer_seed = (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
    init_params(model.layers()[k], layer_seed);
  }
  model.set_seed(seed);
}

Layer make_dense(int in_dim, int out_dim, Activation activation, std::uint64_t seed) {
  auto l = Layer::dense(in_dim, out_dim, activation);
  init_params(l, seed);
  return l;
}

Layer make_mesh_informed(const Mesh& mesh_in, const Mesh& mesh_out, double r, Activation activation,
                         std::uint64_t seed) {
  auto pattern = support_pattern(mesh_in.vertices(), mesh_out.vertices(), r);
  if (pattern.nnz() == 0)
    throw Error(ErrorCode::EmptyPattern, "no node pair within support r = " + std::to_string(r));
  auto l = Layer::mesh_informed(std::move(pattern), activation);
  init_params(l, seed);
  return l;
}

namespace {

struct Stanza {
  std::string name;
  std::vector<std::string> args;
};

std::vector<Stanza> split_stanzas(const std::string& spec) {
  std::vector<Stanza> out;
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < spec.size() && (std::isspace(static_cast<unsigned char>(spec[pos])) || spec[pos] == ';')) ++pos;
  };
  skip();
  while (pos < spec.size()) {
    const auto idx = out.size();
    auto fail = [&](const std::string& msg) {
      return Error(ErrorCode::SpecError, "stanza " + std::to_string(idx) + ": " + msg);
    };
    Stanza s;
    while (pos < spec.size() && (std::isalnum(static_cast<unsigned char>(spec[pos])) || spec[pos] == '_'))
      s.name.push_back(spec[pos++]);
    if (s.name.empty()) throw fail("expected a stanza name");
    if (pos >= spec.size() || spec[pos] != '(') throw fail("expected '(' after " + s.name);
    const auto close = spec.find(')', pos);
    if (close == std::string::npos) throw fail("missing ')'");
    std::string body = spec.substr(pos + 1, close - pos - 1);
    std::stringstream ss(body);
    std::string arg;
    while (std::getline(ss, arg, ',')) {
      std::string trimmed;
      for (char c : arg)
        if (!std::isspace(static_cast<unsigned char>(c))) trimmed.push_back(c);
      s.args.push_back(trimmed);
    }
    pos = close + 1;
    out.push_back(std::move(s));
    skip();
  }
  return out;
}

bool is_integer(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

MinnModel parse_architecture(const std::string& spec, const MeshRegistry& meshes, std::uint64_t seed) {
  const auto stanzas = split_stanzas(spec);
  if (stanzas.empty()) throw Error(ErrorCode::SpecError, "empty architecture");

  std::vector<Layer> layers;
  std::optional<int> current;  // output size of the previous stanza
  std::string current_mesh;    // mesh id the current size came from, if any

  for (std::size_t idx = 0; idx < stanzas.size(); ++idx) {
    const auto& st = stanzas[idx];
    auto fail = [&](const std::string& msg) {
      return Error(ErrorCode::SpecError, "stanza " + std::to_string(idx) + " (" + st.name + "): " + msg);
    };
    auto mesh_of = [&](const std::string& id) -> const Mesh& {
      const auto it = meshes.find(id);
      if (it == meshes.end()) throw fail("unknown mesh id '" + id + "'");
      return *it->second;
    };
    auto size_of = [&](const std::string& arg) {
      if (is_integer(arg)) {
        const long v = std::stol(arg);
        if (v < 1) throw fail("size must be >= 1");
        return static_cast<int>(v);
      }
      return mesh_of(arg).num_vertices();
    };

    if (st.name == "in") {
      if (idx != 0) throw fail("in(...) must be the first stanza");
      if (st.args.size() != 1) throw fail("in takes one argument");
      current = size_of(st.args[0]);
      current_mesh = is_integer(st.args[0]) ? "" : st.args[0];
    } else if (st.name == "dense") {
      if (st.args.size() != 1) throw fail("dense takes one argument");
      if (!current) throw fail("input size unknown; start with in(...)");
      const int out = size_of(st.args[0]);
      layers.push_back(Layer::dense(*current, out, Activation::LeakyRelu));
      current = out;
      current_mesh = is_integer(st.args[0]) ? "" : st.args[0];
    } else if (st.name == "mi") {
      if (st.args.size() != 3) throw fail("mi takes (mesh_in, mesh_out, r)");
      const Mesh& min = mesh_of(st.args[0]);
      const Mesh& mout = mesh_of(st.args[1]);
      if (current && *current != min.num_vertices())
        throw fail("input mesh '" + st.args[0] + "' has " + std::to_string(min.num_vertices()) +
                   " nodes but the previous stanza produces " + std::to_string(*current));
      double r = 0.0;
      if (st.args[2] == "inf") {
        r = INFINITY;
      } else {
        try {
          r = std::stod(st.args[2]);
        } catch (const std::exception&) {
          throw fail("bad support radius '" + st.args[2] + "'");
        }
      }
      if (!(r > 0.0)) throw fail("support radius must be positive");
      auto pattern = support_pattern(min.vertices(), mout.vertices(), r);
      if (pattern.nnz() == 0) throw Error(ErrorCode::EmptyPattern, "stanza " + std::to_string(idx) + ": no node pair within r");
      layers.push_back(Layer::mesh_informed(std::move(pattern), Activation::LeakyRelu));
      current = mout.num_vertices();
      current_mesh = st.args[1];
    } else {
      throw fail("unknown stanza kind");
    }
  }
  if (layers.empty()) throw Error(ErrorCode::SpecError, "architecture has no layers");
  layers.back().set_activation(Activation::Identity);
  MinnModel model(std::move(layers), spec);
  init_params(model, seed);
  return model;
}

std::string dense_counterpart(const std::string& spec) {
  std::string out;
  for (const auto& st : split_stanzas(spec)) {
    if (!out.empty()) out += ' ';
    if (st.name == "mi") {
      if (st.args.size() != 3) throw Error(ErrorCode::SpecError, "mi takes (mesh_in, mesh_out, r)");
      if (out.empty()) out += "in(" + st.args[0] + ") ";
      out += "dense(" + st.args[1] + ")";
    } else {
      out += st.name + "(";
      for (std::size_t k = 0; k < st.args.size(); ++k) out += (k ? "," : "") + st.args[k];
      out += ")";
    }
  }
  return out;
}

void save_model(const MinnModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << "MINNMODEL 1\n";
  out << "arch " << model.architecture() << '\n';
  out << "seed " << model.seed() << '\n';
  out << "layers " << model.layers().size() << '\n';
  char rbuf[40];
  for (const auto& l : model.layers()) {
    const char* act = l.activation() == Activation::LeakyRelu ? "leaky_relu" : "identity";
    if (l.kind() == LayerKind::Dense) {
      out << "layer dense " << l.in_dim() << ' ' << l.out_dim() << ' ' << act << '\n';
    } else {
      std::snprintf(rbuf, sizeof rbuf, "%.17g", l.pattern()->support_r);
      out << "layer mi " << l.in_dim() << ' ' << l.out_dim() << ' ' << act << ' ' << l.weight_count() << ' '
          << rbuf << '\n';
      for (int v : l.pattern()->row_ptr) io::write_u64(out, static_cast<std::uint64_t>(v));
      for (int v : l.pattern()->col_idx) io::write_u64(out, static_cast<std::uint64_t>(v));
    }
    io::write_f64s(out, l.weights());
    io::write_f64s(out, std::span<const double>(l.bias().data(), static_cast<std::size_t>(l.bias().size())));
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

MinnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  auto fail = [&](const std::string& msg) { return Error(ErrorCode::ParseError, path.string() + ": " + msg); };
  std::string line;
  if (!std::getline(in, line) || line != "MINNMODEL 1") throw fail("missing MINNMODEL header");
  if (!std::getline(in, line) || line.rfind("arch ", 0) != 0) throw fail("missing arch line");
  std::string arch = line.substr(5);
  std::uint64_t seed = 0;
  std::size_t count = 0;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "seed %lu", &seed) != 1) throw fail("missing seed line");
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "layers %zu", &count) != 1 || count == 0)
    throw fail("missing layers line");

  std::vector<Layer> layers;
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::getline(in, line)) throw fail("missing layer " + std::to_string(k));
    std::istringstream ls(line);
    std::string tag, kind, act;
    int in_dim = 0, out_dim = 0;
    if (!(ls >> tag >> kind >> in_dim >> out_dim >> act) || tag != "layer") throw fail("bad layer line '" + line + "'");
    const Activation a = act == "leaky_relu" ? Activation::LeakyRelu : Activation::Identity;
    if (kind == "dense") {
      layers.push_back(Layer::dense(in_dim, out_dim, a));
    } else if (kind == "mi") {
      std::size_t nnz = 0;
      std::string rtext;
      if (!(ls >> nnz >> rtext)) throw fail("bad mi layer line");
      SparsityPattern p;
      p.rows = out_dim;
      p.cols = in_dim;
      p.support_r = std::strtod(rtext.c_str(), nullptr);
      p.row_ptr.resize(static_cast<std::size_t>(out_dim) + 1);
      p.col_idx.resize(nnz);
      for (int& v : p.row_ptr) v = static_cast<int>(io::read_u64(in));
      for (int& v : p.col_idx) v = static_cast<int>(io::read_u64(in));
      if (p.row_ptr.front() != 0 || static_cast<std::size_t>(p.row_ptr.back()) != nnz) throw fail("corrupt pattern");
      layers.push_back(Layer::mesh_informed(std::move(p), a));
    } else {
      throw fail("unknown layer kind '" + kind + "'");
    }
    auto& l = layers.back();
    io::read_f64s(in, l.weights());
    io::read_f64s(in, std::span<double>(l.bias().data(), static_cast<std::size_t>(l.bias().size())));
  }
  MinnModel model(std::move(layers), arch);
  model.set_seed(seed);
  return model;
}

}  // namespace minn
