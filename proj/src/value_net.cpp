#include "assembly/value_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "assembly/io.hpp"

namespace assembly {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatMap = Eigen::Map<MatrixXd>;
using ConstMatMap = Eigen::Map<const MatrixXd>;
using ConstVecMap = Eigen::Map<const VectorXd>;

}  // namespace

ValueNet::ValueNet(const NetArchitecture& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.input_dim <= 0 || arch.hidden <= 0 || arch.hidden_layers < 1) {
    throw std::invalid_argument("invalid network architecture");
  }
  Index offset = 0;
  auto add = [&](const std::string& name, Index size) {
    blocks_.push_back({name, offset, size});
    offset += size;
  };
  int in = arch.input_dim;
  for (int l = 0; l < arch.hidden_layers; ++l) {
    add("fc" + std::to_string(l) + ".weight", Index(arch.hidden) * in);
    add("bn" + std::to_string(l) + ".gamma", arch.hidden);
    add("bn" + std::to_string(l) + ".beta", arch.hidden);
    in = arch.hidden;
  }
  add("out.weight", in);
  add("out.bias", 1);
  params_ = VectorXd::Zero(offset);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  in = arch.input_dim;
  for (int l = 0; l < arch.hidden_layers; ++l) {
    const ParamBlock& w = blocks_[static_cast<std::size_t>(3 * l)];
    const double std = std::sqrt(2.0 / in);  // He initialization
    for (Index i = 0; i < w.size; ++i) params_[w.offset + i] = std * normal(rng);
    params_.segment(blocks_[static_cast<std::size_t>(3 * l + 1)].offset, arch.hidden).setOnes();
    in = arch.hidden;
  }
  const ParamBlock& wo = blocks_[static_cast<std::size_t>(3 * arch.hidden_layers)];
  const double std = std::sqrt(1.0 / in);
  for (Index i = 0; i < wo.size; ++i) params_[wo.offset + i] = std * normal(rng);

  running_mean_.assign(static_cast<std::size_t>(arch.hidden_layers), VectorXd::Zero(arch.hidden));
  running_var_.assign(static_cast<std::size_t>(arch.hidden_layers), VectorXd::Ones(arch.hidden));
}

struct ValueNet::Forward {
  std::vector<MatrixXd> inputs;   // layer inputs (a_{l-1})
  std::vector<MatrixXd> xhat;     // normalized pre-activations
  std::vector<VectorXd> inv_std;
  std::vector<VectorXd> batch_mean;
  std::vector<VectorXd> batch_var;
  std::vector<MatrixXd> y;        // post batch-norm, pre ReLU
  Eigen::RowVectorXd out;
  bool batch_stats = false;
};

ValueNet::Forward ValueNet::forward(const MatrixXd& x, bool training) const {
  Forward f;
  // Batch statistics of a single sample are degenerate (zero variance); such
  // batches normalize with the running statistics, as in inference.
  f.batch_stats = training && x.cols() > 1;
  MatrixXd a = x;
  const Index batch = x.cols();
  int in = arch_.input_dim;
  for (int l = 0; l < arch_.hidden_layers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    ConstMatMap w(params_.data() + blocks_[3 * ul].offset, arch_.hidden, in);
    ConstVecMap gamma(params_.data() + blocks_[3 * ul + 1].offset, arch_.hidden);
    ConstVecMap beta(params_.data() + blocks_[3 * ul + 2].offset, arch_.hidden);
    MatrixXd z = w * a;
    VectorXd mean;
    VectorXd var;
    if (f.batch_stats) {
      mean = z.rowwise().mean();
      var = (z.colwise() - mean).array().square().rowwise().mean();
    } else {
      mean = running_mean_[ul];
      var = running_var_[ul];
    }
    VectorXd inv_std = (var.array() + arch_.bn_eps).rsqrt();
    MatrixXd xhat = (z.colwise() - mean).array().colwise() * inv_std.array();
    MatrixXd y = (xhat.array().colwise() * gamma.array()).colwise() + beta.array();
    f.inputs.push_back(std::move(a));
    a = y.cwiseMax(0.0);
    f.xhat.push_back(std::move(xhat));
    f.inv_std.push_back(std::move(inv_std));
    f.batch_mean.push_back(std::move(mean));
    f.batch_var.push_back(std::move(var));
    f.y.push_back(std::move(y));
    in = arch_.hidden;
  }
  const std::size_t out_w = 3 * static_cast<std::size_t>(arch_.hidden_layers);
  ConstVecMap wo(params_.data() + blocks_[out_w].offset, in);
  const double bo = params_[blocks_[out_w + 1].offset];
  f.out = (wo.transpose() * a).array() + bo;
  f.inputs.push_back(std::move(a));
  (void)batch;
  return f;
}

VectorXd ValueNet::predict(const MatrixXd& inputs) const { return forward(inputs, false).out.transpose(); }

double ValueNet::loss(const MatrixXd& inputs, const VectorXd& targets) const {
  const Forward f = forward(inputs, true);
  return (f.out.transpose() - targets).squaredNorm() / static_cast<double>(targets.size());
}

double ValueNet::loss_and_gradient(const MatrixXd& x, const VectorXd& targets, VectorXd& grad,
                                   bool update_running) {
  const Forward f = forward(x, true);
  const double batch = static_cast<double>(x.cols());
  const Eigen::RowVectorXd diff = f.out - targets.transpose();
  const double loss = diff.squaredNorm() / batch;

  grad = VectorXd::Zero(params_.size());
  const std::size_t out_w = 3 * static_cast<std::size_t>(arch_.hidden_layers);
  const int hidden = arch_.hidden;
  Eigen::RowVectorXd d_out = (2.0 / batch) * diff;
  grad.segment(blocks_[out_w].offset, hidden) = f.inputs.back() * d_out.transpose();
  grad[blocks_[out_w + 1].offset] = d_out.sum();
  ConstVecMap wo(params_.data() + blocks_[out_w].offset, hidden);
  MatrixXd d_a = wo * d_out;  // hidden x batch

  for (int l = arch_.hidden_layers - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const int in = l == 0 ? arch_.input_dim : hidden;
    ConstVecMap gamma(params_.data() + blocks_[3 * ul + 1].offset, hidden);
    MatrixXd d_y = d_a.array() * (f.y[ul].array() > 0.0).cast<double>();
    grad.segment(blocks_[3 * ul + 1].offset, hidden) = (d_y.array() * f.xhat[ul].array()).rowwise().sum();
    grad.segment(blocks_[3 * ul + 2].offset, hidden) = d_y.rowwise().sum();
    MatrixXd d_xhat = d_y.array().colwise() * gamma.array();
    MatrixXd d_z;
    if (!f.batch_stats) {
      d_z = d_xhat.array().colwise() * f.inv_std[ul].array();
    } else {
      VectorXd sum_dx = d_xhat.rowwise().sum();
      VectorXd sum_dx_xhat = (d_xhat.array() * f.xhat[ul].array()).rowwise().sum();
      d_z = (batch * d_xhat.array()).colwise() - sum_dx.array();
      d_z.array() -= f.xhat[ul].array().colwise() * sum_dx_xhat.array();
      d_z = (d_z.array().colwise() * (f.inv_std[ul].array() / batch)).matrix();
    }
    MatMap gw(grad.data() + blocks_[3 * ul].offset, hidden, in);
    gw = d_z * f.inputs[ul].transpose();
    if (l > 0) {
      ConstMatMap w(params_.data() + blocks_[3 * ul].offset, hidden, in);
      d_a = w.transpose() * d_z;
    }
  }

  if (update_running && f.batch_stats) {
    const double m = arch_.bn_momentum;
    for (std::size_t l = 0; l < running_mean_.size(); ++l) {
      running_mean_[l] = (1.0 - m) * running_mean_[l] + m * f.batch_mean[l];
      running_var_[l] = (1.0 - m) * running_var_[l] + m * f.batch_var[l];
    }
  }
  return loss;
}

void ValueNet::recalibrate_batch_norm(const MatrixXd& inputs) {
  const Forward f = forward(inputs, true);
  running_mean_ = f.batch_mean;
  running_var_ = f.batch_var;
}

void ValueNet::round_to_float(bool running_stats) {
  auto round = [](VectorXd& v) {
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(v[i]));
  };
  round(params_);
  if (!running_stats) return;
  for (auto& v : running_mean_) round(v);
  for (auto& v : running_var_) round(v);
}

void ValueNet::save(const std::filesystem::path& path, const std::string& header_extra_json) const {
  std::vector<float> blob;
  blob.reserve(static_cast<std::size_t>(params_.size()) + 2 * running_mean_.size() * arch_.hidden);
  for (Index i = 0; i < params_.size(); ++i) blob.push_back(static_cast<float>(params_[i]));
  for (const auto& v : running_mean_)
    for (Index i = 0; i < v.size(); ++i) blob.push_back(static_cast<float>(v[i]));
  for (const auto& v : running_var_)
    for (Index i = 0; i < v.size(); ++i) blob.push_back(static_cast<float>(v[i]));

  nlohmann::ordered_json header;
  header["format"] = "value-net";
  header["schema_version"] = kSchemaVersion;
  header["architecture"] = {{"input_dim", arch_.input_dim},
                            {"hidden", arch_.hidden},
                            {"hidden_layers", arch_.hidden_layers},
                            {"bn_momentum", arch_.bn_momentum},
                            {"bn_eps", arch_.bn_eps}};
  header["parameter_count"] = params_.size();
  header["blob_floats"] = blob.size();
  header["dtype"] = "float32";
  header["byte_order"] = "little";
  const auto extra = nlohmann::ordered_json::parse(header_extra_json);
  for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();

  std::string bytes = dump_fixed(header) + "\n";
  bytes.append(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(float));
  write_text(path, bytes);
}

ValueNet ValueNet::load(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw std::runtime_error("checkpoint header missing: " + path.string());
  const auto header = nlohmann::json::parse(bytes.substr(0, nl));
  if (header.at("format") != "value-net") throw std::runtime_error("not a value-net checkpoint");
  const auto& a = header.at("architecture");
  NetArchitecture arch{a.at("input_dim").get<int>(), a.at("hidden").get<int>(), a.at("hidden_layers").get<int>(),
                       a.at("bn_momentum").get<double>(), a.at("bn_eps").get<double>()};
  ValueNet net(arch, 0);
  const std::size_t floats = header.at("blob_floats").get<std::size_t>();
  if (bytes.size() - nl - 1 != floats * sizeof(float)) throw std::runtime_error("checkpoint blob size mismatch");
  std::vector<float> blob(floats);
  std::memcpy(blob.data(), bytes.data() + nl + 1, floats * sizeof(float));
  std::size_t k = 0;
  if (static_cast<Index>(floats) != net.params_.size() + 2 * Index(arch.hidden_layers) * arch.hidden) {
    throw std::runtime_error("checkpoint does not match its architecture");
  }
  for (Index i = 0; i < net.params_.size(); ++i) net.params_[i] = blob[k++];
  for (auto& v : net.running_mean_)
    for (Index i = 0; i < v.size(); ++i) v[i] = blob[k++];
  for (auto& v : net.running_var_)
    for (Index i = 0; i < v.size(); ++i) v[i] = blob[k++];
  return net;
}

Adam::Adam(Index size, const AdamConfig& config)
    : config_(config), m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)) {}

void Adam::step(VectorXd& params, const VectorXd& g) {
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * g;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -= config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
}

}  // namespace assembly
