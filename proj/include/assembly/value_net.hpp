#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace assembly {

struct NetArchitecture {
  int input_dim = 0;
  int hidden = 128;
  int hidden_layers = 4;  // plus the linear output layer: 5 fully-connected layers
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

/// Named slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Fully-connected value regressor: [Linear -> BatchNorm -> ReLU] x hidden_layers -> Linear.
/// Hidden linear layers carry no bias (the batch-norm shift replaces it).
/// Samples are columns.
class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(const NetArchitecture& arch, std::uint64_t seed);

  const NetArchitecture& architecture() const { return arch_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

  /// Inference mode: batch norm uses the running statistics.
  Eigen::VectorXd predict(const Eigen::MatrixXd& inputs) const;

  /// Training-mode MSE on a batch (batch statistics), no side effects.
  double loss(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets) const;

  /// Training-mode MSE and its gradient w.r.t. parameters(). When
  /// `update_running` is set, running statistics move toward the batch ones.
  double loss_and_gradient(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                           Eigen::VectorXd& gradient, bool update_running);

  /// Replaces running statistics with exact statistics over `inputs`.
  void recalibrate_batch_norm(const Eigen::MatrixXd& inputs);

  /// Rounds parameters (and optionally running statistics) to float32 precision.
  void round_to_float(bool running_stats = true);

  /// JSON header line + little-endian float32 blob (parameters, then running stats).
  void save(const std::filesystem::path& path, const std::string& header_extra_json = "{}") const;
  static ValueNet load(const std::filesystem::path& path);

 private:
  struct Forward;
  Forward forward(const Eigen::MatrixXd& inputs, bool training) const;

  NetArchitecture arch_;
  Eigen::VectorXd params_;
  std::vector<ParamBlock> blocks_;
  std::vector<Eigen::VectorXd> running_mean_;
  std::vector<Eigen::VectorXd> running_var_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(Eigen::Index size, const AdamConfig& config);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient);

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace assembly
