#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xrecap/common.hpp"

namespace xrecap {

enum class Optimizer { sgd, adam };

std::string_view to_string(Optimizer opt);
Optimizer optimizer_from_string(std::string_view name);

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t epochs = 30;
  double temperature = 0.07;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;

  // Throws ConfigError listing every violated constraint.
  void validate() const;
  // Stable hash of every field; stored in checkpoints.
  std::uint64_t hash() const;
};

// Affine map from frozen text features into the image space, followed by
// unit normalization. `weight` is d_text x d_joint; project(x) uses
// weight^T x + bias.
struct ProjectionHead {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  std::size_t text_dim() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t joint_dim() const { return static_cast<std::size_t>(weight.cols()); }

  // Identity (padded or truncated) plus uniform noise in [-0.01, 0.01],
  // zero bias.
  static ProjectionHead initial(std::size_t text_dim, std::size_t joint_dim,
                                std::uint64_t seed);

  // Throws numeric if the affine output is zero or non-finite.
  Eigen::VectorXd project(const Eigen::Ref<const Eigen::VectorXd>& feature) const;
  // Projects every row.
  Eigen::MatrixXd project_rows(const Eigen::Ref<const Eigen::MatrixXd>& features) const;
};

struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd text_gradient;  // dL/d(text rows)
};

// Symmetric InfoNCE over a batch: rows of `text` and `images` are unit
// vectors; row k of each is the positive pair. Returns
// (L_I2T + L_T2I) / 2 and its exact gradient with respect to `text`.
LossResult contrastive_loss(const Eigen::Ref<const Eigen::MatrixXd>& text,
                            const Eigen::Ref<const Eigen::MatrixXd>& images,
                            double temperature);

struct HeadGradient {
  double loss = 0.0;
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

// Loss of the projected features against the images and its gradient with
// respect to the head parameters, through the normalization.
HeadGradient head_loss_and_gradient(const ProjectionHead& head,
                                    const Eigen::Ref<const Eigen::MatrixXd>& features,
                                    const Eigen::Ref<const Eigen::MatrixXd>& images,
                                    double temperature);

// The original caption feature plus n rewrite features for one image.
struct AugmentationPool {
  Eigen::VectorXd original;
  std::vector<Eigen::VectorXd> rewrites;

  std::size_t size() const { return 1 + rewrites.size(); }
  const Eigen::VectorXd& member(std::size_t i) const {
    return i == 0 ? original : rewrites[i - 1];
  }
};

// Uniform draw over original and rewrites.
std::size_t sample_positive_index(const AugmentationPool& pool, Rng& rng);
const Eigen::VectorXd& sample_positive(const AugmentationPool& pool, Rng& rng);

struct TrainingExample {
  std::string image_id;
  Eigen::VectorXd image_vector;
  AugmentationPool pool;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  ProjectionHead head;
  std::vector<EpochLog> log;
};

// Each epoch reshuffles the examples and runs ceil(count / N) steps; the
// final short batch is topped up from the front of the epoch order so every
// step sees N pairs.
TrainResult train(std::span<const TrainingExample> examples,
                  const TrainConfig& config,
                  std::optional<ProjectionHead> initial = std::nullopt);

void write_training_log(const std::filesystem::path& path,
                        std::span<const EpochLog> log);

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const ProjectionHead& head, const CheckpointInfo& info,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  ProjectionHead head;
  CheckpointInfo info;
};

struct HeadDims {
  std::size_t text_dim = 0;
  std::size_t joint_dim = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<HeadDims> expected = std::nullopt);

}  // namespace xrecap
