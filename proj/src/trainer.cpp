#include "xrecap/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"

namespace xrecap {

std::string_view to_string(Optimizer opt) {
  return opt == Optimizer::sgd ? "sgd" : "adam";
}

Optimizer optimizer_from_string(std::string_view name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw Error(ErrorClass::validation,
              "unknown optimizer '" + std::string(name) +
                  "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (batch_size < 2) {
    problems.push_back("train.batch_size must be at least 2");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    problems.push_back("train.learning_rate must be finite and >= 0");
  }
  if (epochs == 0) problems.push_back("train.epochs must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    problems.push_back("train.temperature must be positive");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::uint64_t TrainConfig::hash() const {
  std::ostringstream s;
  s << std::setprecision(17) << "batch_size=" << batch_size
    << ";learning_rate=" << learning_rate << ";epochs=" << epochs
    << ";temperature=" << temperature << ";optimizer=" << to_string(optimizer)
    << ";seed=" << seed;
  return fnv1a64(s.str());
}

ProjectionHead ProjectionHead::initial(std::size_t text_dim,
                                       std::size_t joint_dim,
                                       std::uint64_t seed) {
  if (text_dim == 0 || joint_dim == 0) {
    throw Error(ErrorClass::validation, "head dims must be positive");
  }
  Rng rng(derive_seed(seed, "head-init"));
  ProjectionHead head;
  head.weight = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(text_dim),
                                      static_cast<Eigen::Index>(joint_dim));
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < head.weight.cols(); ++c) {
      head.weight(r, c) = (r == c ? 1.0 : 0.0) + rng.uniform(-0.01, 0.01);
    }
  }
  head.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(joint_dim));
  return head;
}

Eigen::VectorXd ProjectionHead::project(
    const Eigen::Ref<const Eigen::VectorXd>& feature) const {
  if (feature.size() != weight.rows()) {
    throw Error(ErrorClass::validation,
                "feature dim " + std::to_string(feature.size()) +
                    " does not match head input dim " +
                    std::to_string(weight.rows()));
  }
  Eigen::VectorXd z = weight.transpose() * feature + bias;
  const double norm = z.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorClass::numeric,
                "projection is zero or non-finite and cannot be normalized");
  }
  return z / norm;
}

Eigen::MatrixXd ProjectionHead::project_rows(
    const Eigen::Ref<const Eigen::MatrixXd>& features) const {
  Eigen::MatrixXd out(features.rows(), weight.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out.row(i) = project(features.row(i).transpose()).transpose();
  }
  return out;
}

namespace {

void check_unit_rows(const Eigen::Ref<const Eigen::MatrixXd>& m,
                     const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (std::abs(m.row(i).norm() - 1.0) > 1e-6) {
      throw Error(ErrorClass::validation,
                  std::string(what) + " row " + std::to_string(i) +
                      " is not unit norm");
    }
  }
}

}  // namespace

LossResult contrastive_loss(const Eigen::Ref<const Eigen::MatrixXd>& text,
                            const Eigen::Ref<const Eigen::MatrixXd>& images,
                            double temperature) {
  const Eigen::Index n = text.rows();
  if (n < 2) {
    throw Error(ErrorClass::validation,
                "contrastive loss needs at least 2 pairs");
  }
  if (images.rows() != n || images.cols() != text.cols()) {
    throw Error(ErrorClass::validation,
                "text and image batches differ in shape");
  }
  if (!(temperature > 0.0)) {
    throw Error(ErrorClass::validation, "temperature must be positive");
  }
  check_unit_rows(text, "text");
  check_unit_rows(images, "image");

  // logits(a, b) = <t_a, i_b> / tau
  const Eigen::MatrixXd logits = (text * images.transpose()) / temperature;

  // Row softmax: each text against all images (T2I).
  Eigen::MatrixXd p_row(n, n);
  double t2i = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const double m = logits.row(a).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(a).array() - m).exp().matrix();
    const double z = e.sum();
    p_row.row(a) = e / z;
    t2i -= logits(a, a) - (m + std::log(z));
  }
  // Column softmax: each image against all texts (I2T).
  Eigen::MatrixXd p_col(n, n);
  double i2t = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const double m = logits.col(b).maxCoeff();
    const Eigen::VectorXd e = (logits.col(b).array() - m).exp().matrix();
    const double z = e.sum();
    p_col.col(b) = e / z;
    i2t -= logits(b, b) - (m + std::log(z));
  }
  const double nd = static_cast<double>(n);

  LossResult out;
  out.loss = 0.5 * (i2t + t2i) / nd;
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd d_logits = (p_row - identity + p_col - identity) / (2.0 * nd);
  out.text_gradient = d_logits * images / temperature;
  return out;
}

HeadGradient head_loss_and_gradient(
    const ProjectionHead& head, const Eigen::Ref<const Eigen::MatrixXd>& features,
    const Eigen::Ref<const Eigen::MatrixXd>& images, double temperature) {
  if (features.cols() != head.weight.rows()) {
    throw Error(ErrorClass::validation, "feature dim does not match head");
  }
  Eigen::MatrixXd z = features * head.weight;
  z.rowwise() += head.bias.transpose();
  Eigen::VectorXd norms = z.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw Error(ErrorClass::numeric,
                  "projection of row " + std::to_string(i) +
                      " is zero or non-finite");
    }
  }
  const Eigen::MatrixXd text = norms.asDiagonal().inverse() * z;
  const LossResult lr = contrastive_loss(text, images, temperature);

  // Backprop through t = z / |z|: dz = (g - t <t, g>) / |z|.
  const Eigen::VectorXd radial = (text.array() * lr.text_gradient.array()).rowwise().sum();
  Eigen::MatrixXd dz = lr.text_gradient - radial.asDiagonal() * text;
  dz = norms.asDiagonal().inverse() * dz;

  HeadGradient g;
  g.loss = lr.loss;
  g.weight = features.transpose() * dz;
  g.bias = dz.colwise().sum().transpose();
  return g;
}

std::size_t sample_positive_index(const AugmentationPool& pool, Rng& rng) {
  return rng.index(pool.size());
}

const Eigen::VectorXd& sample_positive(const AugmentationPool& pool, Rng& rng) {
  return pool.member(sample_positive_index(pool, rng));
}

namespace {

class Updater {
 public:
  Updater(const TrainConfig& config, const ProjectionHead& head)
      : config_(config),
        m_w_(Eigen::MatrixXd::Zero(head.weight.rows(), head.weight.cols())),
        v_w_(m_w_),
        m_b_(Eigen::VectorXd::Zero(head.bias.size())),
        v_b_(m_b_) {}

  void step(ProjectionHead& head, const HeadGradient& g) {
    const double lr = config_.learning_rate;
    if (config_.optimizer == Optimizer::sgd) {
      head.weight -= lr * g.weight;
      head.bias -= lr * g.bias;
      return;
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    m_w_ = beta1 * m_w_ + (1 - beta1) * g.weight;
    v_w_ = beta2 * v_w_ + (1 - beta2) * g.weight.cwiseAbs2();
    m_b_ = beta1 * m_b_ + (1 - beta1) * g.bias;
    v_b_ = beta2 * v_b_ + (1 - beta2) * g.bias.cwiseAbs2();
    head.weight.array() -=
        lr * (m_w_.array() / c1) / ((v_w_.array() / c2).sqrt() + eps);
    head.bias.array() -=
        lr * (m_b_.array() / c1) / ((v_b_.array() / c2).sqrt() + eps);
  }

 private:
  const TrainConfig& config_;
  Eigen::MatrixXd m_w_, v_w_;
  Eigen::VectorXd m_b_, v_b_;
  long t_ = 0;
};

}  // namespace

TrainResult train(std::span<const TrainingExample> examples,
                  const TrainConfig& config,
                  std::optional<ProjectionHead> initial) {
  config.validate();
  if (examples.empty()) {
    throw Error(ErrorClass::validation, "no training examples");
  }
  if (config.batch_size > examples.size()) {
    throw Error(ErrorClass::validation,
                "batch size " + std::to_string(config.batch_size) +
                    " exceeds dataset size " +
                    std::to_string(examples.size()));
  }
  const auto text_dim = static_cast<std::size_t>(examples[0].pool.original.size());
  const auto joint_dim = static_cast<std::size_t>(examples[0].image_vector.size());
  for (const auto& ex : examples) {
    bool ok = static_cast<std::size_t>(ex.image_vector.size()) == joint_dim;
    for (std::size_t i = 0; i < ex.pool.size(); ++i) {
      ok = ok && static_cast<std::size_t>(ex.pool.member(i).size()) == text_dim;
    }
    if (!ok) {
      throw Error(ErrorClass::validation,
                  "inconsistent feature dims for image '" + ex.image_id + "'");
    }
  }

  TrainResult result;
  result.head = initial ? std::move(*initial)
                        : ProjectionHead::initial(text_dim, joint_dim, config.seed);
  if (result.head.text_dim() != text_dim || result.head.joint_dim() != joint_dim) {
    throw Error(ErrorClass::validation, "initial head dims do not match data");
  }

  Rng rng(derive_seed(config.seed, "train"));
  Updater updater(config, result.head);
  const std::size_t count = examples.size();
  const std::size_t n = config.batch_size;
  const std::size_t steps = (count + n - 1) / n;
  std::vector<std::size_t> order(count);
  Eigen::MatrixXd features(static_cast<Eigen::Index>(n),
                           static_cast<Eigen::Index>(text_dim));
  Eigen::MatrixXd images(static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(joint_dim));

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto& ex = examples[order[(s * n + j) % count]];
        const auto row = static_cast<Eigen::Index>(j);
        features.row(row) = sample_positive(ex.pool, rng).transpose();
        images.row(row) = ex.image_vector.transpose();
      }
      HeadGradient g;
      try {
        g = head_loss_and_gradient(result.head, features, images, config.temperature);
      } catch (const Error& e) {
        if (e.error_class() != ErrorClass::numeric) throw;
        throw Error(ErrorClass::numeric,
                    std::string(e.what()) + " at step " + std::to_string(global_step));
      }
      if (!std::isfinite(g.loss)) {
        throw Error(ErrorClass::numeric,
                    "non-finite loss at step " + std::to_string(global_step));
      }
      loss_sum += g.loss;
      updater.step(result.head, g);
    }
    const auto elapsed = std::chrono::steady_clock::now() - start;
    result.log.push_back(
        {epoch + 1, loss_sum / static_cast<double>(steps),
         std::chrono::duration<double, std::milli>(elapsed).count()});
  }
  return result;
}

void write_training_log(const std::filesystem::path& path,
                        std::span<const EpochLog> log) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::io, "cannot write " + path.string());
  out << "epoch,mean_loss,wall_ms\n";
  out << std::setprecision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.mean_loss << ',' << std::fixed
        << std::setprecision(3) << e.wall_ms << std::defaultfloat
        << std::setprecision(17) << '\n';
  }
}

namespace {

constexpr char kCheckpointMagic[4] = {'X', 'R', 'C', '1'};

}  // namespace

// Layout: "XRC1", u32 text_dim, u32 joint_dim, u64 seed, u64 config_hash,
// f64 weights (row-major d_text x d_joint), f64 bias, u64 FNV-1a checksum of
// everything before it. All little-endian.
void save_checkpoint(const ProjectionHead& head, const CheckpointInfo& info,
                     const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  buf.write(kCheckpointMagic, 4);
  detail::put_le(buf, static_cast<std::uint32_t>(head.text_dim()));
  detail::put_le(buf, static_cast<std::uint32_t>(head.joint_dim()));
  detail::put_le(buf, info.seed);
  detail::put_le(buf, info.config_hash);
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < head.weight.cols(); ++c) {
      detail::put_f64(buf, head.weight(r, c));
    }
  }
  for (Eigen::Index i = 0; i < head.bias.size(); ++i) {
    detail::put_f64(buf, head.bias(i));
  }
  const std::string payload = buf.str();
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::io, "cannot write " + path.string());
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  detail::put_le(out, fnv1a64(payload));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<HeadDims> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 + 4 + 8 + 8 + 8 ||
      !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw Error(ErrorClass::format, path.string() + ": not an XRC1 checkpoint");
  }
  std::istringstream s(bytes, std::ios::binary);
  s.ignore(4);
  const auto text_dim = detail::get_le<std::uint32_t>(s, "text_dim");
  const auto joint_dim = detail::get_le<std::uint32_t>(s, "joint_dim");
  if (expected && (expected->text_dim != text_dim ||
                   expected->joint_dim != joint_dim)) {
    throw Error(ErrorClass::validation,
                path.string() + ": checkpoint dims mismatch: expected " +
                    std::to_string(expected->text_dim) + "x" +
                    std::to_string(expected->joint_dim) + ", found " +
                    std::to_string(text_dim) + "x" + std::to_string(joint_dim));
  }
  const std::size_t payload_size =
      4 + 4 + 4 + 8 + 8 + 8 * (std::size_t{text_dim} * joint_dim + joint_dim);
  if (bytes.size() != payload_size + 8) {
    throw Error(ErrorClass::format,
                path.string() + ": checkpoint size does not match its dims "
                                "(corrupt or truncated)");
  }
  LoadedCheckpoint out;
  out.info.seed = detail::get_le<std::uint64_t>(s, "seed");
  out.info.config_hash = detail::get_le<std::uint64_t>(s, "config_hash");
  out.head.weight.resize(text_dim, joint_dim);
  for (Eigen::Index r = 0; r < out.head.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.head.weight.cols(); ++c) {
      out.head.weight(r, c) = detail::get_f64(s, "weights");
    }
  }
  out.head.bias.resize(joint_dim);
  for (Eigen::Index i = 0; i < out.head.bias.size(); ++i) {
    out.head.bias(i) = detail::get_f64(s, "bias");
  }
  const auto checksum = detail::get_le<std::uint64_t>(s, "checksum");
  if (checksum != fnv1a64(std::string_view(bytes).substr(0, payload_size))) {
    throw Error(ErrorClass::format,
                path.string() + ": checkpoint checksum mismatch (corrupt file)");
  }
  for (Eigen::Index i = 0; i < out.head.weight.size(); ++i) {
    if (!std::isfinite(out.head.weight.data()[i])) {
      throw Error(ErrorClass::numeric, path.string() + ": non-finite weight");
    }
  }
  return out;
}

}  // namespace xrecap
