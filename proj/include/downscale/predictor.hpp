#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "coordinates.hpp"
#include "error.hpp"
#include "schema.hpp"
#include "tables.hpp"

namespace downscale {

enum class PredictorKind { softmax, least_squares };

struct PredictorOptions {
  double l2 = 1e-4;
  double learning_rate = 0.1;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-6;
  double ridge = 1e-8;
};

/// Conditional model of one non-core feature given the core coordinates.
///
/// Inputs are standardized with the training mean and deviation; the
/// weight matrix is classes x (1 + inputs) with the bias in column 0.
struct Predictor {
  std::string target;
  PredictorKind kind = PredictorKind::softmax;
  std::size_t num_classes = 0;
  std::vector<Coordinate> inputs;
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
  Eigen::MatrixXd weights;
  std::optional<std::size_t> constant_class;  // single-class training target
  int iterations = 0;

  /// Writes the class distribution (softmax) or the point prediction
  /// (least squares, one value) for one raw input row.
  void predict(std::span<const double> input, std::span<double> out) const {
    if (constant_class) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = k == *constant_class ? 1.0 : 0.0;
      return;
    }
    const auto p = static_cast<Eigen::Index>(inputs.size());
    Eigen::VectorXd x(p + 1);
    x(0) = 1.0;
    for (Eigen::Index i = 0; i < p; ++i)
      x(i + 1) = (input[static_cast<std::size_t>(i)] - center(i)) / scale(i);
    Eigen::VectorXd s = weights * x;
    if (kind == PredictorKind::least_squares) {
      out[0] = s(0);
      return;
    }
    const double mx = s.maxCoeff();
    double total = 0.0;
    for (Eigen::Index k = 0; k < s.size(); ++k) total += (s(k) = std::exp(s(k) - mx));
    for (Eigen::Index k = 0; k < s.size(); ++k) out[static_cast<std::size_t>(k)] = s(k) / total;
  }

  std::vector<double> predict(std::span<const double> input) const {
    std::vector<double> out(kind == PredictorKind::softmax ? num_classes : 1);
    predict(input, out);
    return out;
  }
};

/// Mean cross-entropy of softmax(X W^T) against integer labels plus
/// (l2/2)|W|^2 over non-bias columns, and its gradient with respect to W.
/// X carries the bias as column 0.
inline std::pair<double, Eigen::MatrixXd> softmax_loss_and_gradient(const Eigen::MatrixXd& weights,
                                                                    const Eigen::MatrixXd& x,
                                                                    const std::vector<std::uint32_t>& labels,
                                                                    double l2) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd probs = x * weights.transpose();  // n x k
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = probs.row(i);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    const double total = row.sum();
    row /= total;
    loss -= std::log(std::max(row(labels[static_cast<std::size_t>(i)]), 1e-300));
    row(labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(std::max<Eigen::Index>(n, 1));
  loss *= inv_n;
  Eigen::MatrixXd grad = inv_n * probs.transpose() * x;  // k x (p+1)
  const auto p1 = weights.cols();
  loss += 0.5 * l2 * weights.rightCols(p1 - 1).squaredNorm();
  grad.rightCols(p1 - 1) += l2 * weights.rightCols(p1 - 1);
  return {loss, std::move(grad)};
}

namespace detail {

inline void standardize(const Eigen::MatrixXd& raw, Eigen::VectorXd& center, Eigen::VectorXd& scale,
                        Eigen::MatrixXd& design) {
  const Eigen::Index n = raw.rows(), p = raw.cols();
  center = raw.colwise().mean().transpose();
  scale.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = n > 1 ? (raw.col(j).array() - center(j)).square().sum() / static_cast<double>(n) : 0.0;
    const double sd = std::sqrt(var);
    scale(j) = sd > 1e-12 * (1.0 + std::abs(center(j))) ? sd : 1.0;
  }
  design.resize(n, p + 1);
  design.col(0).setOnes();
  for (Eigen::Index j = 0; j < p; ++j) design.col(j + 1) = (raw.col(j).array() - center(j)) / scale(j);
}

}  // namespace detail

/// Softmax-linear classifier fitted by full-batch gradient descent.
/// `raw` holds one row of unstandardized inputs per training example.
inline Predictor fit_softmax(const std::string& target, const std::vector<Coordinate>& inputs,
                             const Eigen::MatrixXd& raw, const std::vector<std::uint32_t>& labels,
                             std::size_t num_classes, const PredictorOptions& options = {}) {
  constexpr const char* op = "fit_predictor: ";
  if (static_cast<std::size_t>(raw.rows()) != labels.size() || labels.empty())
    throw ValidationError(std::string(op) + "training data is empty or misaligned");
  Predictor pred;
  pred.target = target;
  pred.kind = PredictorKind::softmax;
  pred.num_classes = num_classes;
  pred.inputs = inputs;

  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) {
    if (l >= num_classes) throw ValidationError(std::string(op) + "label out of range");
    ++counts[l];
  }
  Eigen::MatrixXd design;
  detail::standardize(raw, pred.center, pred.scale, design);
  pred.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_classes), design.cols());
  for (std::size_t k = 0; k < num_classes; ++k)
    if (counts[k] == labels.size()) {
      pred.constant_class = k;
      return pred;
    }

  for (pred.iterations = 0; pred.iterations < options.max_iterations; ++pred.iterations) {
    auto [loss, grad] = softmax_loss_and_gradient(pred.weights, design, labels, options.l2);
    if (!std::isfinite(loss)) throw NumericalError(std::string(op) + "non-finite loss");
    if (grad.norm() < options.gradient_tolerance) break;
    pred.weights -= options.learning_rate * grad;
  }
  return pred;
}

/// Ordinary least squares on standardized inputs via ridge-stabilized normal
/// equations.
inline Predictor fit_least_squares(const std::string& target, const std::vector<Coordinate>& inputs,
                                   const Eigen::MatrixXd& raw, const Eigen::VectorXd& y,
                                   const PredictorOptions& options = {}) {
  if (raw.rows() != y.size() || y.size() == 0)
    throw ValidationError("fit_predictor: training data is empty or misaligned");
  Predictor pred;
  pred.target = target;
  pred.kind = PredictorKind::least_squares;
  pred.num_classes = 0;
  pred.inputs = inputs;
  Eigen::MatrixXd design;
  detail::standardize(raw, pred.center, pred.scale, design);
  Eigen::MatrixXd gram = design.transpose() * design;
  gram.diagonal().array() += options.ridge;
  Eigen::VectorXd w = gram.ldlt().solve(design.transpose() * y);
  if (!w.allFinite()) throw NumericalError("fit_predictor: non-finite least-squares solution");
  pred.weights = w.transpose();
  return pred;
}

/// Raw input rows for the given core coordinates. Categorical cells
/// contribute their probability vector (or one-hot label) entries, continuous
/// cells their value.
inline Eigen::MatrixXd encode_inputs(const IndividualTable& table, const std::vector<Coordinate>& inputs) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(table.rows()), static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const auto& col = table.column(inputs[j].feature);
    for (std::size_t r = 0; r < table.rows(); ++r) {
      double v;
      if (!inputs[j].class_index)
        v = col.values[r];
      else if (col.kind == CellKind::distribution)
        v = col.values[r * col.width + *inputs[j].class_index];
      else
        v = col.labels[r] == *inputs[j].class_index ? 1.0 : 0.0;
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return x;
}

// ---- serialization --------------------------------------------------------

inline nlohmann::json predictor_to_json(const Predictor& p) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& c : p.inputs) {
    nlohmann::json item{{"feature", c.feature}};
    if (c.class_index) item["class"] = *c.class_index;
    inputs.push_back(item);
  }
  nlohmann::json w = nlohmann::json::array();
  for (Eigen::Index k = 0; k < p.weights.rows(); ++k) {
    std::vector<double> row(static_cast<std::size_t>(p.weights.cols()));
    for (Eigen::Index j = 0; j < p.weights.cols(); ++j) row[static_cast<std::size_t>(j)] = p.weights(k, j);
    w.push_back(row);
  }
  nlohmann::json out{{"target", p.target},
                     {"kind", p.kind == PredictorKind::softmax ? "softmax" : "least_squares"},
                     {"num_classes", p.num_classes},
                     {"inputs", std::move(inputs)},
                     {"center", std::vector<double>(p.center.data(), p.center.data() + p.center.size())},
                     {"scale", std::vector<double>(p.scale.data(), p.scale.data() + p.scale.size())},
                     {"weights", std::move(w)},
                     {"iterations", p.iterations}};
  if (p.constant_class) out["constant_class"] = *p.constant_class;
  return out;
}

inline Predictor predictor_from_json(const nlohmann::json& j) {
  try {
    Predictor p;
    p.target = j.at("target").get<std::string>();
    p.kind = j.at("kind").get<std::string>() == "softmax" ? PredictorKind::softmax : PredictorKind::least_squares;
    p.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& c : j.at("inputs")) {
      Coordinate coord{c.at("feature").get<std::string>(), std::nullopt};
      if (c.contains("class")) coord.class_index = c.at("class").get<std::size_t>();
      p.inputs.push_back(coord);
    }
    const auto center = j.at("center").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    p.center = Eigen::Map<const Eigen::VectorXd>(center.data(), static_cast<Eigen::Index>(center.size()));
    p.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
    const auto& w = j.at("weights");
    p.weights.resize(static_cast<Eigen::Index>(w.size()), static_cast<Eigen::Index>(p.inputs.size() + 1));
    for (std::size_t k = 0; k < w.size(); ++k) {
      const auto row = w[k].get<std::vector<double>>();
      if (row.size() != p.inputs.size() + 1) throw ValidationError("predictor: weight row has wrong width");
      for (std::size_t c = 0; c < row.size(); ++c)
        p.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = row[c];
    }
    if (!p.weights.allFinite()) throw ValidationError("predictor: non-finite weights");
    p.iterations = j.value("iterations", 0);
    if (j.contains("constant_class")) p.constant_class = j.at("constant_class").get<std::size_t>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("predictor: ") + e.what());
  }
}

}  // namespace downscale
