#pragma once

// Canonical correlation analysis for aligning two feature spaces.
//
// The fit solves the regularized generalized eigenproblem
//   (Sxx + rI)^-1 Sxy (Syy + rI)^-1 Syx  wx = rho^2 wx
// through a Cholesky change of basis so the eigensolve stays symmetric.
// Regularization is relative: the ridge added to each side is
// reg * trace(S)/dim for that side. Projections are scaled to unit variance
// on the training set, and the reported correlations are the sample
// correlations of the projected training pairs, ordered non-increasing.

#include <Eigen/Dense>
#include <iostream>

#include "avclab/checkpoint.hpp"

namespace avc {

struct CcaModel {
  Eigen::VectorXd mean_x, mean_y;
  Eigen::MatrixXd proj_x, proj_y;  // dim x components
  std::vector<double> correlations;
  double regularization = 1e-4;

  int components() const { return int(proj_x.cols()); }
  int dim_x() const { return int(proj_x.rows()); }
  int dim_y() const { return int(proj_y.rows()); }
};

enum class CcaSide { x, y };

inline CcaModel fit_cca(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int n_components,
                        double reg = 1e-4, std::ostream& warn = std::cerr) {
  const int n = int(X.rows());
  const int dx = int(X.cols()), dy = int(Y.cols());
  AVC_CHECK_ARG(n >= 2, "fit_cca: need at least 2 paired samples, got " << n);
  AVC_CHECK_ARG(Y.rows() == n, "fit_cca: X has " << n << " rows but Y has " << Y.rows());
  AVC_CHECK_ARG(n_components >= 1, "fit_cca: need at least one component");
  AVC_CHECK_ARG(reg >= 0, "fit_cca: regularization must be non-negative");

  const int cap = std::min({dx, dy, n - 1});
  if (n_components > cap) {
    warn << "fit_cca: clamping n_components from " << n_components << " to " << cap << "\n";
    n_components = cap;
  }

  CcaModel model;
  model.regularization = reg;
  model.mean_x = X.colwise().mean();
  model.mean_y = Y.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - model.mean_x.transpose();
  Eigen::MatrixXd Yc = Y.rowwise() - model.mean_y.transpose();

  const double scale = 1.0 / double(n - 1);
  Eigen::MatrixXd Sxx = Xc.transpose() * Xc * scale;
  Eigen::MatrixXd Syy = Yc.transpose() * Yc * scale;
  Eigen::MatrixXd Sxy = Xc.transpose() * Yc * scale;

  const double rx = reg * Sxx.trace() / dx;
  const double ry = reg * Syy.trace() / dy;
  Eigen::MatrixXd Sxx_r = Sxx + rx * Eigen::MatrixXd::Identity(dx, dx);
  Eigen::MatrixXd Syy_r = Syy + ry * Eigen::MatrixXd::Identity(dy, dy);

  Eigen::LLT<Eigen::MatrixXd> lltx(Sxx_r), llty(Syy_r);
  AVC_CHECK_ARG(lltx.info() == Eigen::Success && llty.info() == Eigen::Success,
                "fit_cca: covariance is rank deficient; raise the regularization");

  // M = Lx^-1 Sxy Syy^-1 Syx Lx^-T, symmetric PSD with eigenvalues rho^2
  Eigen::MatrixXd t1 = lltx.matrixL().solve(Sxy);                   // dx x dy
  Eigen::MatrixXd t2 = llty.solve(Sxy.transpose());                 // dy x dx
  Eigen::MatrixXd z = t1 * t2;                                      // dx x dx
  Eigen::MatrixXd M = lltx.matrixL().solve(z.transpose()).transpose();
  M = 0.5 * (M + M.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
  AVC_CHECK_RUNTIME(eig.info() == Eigen::Success, "fit_cca: eigensolve failed");

  model.proj_x.resize(dx, n_components);
  model.proj_y.resize(dy, n_components);
  model.correlations.resize(size_t(n_components));
  std::vector<std::pair<double, int>> order;  // (sample correlation, component)
  Eigen::MatrixXd wx_all(dx, n_components), wy_all(dy, n_components);

  for (int c = 0; c < n_components; ++c) {
    // eigenvalues ascend; take from the top
    Eigen::VectorXd u = eig.eigenvectors().col(dx - 1 - c);
    Eigen::VectorXd wx = lltx.matrixL().transpose().solve(u);
    Eigen::VectorXd wy = llty.solve(Sxy.transpose() * wx);

    // unit training variance per component (raw covariance)
    auto unit_var = [&](Eigen::VectorXd& w, const Eigen::MatrixXd& S) {
      double v = w.dot(S * w);
      AVC_CHECK_ARG(v > 1e-300, "fit_cca: a component collapsed; raise the regularization");
      w /= std::sqrt(v);
    };
    unit_var(wx, Sxx);
    unit_var(wy, Syy);

    double corr = wx.dot(Sxy * wy);  // both projections have unit variance
    corr = std::clamp(corr, 0.0, 1.0);
    wx_all.col(c) = wx;
    wy_all.col(c) = wy;
    order.push_back({corr, c});
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int c = 0; c < n_components; ++c) {
    model.proj_x.col(c) = wx_all.col(order[size_t(c)].second);
    model.proj_y.col(c) = wy_all.col(order[size_t(c)].second);
    model.correlations[size_t(c)] = order[size_t(c)].first;
  }
  return model;
}

// Center and project, without row normalization.
inline Eigen::MatrixXd project_components(const CcaModel& model, const Eigen::MatrixXd& Z,
                                          CcaSide side) {
  const auto& mean = side == CcaSide::x ? model.mean_x : model.mean_y;
  const auto& proj = side == CcaSide::x ? model.proj_x : model.proj_y;
  AVC_CHECK_ARG(Z.cols() == proj.rows(), "cca project: input dim " << Z.cols()
                                                                   << " != model side dim "
                                                                   << proj.rows());
  return (Z.rowwise() - mean.transpose()) * proj;
}

// Center, project and L2-normalize each row (retrieval preprocessing).
inline Eigen::MatrixXd project(const CcaModel& model, const Eigen::MatrixXd& Z, CcaSide side) {
  Eigen::MatrixXd P = project_components(model, Z, side);
  for (int i = 0; i < P.rows(); ++i) {
    double n = P.row(i).norm();
    if (n > 1e-12) P.row(i) /= n;
  }
  return P;
}

// ---- persistence (same container as model checkpoints) --------------------------

inline void save_cca(const std::filesystem::path& path, const CcaModel& model) {
  Checkpoint ckpt;
  ckpt.variant = "cca";
  std::ostringstream cfg;
  cfg << "type=cca\ncomponents=" << model.components() << "\ndim_x=" << model.dim_x()
      << "\ndim_y=" << model.dim_y() << "\nregularization=" << model.regularization << "\n";
  ckpt.config_text = cfg.str();
  ckpt.config_digest = fnv1a64(ckpt.config_text);
  auto put_matrix = [&](const std::string& name, const Eigen::MatrixXd& m) {
    CheckpointBlock b;
    b.shape = {m.rows(), m.cols()};
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) b.data.push_back(float(m(r, c)));
    ckpt.blocks.emplace(name, std::move(b));
  };
  auto put_vector = [&](const std::string& name, const Eigen::VectorXd& v) {
    CheckpointBlock b;
    b.shape = {v.size()};
    for (int i = 0; i < v.size(); ++i) b.data.push_back(float(v(i)));
    ckpt.blocks.emplace(name, std::move(b));
  };
  put_vector("mean_x", model.mean_x);
  put_vector("mean_y", model.mean_y);
  put_matrix("proj_x", model.proj_x);
  put_matrix("proj_y", model.proj_y);
  CheckpointBlock corr;
  corr.shape = {int64_t(model.correlations.size())};
  for (double c : model.correlations) corr.data.push_back(float(c));
  ckpt.blocks.emplace("correlations", std::move(corr));
  save_checkpoint(path, ckpt);
}

inline CcaModel load_cca(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  AVC_CHECK_ARG(ckpt.variant == "cca",
                path.string() << " holds a '" << ckpt.variant << "' model, expected cca");
  auto get = [&](const std::string& name) -> const CheckpointBlock& {
    auto it = ckpt.blocks.find(name);
    AVC_CHECK_ARG(it != ckpt.blocks.end(), path.string() << ": missing block " << name);
    return it->second;
  };
  CcaModel model;
  const auto& mx = get("mean_x");
  model.mean_x.resize(int(mx.shape[0]));
  for (int i = 0; i < model.mean_x.size(); ++i) model.mean_x(i) = mx.data[size_t(i)];
  const auto& my = get("mean_y");
  model.mean_y.resize(int(my.shape[0]));
  for (int i = 0; i < model.mean_y.size(); ++i) model.mean_y(i) = my.data[size_t(i)];
  auto load_matrix = [&](const std::string& name, Eigen::MatrixXd& m) {
    const auto& b = get(name);
    AVC_CHECK_ARG(b.shape.size() == 2, path.string() << ": block " << name << " is not a matrix");
    m.resize(b.shape[0], b.shape[1]);
    size_t i = 0;
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) m(r, c) = b.data[i++];
  };
  load_matrix("proj_x", model.proj_x);
  load_matrix("proj_y", model.proj_y);
  const auto& corr = get("correlations");
  model.correlations.assign(corr.data.begin(), corr.data.end());
  std::istringstream cfg(ckpt.config_text);
  std::string line;
  while (std::getline(cfg, line))
    if (line.rfind("regularization=", 0) == 0)
      model.regularization = std::stod(line.substr(15));
  return model;
}

}  // namespace avc
