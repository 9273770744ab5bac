#include <catch2/catch_amalgamated.hpp>

#include "avclab/cca.hpp"

using namespace avc;
using Catch::Approx;

namespace {

Eigen::MatrixXd gaussian(int n, int d, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

// Independent route: explicit whitening by the inverse matrix square root of
// each regularized covariance, then an SVD of the whitened cross-covariance.
// Correlations are reported the same way the implementation reports them:
// sample correlations of the projected training pairs.
std::vector<double> whitened_svd_correlations(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                              int n_components, double reg) {
  const int n = int(X.rows());
  Eigen::MatrixXd Xc = X.rowwise() - X.colwise().mean();
  Eigen::MatrixXd Yc = Y.rowwise() - Y.colwise().mean();
  const double scale = 1.0 / double(n - 1);
  Eigen::MatrixXd Sxx = Xc.transpose() * Xc * scale;
  Eigen::MatrixXd Syy = Yc.transpose() * Yc * scale;
  Eigen::MatrixXd Sxy = Xc.transpose() * Yc * scale;
  Eigen::MatrixXd Sxx_r = Sxx + (reg * Sxx.trace() / double(X.cols())) *
                                    Eigen::MatrixXd::Identity(X.cols(), X.cols());
  Eigen::MatrixXd Syy_r = Syy + (reg * Syy.trace() / double(Y.cols())) *
                                    Eigen::MatrixXd::Identity(Y.cols(), Y.cols());

  auto inv_sqrt = [](const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    Eigen::VectorXd inv = eig.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    return Eigen::MatrixXd(eig.eigenvectors() * inv.asDiagonal() *
                           eig.eigenvectors().transpose());
  };
  Eigen::MatrixXd Wx = inv_sqrt(Sxx_r), Wy = inv_sqrt(Syy_r);
  Eigen::MatrixXd T = Wx * Sxy * Wy;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(T, Eigen::ComputeThinU | Eigen::ComputeThinV);

  std::vector<double> corrs;
  for (int c = 0; c < n_components && c < svd.singularValues().size(); ++c) {
    Eigen::VectorXd wx = Wx * svd.matrixU().col(c);
    Eigen::VectorXd wy = Wy * svd.matrixV().col(c);
    Eigen::VectorXd px = Xc * wx, py = Yc * wy;
    double corr = px.dot(py) / std::sqrt(px.squaredNorm() * py.squaredNorm());
    corrs.push_back(std::clamp(corr, 0.0, 1.0));
  }
  return corrs;
}

}  // namespace

TEST_CASE("identical paired data correlates perfectly", "[cca]") {
  auto X = gaussian(200, 6, 8);
  auto model = fit_cca(X, X, 6);
  REQUIRE(model.correlations.size() == 6);
  for (double c : model.correlations) CHECK(c == Approx(1.0).margin(1e-6));
}

TEST_CASE("independent noise decorrelates", "[cca]") {
  auto X = gaussian(10000, 8, 1);
  auto Y = gaussian(10000, 8, 2);
  auto model = fit_cca(X, Y, 8);
  for (double c : model.correlations) CHECK(c < 0.1);
}

TEST_CASE("a planted shared latent is recovered", "[cca]") {
  // one shared latent with theoretical top correlation 1/(1+s^2) = 0.9
  const int n = 4000;
  const double s = std::sqrt(1.0 / 0.9 - 1.0);
  Rng rng(77);
  Eigen::MatrixXd X(n, 2), Y(n, 2);
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    X(i, 0) = z + s * rng.normal();
    X(i, 1) = rng.normal();
    Y(i, 0) = z + s * rng.normal();
    Y(i, 1) = rng.normal();
  }
  auto model = fit_cca(X, Y, 2);
  CHECK(model.correlations[0] == Approx(0.9).margin(0.05));

  auto oracle = whitened_svd_correlations(X, Y, 2, model.regularization);
  for (size_t c = 0; c < 2; ++c)
    CHECK(model.correlations[c] == Approx(oracle[c]).margin(1e-6));
}

TEST_CASE("agreement with the whitened-SVD oracle on random problems", "[cca][oracle]") {
  for (auto [n, dx, dy, seed] :
       {std::tuple{300, 8, 5, 11ull}, {500, 16, 16, 12ull}, {900, 64, 32, 13ull},
        {1200, 64, 64, 14ull}}) {
    auto X = gaussian(n, dx, seed);
    // correlate Y with X through a random linear map plus noise
    auto noise = gaussian(n, dy, seed + 100);
    auto map = gaussian(dx, dy, seed + 200, 0.4);
    Eigen::MatrixXd Y = X * map + noise;
    int m = std::min(dx, dy);
    auto model = fit_cca(X, Y, m);
    auto oracle = whitened_svd_correlations(X, Y, m, model.regularization);
    REQUIRE(int(model.correlations.size()) == m);
    for (int c = 0; c < m; ++c) {
      INFO("n=" << n << " dx=" << dx << " dy=" << dy << " component " << c);
      CHECK(model.correlations[size_t(c)] == Approx(oracle[size_t(c)]).margin(1e-6));
    }
    // sorted non-increasing
    for (int c = 1; c < m; ++c)
      CHECK(model.correlations[size_t(c)] <= model.correlations[size_t(c - 1)] + 1e-12);
  }
}

TEST_CASE("projection contract", "[cca]") {
  auto X = gaussian(400, 6, 21);
  auto map = gaussian(6, 4, 22, 0.5);
  Eigen::MatrixXd Y = X * map + gaussian(400, 4, 23);
  auto model = fit_cca(X, Y, 3);

  SECTION("top component's sample correlation equals correlations[0]") {
    auto px = project_components(model, X, CcaSide::x);
    auto py = project_components(model, Y, CcaSide::y);
    Eigen::VectorXd a = px.col(0), b = py.col(0);
    a.array() -= a.mean();
    b.array() -= b.mean();
    double corr = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
    CHECK(corr == Approx(model.correlations[0]).margin(1e-6));
    // unit variance per component on the training set
    CHECK(a.squaredNorm() / double(X.rows() - 1) == Approx(1.0).margin(1e-9));
  }
  SECTION("projected rows are unit norm") {
    auto p = project(model, X, CcaSide::x);
    for (int i = 0; i < p.rows(); ++i) CHECK(p.row(i).norm() == Approx(1.0).margin(1e-9));
  }
  SECTION("dimension mismatch is fatal") {
    Eigen::MatrixXd bad(10, 5);
    bad.setZero();
    CHECK_THROWS_AS(project(model, bad, CcaSide::x), ConfigError);
  }
  SECTION("zero components are rejected at fit") {
    CHECK_THROWS_AS(fit_cca(X, Y, 0), ConfigError);
  }
}

TEST_CASE("component cap and rank deficiency", "[cca]") {
  auto X = gaussian(50, 8, 31);
  auto Y = gaussian(50, 8, 32);
  SECTION("n_components clamps with a warning") {
    std::ostringstream warn;
    auto model = fit_cca(X, Y, 32, 1e-4, warn);
    CHECK(model.components() == 8);
    CHECK(warn.str().find("clamping") != std::string::npos);
  }
  SECTION("rank-deficient data without regularization is fatal with a hint") {
    Eigen::MatrixXd Xdef(50, 8);
    Xdef.setZero();
    Xdef.col(0) = X.col(0);  // rank 1
    try {
      fit_cca(Xdef, Y, 2, 0.0);
      FAIL("expected a rank-deficiency error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("regularization") != std::string::npos);
    }
  }
}

TEST_CASE("invariance and symmetry", "[cca]") {
  auto X = gaussian(600, 6, 41);
  auto map = gaussian(6, 6, 42, 0.5);
  Eigen::MatrixXd Y = X * map + gaussian(600, 6, 43);

  SECTION("invertible affine maps of X leave correlations unchanged") {
    Eigen::MatrixXd A = gaussian(6, 6, 44, 0.4) + 2.0 * Eigen::MatrixXd::Identity(6, 6);
    Eigen::MatrixXd Xa = (X * A).rowwise() + gaussian(1, 6, 45).row(0);
    auto m1 = fit_cca(X, Y, 4);
    auto m2 = fit_cca(Xa, Y, 4);
    for (size_t c = 0; c < 4; ++c)
      CHECK(m1.correlations[c] == Approx(m2.correlations[c]).margin(1e-4));
  }
  SECTION("swapping the two views swaps the projections") {
    auto m1 = fit_cca(X, Y, 4);
    auto m2 = fit_cca(Y, X, 4);
    for (size_t c = 0; c < 4; ++c)
      CHECK(m1.correlations[c] == Approx(m2.correlations[c]).margin(1e-8));
    // the x-side of one matches the y-side of the other up to sign
    for (int c = 0; c < 4; ++c) {
      double dot = std::abs(m1.proj_x.col(c).normalized().dot(m2.proj_y.col(c).normalized()));
      CHECK(dot == Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("cca model persistence round trip", "[cca]") {
  auto X = gaussian(300, 10, 51);
  auto map = gaussian(10, 7, 52, 0.5);
  Eigen::MatrixXd Y = X * map + gaussian(300, 7, 53);
  auto model = fit_cca(X, Y, 5);

  auto tmp = std::filesystem::temp_directory_path() / "avclab_cca_test";
  ensure_dir(tmp);
  save_cca(tmp / "model.avck", model);
  auto loaded = load_cca(tmp / "model.avck");
  CHECK(loaded.components() == 5);
  CHECK(loaded.dim_x() == 10);
  CHECK(loaded.dim_y() == 7);
  CHECK(loaded.regularization == Approx(model.regularization));
  for (size_t c = 0; c < 5; ++c)
    CHECK(loaded.correlations[c] == Approx(model.correlations[c]).margin(1e-6));
  // float32 storage: projections agree to float precision
  auto p1 = project(model, X, CcaSide::x);
  auto p2 = project(loaded, X, CcaSide::x);
  CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-4);
}
