#include <doctest.h>

#include <random>

#include "arx_oracle.hpp"
#include "rarx/errors.hpp"
#include "rarx/rls.hpp"

using namespace rarx;
using rarx::testing::arx_data;
using rarx::testing::random_arx;
using rarx::testing::rel_frobenius;

TEST_CASE("config validation") {
  ArxConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.regressor_size() == 12);
  CHECK(c.burn_in() == 24);
  c.lambda = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.lambda = 1.0 + 1e-12;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.order = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.p0_scale = -1;
  CHECK_THROWS_AS(init_identifier(c), ConfigError);
}

TEST_CASE("init gives zero theta and scaled identity P") {
  ArxConfig c;
  const auto s = init_identifier(c);
  CHECK(s.theta.rows() == 2);
  CHECK(s.theta.cols() == 12);
  CHECK(s.theta.isZero());
  CHECK(s.P.isApprox(1e4 * Eigen::MatrixXd::Identity(12, 12)));
  CHECK_FALSE(s.calibrated());
}

TEST_CASE("rejected updates leave the state untouched") {
  ArxConfig c{1, 1, 1, 0.99, 100.0};
  auto s = init_identifier(c);
  Eigen::VectorXd phi(2);
  phi << 1.0, -0.5;
  Eigen::VectorXd y(1);
  y << 0.3;
  rls_update(s, y, phi);
  const auto before = s;

  Eigen::VectorXd bad = phi;
  bad(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rls_update(s, y, bad), NumericalError);
  Eigen::VectorXd y_inf(1);
  y_inf << std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rls_update(s, y_inf, phi), NumericalError);
  CHECK_THROWS_AS(rls_update(s, y, Eigen::VectorXd::Ones(3)), DimensionError);
  CHECK_THROWS_AS(rls_update(s, Eigen::VectorXd::Ones(2), phi), DimensionError);

  CHECK(s.theta == before.theta);
  CHECK(s.P == before.P);
  CHECK(s.sample_count == before.sample_count);
}

TEST_CASE("degenerate gain denominator is rejected") {
  ArxConfig c{1, 1, 1, 1.0, 1.0};
  auto s = init_identifier(c);
  // Indefinite P makes lambda + phi' P phi vanish.
  s.P = Eigen::MatrixXd::Identity(2, 2);
  s.P(0, 0) = -2.0;
  Eigen::VectorXd phi(2);
  phi << 1.0, 1.0;
  const auto before = s.P;
  CHECK_THROWS_AS(rls_update(s, Eigen::VectorXd::Zero(1), phi), NumericalError);
  CHECK(s.P == before);
}

TEST_CASE("lambda = 1, noiseless rho = 2 SISO data: RLS matches batch LS") {
  std::mt19937_64 rng(11);
  const auto sys = random_arx(rng, 2, 1, 1);
  const auto data = arx_data(sys, 200, rng);
  // A diffuse prior makes the recursive and batch problems coincide.
  ArxConfig c{2, 1, 1, 1.0, 1e8};
  auto s = init_identifier(c);
  for (const auto& o : data) rls_update(s, o.y, o.phi);
  const auto batch = batch_weighted_ls(data, 1.0);
  CHECK(rel_frobenius(s.theta, batch) < 1e-8);
}

TEST_CASE("batch LS interpolates exact data") {
  std::mt19937_64 rng(5);
  const auto sys = random_arx(rng, 3, 2, 2);
  const auto data = arx_data(sys, 100, rng);
  const auto theta = batch_weighted_ls(data, 1.0);
  CHECK((theta - sys.theta).norm() < 1e-10);
  CHECK((batch_weighted_ls(data, 0.95) - sys.theta).norm() < 1e-10);
}

TEST_CASE("batch LS weights the newest sample most") {
  // Two inconsistent scalar observations: the weighted mean favours the last.
  std::vector<Observation> h(2);
  h[0] = {Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 1.0)};
  h[1] = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0)};
  // argmin 0.5 t^2 + (1 - t)^2 = 2/3
  CHECK(batch_weighted_ls(h, 0.5)(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("batch LS errors") {
  CHECK_THROWS_AS(batch_weighted_ls({}, 1.0), InsufficientDataError);
  std::vector<Observation> h(5, {Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(2)});
  CHECK_THROWS_AS(batch_weighted_ls(h, 1.0), SingularityError);
}

TEST_CASE("noiseless consistency: error shrinks to below 1e-6") {
  std::mt19937_64 rng(21);
  const auto sys = random_arx(rng, 3, 2, 2);
  const auto data = arx_data(sys, 20000, rng);
  ArxConfig c{3, 2, 2, 0.999, 1e4};
  auto s = init_identifier(c);
  double last_checkpoint = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < data.size(); ++k) {
    rls_update(s, data[k].y, data[k].phi);
    if (s.calibrated() && (k + 1) % 2000 == 0) {
      const double err = (s.theta - sys.theta).norm();
      CHECK(err <= last_checkpoint);
      last_checkpoint = err;
    }
  }
  CHECK((s.theta - sys.theta).norm() < 1e-6);
}

TEST_CASE("predict") {
  ArxConfig c{1, 1, 1, 1.0, 1.0};
  auto s = init_identifier(c);
  s.theta << 2.0, -1.0;
  Eigen::VectorXd phi(2);
  phi << 3.0, 4.0;
  CHECK(predict(s, phi)(0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(predict(s, Eigen::VectorXd::Ones(3)), DimensionError);
}
