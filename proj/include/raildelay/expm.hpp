#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "raildelay/errors.hpp"

namespace raildelay::expm {

namespace detail {

// Degree-m diagonal Pade approximant r(A) = (V-U)^{-1}(V+U) with U odd and V
// even in A.
inline Eigen::MatrixXd pade_low(const Eigen::MatrixXd& a, const std::vector<double>& b) {
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd a2 = a * a;
  Eigen::MatrixXd u_poly = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);  // a2^j
  for (std::size_t j = 0; 2 * j + 1 < b.size(); ++j) {
    u_poly.noalias() += b[2 * j + 1] * power;
    v.noalias() += b[2 * j] * power;
    power = power * a2;
  }
  const Eigen::MatrixXd u = a * u_poly;
  return (v - u).partialPivLu().solve(v + u);
}

inline Eigen::MatrixXd pade13(const Eigen::MatrixXd& a) {
  static const double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                             1187353796428800.0,  129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,       1323241920.0,
                             40840800.0,          960960.0,            16380.0,
                             182.0,               1.0};
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd a2 = a * a;
  const Eigen::MatrixXd a4 = a2 * a2;
  const Eigen::MatrixXd a6 = a4 * a2;
  const Eigen::MatrixXd u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
           b[3] * a2 + b[1] * id);
  const Eigen::MatrixXd v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                            b[4] * a4 + b[2] * a2 + b[0] * id;
  return (v - u).partialPivLu().solve(v + u);
}

inline double norm_1(const Eigen::MatrixXd& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace detail

// Matrix exponential by scaling and squaring with diagonal Pade approximants
// (degrees 3/5/7/9/13 selected by the 1-norm).
inline Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw NumericError("matrix_exp: matrix must be square");
  if (!a.allFinite()) throw NumericError("matrix_exp: matrix has non-finite entries");
  const double norm = detail::norm_1(a);

  static const std::vector<double> b3 = {120.0, 60.0, 12.0, 1.0};
  static const std::vector<double> b5 = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
  static const std::vector<double> b7 = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                         25200.0,    1512.0,    56.0,      1.0};
  static const std::vector<double> b9 = {17643225600.0, 8821612800.0, 2075673600.0,
                                         302702400.0,   30270240.0,   2162160.0,
                                         110880.0,      3960.0,       90.0,
                                         1.0};

  if (norm <= 1.495585217958292e-2) return detail::pade_low(a, b3);
  if (norm <= 2.539398330063230e-1) return detail::pade_low(a, b5);
  if (norm <= 9.504178996162932e-1) return detail::pade_low(a, b7);
  if (norm <= 2.097847961257068e0) return detail::pade_low(a, b9);

  constexpr double theta13 = 5.371920351148152;
  int squarings = 0;
  Eigen::MatrixXd scaled = a;
  if (norm > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / theta13)));
    scaled = a / std::pow(2.0, squarings);
  }
  Eigen::MatrixXd r = detail::pade13(scaled);
  for (int k = 0; k < squarings; ++k) r = r * r;
  return r;
}

// Frechet derivative of the exponential in direction e, via the block
// identity exp([[a, e], [0, a]]) = [[exp(a), L(a, e)], [0, exp(a)]]. Returns
// (exp(a), L(a, e)).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> matrix_exp_with_frechet(
    const Eigen::MatrixXd& a, const Eigen::MatrixXd& e) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.topRightCorner(n, n) = e;
  block.bottomRightCorner(n, n) = a;
  const Eigen::MatrixXd big = matrix_exp(block);
  return {big.topLeftCorner(n, n), big.topRightCorner(n, n)};
}

}  // namespace raildelay::expm
