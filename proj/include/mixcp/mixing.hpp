#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mixcp/error.hpp"
#include "mixcp/random.hpp"

namespace mixcp {

/// Dense row-major square matrix; just enough linear algebra for small chains.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t k, double fill = 0.0) : k_(k), a_(k * k, fill) {}
  SquareMatrix(std::size_t k, std::vector<double> rows) : k_(k), a_(std::move(rows)) {
    require(a_.size() == k * k, Errc::size_mismatch, "matrix storage is not k*k");
  }

  static SquareMatrix identity(std::size_t k) {
    SquareMatrix m(k);
    for (std::size_t i = 0; i < k; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t size() const noexcept { return k_; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return a_[i * k_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return a_[i * k_ + j]; }

  friend SquareMatrix operator*(const SquareMatrix& l, const SquareMatrix& r) {
    const std::size_t k = l.k_;
    SquareMatrix out(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t m = 0; m < k; ++m) {
        const double lim = l(i, m);
        if (lim == 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) out(i, j) += lim * r(m, j);
      }
    return out;
  }

 private:
  std::size_t k_ = 0;
  std::vector<double> a_;
};

/// P^r by repeated squaring.
inline SquareMatrix matrix_power(SquareMatrix base, std::uint64_t r) {
  SquareMatrix acc = SquareMatrix::identity(base.size());
  while (r > 0) {
    if (r & 1U) acc = acc * base;
    r >>= 1U;
    if (r > 0) base = base * base;
  }
  return acc;
}

inline void check_stochastic(const SquareMatrix& p) {
  require(p.size() > 0, Errc::not_stochastic, "empty transition matrix");
  for (std::size_t i = 0; i < p.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      require(p(i, j) >= 0.0 && std::isfinite(p(i, j)), Errc::not_stochastic,
              "negative or non-finite transition probability");
      row += p(i, j);
    }
    require(std::abs(row - 1.0) <= 1e-12, Errc::not_stochastic,
            "row " + std::to_string(i) + " sums to " + std::to_string(row));
  }
}

namespace detail {

// Solves pi (P - I) = 0 with sum(pi) = 1 by Gaussian elimination on the
// transposed system, last equation replaced by the normalisation.
inline std::vector<double> stationary_direct(const SquareMatrix& p) {
  const std::size_t k = p.size();
  std::vector<double> a(k * (k + 1), 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * (k + 1) + j]; };
  for (std::size_t i = 0; i + 1 < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) at(i, j) = p(j, i) - (i == j ? 1.0 : 0.0);
  }
  for (std::size_t j = 0; j < k; ++j) at(k - 1, j) = 1.0;
  at(k - 1, k) = 1.0;

  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < k; ++i)
      if (std::abs(at(i, col)) > std::abs(at(piv, col))) piv = i;
    require(std::abs(at(piv, col)) > 1e-12, Errc::no_unique_stationary,
            "stationary system is singular");
    if (piv != col)
      for (std::size_t j = 0; j <= k; ++j) std::swap(at(piv, j), at(col, j));
    for (std::size_t i = 0; i < k; ++i) {
      if (i == col) continue;
      const double f = at(i, col) / at(col, col);
      if (f == 0.0) continue;
      for (std::size_t j = col; j <= k; ++j) at(i, j) -= f * at(col, j);
    }
  }
  std::vector<double> pi(k);
  for (std::size_t i = 0; i < k; ++i) pi[i] = at(i, k) / at(i, i);
  return pi;
}

inline std::vector<double> stationary_power(const SquareMatrix& p) {
  const std::size_t k = p.size();
  std::vector<double> pi(k, 1.0 / static_cast<double>(k));
  std::vector<double> next(k);
  for (int iter = 0; iter < 1000000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) next[j] += pi[i] * p(i, j);
    double diff = 0.0;
    double norm = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      diff = std::max(diff, std::abs(next[j] - pi[j]));
      norm = std::max(norm, std::abs(next[j]));
    }
    pi.swap(next);
    if (diff <= 1e-14 * norm) return pi;
  }
  fail(Errc::no_unique_stationary, "power iteration did not converge");
}

}  // namespace detail

/// Stationary distribution of a finite chain. Direct solve up to 64 states,
/// power iteration beyond.
inline std::vector<double> stationary_distribution(const SquareMatrix& p) {
  check_stochastic(p);
  std::vector<double> pi =
      p.size() <= 64 ? detail::stationary_direct(p) : detail::stationary_power(p);
  for (double v : pi)
    require(v > -1e-12, Errc::no_unique_stationary, "stationary solution has negative mass");
  for (double& v : pi) v = std::max(v, 0.0);
  return pi;
}

/// beta(r) = sum_x pi(x) * 1/2 sum_y |P^r(x,y) - pi(y)|, given pi.
inline double markov_beta(const SquareMatrix& p, const std::vector<double>& pi, std::uint64_t r) {
  const SquareMatrix pr = matrix_power(p, r);
  double beta = 0.0;
  for (std::size_t x = 0; x < p.size(); ++x) {
    double tv = 0.0;
    for (std::size_t y = 0; y < p.size(); ++y) tv += std::abs(pr(x, y) - pi[y]);
    beta += pi[x] * 0.5 * tv;
  }
  return std::clamp(beta, 0.0, 1.0);
}

inline double markov_beta(const SquareMatrix& p, std::uint64_t r) {
  return markov_beta(p, stationary_distribution(p), r);
}

/// Two-state chain with P(0 -> 1) = p and P(1 -> 0) = q.
struct TwoStateChain {
  double p;
  double q;

  TwoStateChain(double p_, double q_) : p(p_), q(q_) {
    require(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0, Errc::bad_parameter,
            "two-state transition probabilities must lie in (0,1)");
  }

  SquareMatrix transition() const { return SquareMatrix(2, {1.0 - p, p, q, 1.0 - q}); }
  std::vector<double> pi() const { return {q / (p + q), p / (p + q)}; }
};

// -- Gaussian machinery for AR(1) -------------------------------------------

/// Total variation between N(mu1, s1^2) and N(mu2, s2^2), from the closed-form
/// density crossing points.
inline double gaussian_tv(double mu1, double s1, double mu2, double s2) {
  if (s1 > s2) {
    std::swap(mu1, mu2);
    std::swap(s1, s2);
  }
  if (s2 - s1 <= 1e-15 * s2) {
    const double z = std::abs(mu1 - mu2) / (2.0 * s1);
    return std::clamp(1.0 - std::erfc(z / std::sqrt(2.0)), 0.0, 1.0);
  }
  // f1 (narrower) exceeds f2 exactly between the two roots.
  const double a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
  const double b = mu1 / (s1 * s1) - mu2 / (s2 * s2);
  const double c = 0.5 * mu2 * mu2 / (s2 * s2) - 0.5 * mu1 * mu1 / (s1 * s1) + std::log(s2 / s1);
  const double disc = b * b - 4.0 * a * c;
  const double sq = std::sqrt(std::max(disc, 0.0));
  double lo;
  double hi;
  if (b == 0.0) {
    hi = std::sqrt(-c / a);
    lo = -hi;
  } else {
    const double qv = -0.5 * (b + std::copysign(sq, b));
    lo = qv / a;
    hi = c / qv;
    if (lo > hi) std::swap(lo, hi);
  }
  auto mass = [](double l, double h, double mu, double s) {
    return normal_cdf((h - mu) / s) - normal_cdf((l - mu) / s);
  };
  return std::clamp(mass(lo, hi, mu1, s1) - mass(lo, hi, mu2, s2), 0.0, 1.0);
}

/// Composite Gauss-Legendre rule over [-half_width_sd, +half_width_sd]
/// stationary standard deviations.
struct QuadratureGrid {
  double half_width_sd = 8.0;
  std::size_t panels = 64;
  std::size_t order = 8;

  std::size_t nodes() const noexcept { return panels * order; }
};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(std::size_t n) {
  std::vector<double> x(n);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = std::cos(M_PI * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = z;
      for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * static_cast<double>(k) - 1.0) * z * p1 -
                           (static_cast<double>(k) - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/// beta(r) of a stationary Gaussian AR(1) by quadrature of the r-step kernel's
/// total variation from the stationary law, integrated against that law.
inline double ar1_beta(double lambda, std::uint64_t r, const QuadratureGrid& grid = {}) {
  require(std::abs(lambda) < 1.0, Errc::non_stationary_lambda,
          "AR(1) coefficient must satisfy |lambda| < 1");
  require(r >= 1, Errc::bad_parameter, "lag must be positive");
  require(grid.panels >= 1 && grid.order >= 1 && grid.half_width_sd > 0.0, Errc::bad_parameter,
          "invalid quadrature grid");
  if (lambda == 0.0) return 0.0;

  const double lam_r = std::pow(lambda, static_cast<double>(r));
  const double var_inf = 1.0 / (1.0 - lambda * lambda);
  const double sd_inf = std::sqrt(var_inf);
  // (1 - lambda^{2r}) / (1 - lambda^2), computed without cancellation.
  const double var_r = -std::expm1(2.0 * static_cast<double>(r) * std::log(std::abs(lambda))) * var_inf;
  const double sd_r = std::sqrt(var_r);

  const auto [gx, gw] = gauss_legendre(grid.order);
  const double lo = -grid.half_width_sd * sd_inf;
  const double width = 2.0 * grid.half_width_sd * sd_inf / static_cast<double>(grid.panels);
  double total = 0.0;
  for (std::size_t p = 0; p < grid.panels; ++p) {
    const double a = lo + width * static_cast<double>(p);
    for (std::size_t k = 0; k < grid.order; ++k) {
      const double x = a + 0.5 * width * (gx[k] + 1.0);
      const double density = normal_pdf(x / sd_inf) / sd_inf;
      total += 0.5 * width * gw[k] * density * gaussian_tv(lam_r * x, sd_r, 0.0, sd_inf);
    }
  }
  return std::clamp(total, 0.0, 1.0);
}

// -- Profiles -----------------------------------------------------------------

enum class Provenance { exact_markov, ar1_numeric, geometric, polynomial, user_table };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::exact_markov: return "exact_markov";
    case Provenance::ar1_numeric: return "ar1_numeric";
    case Provenance::geometric: return "geometric";
    case Provenance::polynomial: return "polynomial";
    case Provenance::user_table: return "user_table";
  }
  return "unknown";
}

/// A nonincreasing lag -> beta(lag) map in [0, 1].
class MixingProfile {
 public:
  using Fn = std::function<double(std::uint64_t)>;

  MixingProfile(Provenance provenance, std::string description, Fn fn)
      : provenance_(provenance), description_(std::move(description)), fn_(std::move(fn)) {}

  /// beta(r) = min(1, c * rho^r).
  static MixingProfile geometric(double c, double rho) {
    require(c > 0.0 && rho > 0.0 && rho < 1.0, Errc::bad_parameter,
            "geometric profile needs c > 0 and rho in (0,1)");
    std::ostringstream d;
    d << "geometric(c=" << c << ",rho=" << rho << ")";
    return {Provenance::geometric, d.str(), [c, rho](std::uint64_t r) {
              return std::min(1.0, c * std::pow(rho, static_cast<double>(r)));
            }};
  }

  /// beta(r) = min(1, r^-b).
  static MixingProfile polynomial(double b) {
    require(b > 1.0, Errc::bad_parameter, "polynomial profile needs b > 1");
    std::ostringstream d;
    d << "polynomial(b=" << b << ")";
    return {Provenance::polynomial, d.str(), [b](std::uint64_t r) {
              return std::min(1.0, std::pow(static_cast<double>(r), -b));
            }};
  }

  /// Tabulated (r, beta) pairs with r strictly increasing from 1. Lags between
  /// entries take the value of the preceding entry, lags beyond the last entry
  /// take the last value; both are valid upper bounds for a nonincreasing beta.
  static MixingProfile table(std::vector<std::pair<std::uint64_t, double>> rows) {
    require(!rows.empty(), Errc::bad_parameter, "empty mixing table");
    require(rows.front().first == 1, Errc::bad_parameter, "mixing table must start at r = 1");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double b = rows[i].second;
      require(b >= 0.0 && b <= 1.0, Errc::bad_parameter, "beta outside [0,1]");
      if (i > 0) {
        require(rows[i].first > rows[i - 1].first, Errc::bad_parameter,
                "lags must be strictly increasing");
        require(b <= rows[i - 1].second, Errc::bad_parameter, "beta must be nonincreasing in r");
      }
    }
    auto shared = std::make_shared<const std::vector<std::pair<std::uint64_t, double>>>(std::move(rows));
    return {Provenance::user_table, "user_table(" + std::to_string(shared->size()) + " rows)",
            [shared](std::uint64_t r) {
              auto it = std::upper_bound(
                  shared->begin(), shared->end(), r,
                  [](std::uint64_t v, const auto& row) { return v < row.first; });
              return it == shared->begin() ? 1.0 : std::prev(it)->second;
            }};
  }

  /// beta identically equal to v (v = 0 is the independent case).
  static MixingProfile constant(double v) {
    MixingProfile p = table({{1, v}});
    std::ostringstream d;
    d << "constant(" << v << ")";
    p.description_ = d.str();
    return p;
  }

  static MixingProfile markov(const SquareMatrix& transition) {
    auto pi = stationary_distribution(transition);
    auto shared = std::make_shared<const std::pair<SquareMatrix, std::vector<double>>>(transition,
                                                                                       std::move(pi));
    return {Provenance::exact_markov, "markov(" + std::to_string(transition.size()) + " states)",
            [shared](std::uint64_t r) { return markov_beta(shared->first, shared->second, r); }};
  }

  /// Profile of the two-state chain; also an upper bound for the hidden
  /// Markov model built on top of it.
  static MixingProfile two_state(double p, double q) {
    MixingProfile prof = markov(TwoStateChain(p, q).transition());
    std::ostringstream d;
    d << "two_state(p=" << p << ",q=" << q << ")";
    prof.description_ = d.str();
    return prof;
  }

  static MixingProfile ar1(double lambda, QuadratureGrid grid = {}) {
    require(std::abs(lambda) < 1.0, Errc::non_stationary_lambda, "|lambda| must be < 1");
    std::ostringstream d;
    d << "ar1(lambda=" << lambda << ")";
    return {Provenance::ar1_numeric, d.str(),
            [lambda, grid](std::uint64_t r) { return ar1_beta(lambda, r, grid); }};
  }

  double operator()(std::uint64_t r) const {
    require(r >= 1, Errc::bad_parameter, "mixing lag must be positive");
    return fn_(r);
  }

  /// beta(0..n) with beta(0) := 1, made nonincreasing by a running minimum so
  /// that round-off in numerically integrated profiles cannot break monotonicity.
  std::vector<double> tabulate(std::size_t n) const {
    std::vector<double> out(n + 1);
    out[0] = 1.0;
    for (std::size_t r = 1; r <= n; ++r) out[r] = std::min(out[r - 1], std::clamp(fn_(r), 0.0, 1.0));
    return out;
  }

  Provenance provenance() const noexcept { return provenance_; }
  const std::string& description() const noexcept { return description_; }

 private:
  Provenance provenance_;
  std::string description_;
  Fn fn_;
};

/// Reads `r,beta` lines (blank lines and '#' comments skipped).
inline MixingProfile parse_profile_table(std::istream& in) {
  std::vector<std::pair<std::uint64_t, double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, Errc::parse_error,
            "line " + std::to_string(line_no) + ": expected `r,beta`");
    try {
      std::size_t used = 0;
      const std::string r_txt = line.substr(0, comma);
      const std::string b_txt = line.substr(comma + 1);
      const long long r = std::stoll(r_txt, &used);
      require(r >= 1, Errc::parse_error, "line " + std::to_string(line_no) + ": lag must be >= 1");
      const double b = std::stod(b_txt, &used);
      rows.emplace_back(static_cast<std::uint64_t>(r), b);
    } catch (const std::logic_error&) {
      fail(Errc::parse_error, "line " + std::to_string(line_no) + ": not a number");
    }
  }
  return MixingProfile::table(std::move(rows));
}

inline MixingProfile load_profile_table(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::parse_error, "cannot open " + path);
  return parse_profile_table(in);
}

}  // namespace mixcp
