#pragma once

// Feasibility-driven DDP over a generic discrete optimal-control problem.
//
// A problem type P provides:
//   using State
//   std::size_t horizon() const                      number of running nodes T
//   const State& initial_state() const
//   Eigen::Index ndx() const, nu() const
//   State integrate(const State& x, const VectorX& dx) const      x ⊕ dx
//   VectorX difference(const State& x, const State& y) const      y ⊖ x
//   double running(std::size_t k, const State& x, const VectorX& u, State& next) const
//   void running_derivatives(std::size_t k, const State& x, const VectorX& u, NodeDerivatives<State>& d) const
//   double terminal(const State& x) const
//   void terminal_derivatives(const State& x, NodeDerivatives<State>& d) const
//   bool bounded() const, const VectorX& control_lower() const, control_upper() const
//
// When the problem is bounded and squashing is enabled the solver optimizes a
// raw decision z per node and hands s(z) to the problem.

#include <Eigen/Cholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "uamoc/errors.hpp"
#include "uamoc/liealg.hpp"

namespace uamoc {

template <class State>
struct NodeDerivatives {
  State next;
  MatrixX fx, fu;
  double cost = 0.0;
  VectorX lx, lu;
  MatrixX lxx, lux, luu;
};

struct SolverSettings {
  int max_iters = 100;
  double grad_tol = 1e-5;
  double gap_tol = 1e-9;
  double reg_init = 1e-9;
  double reg_min = 1e-9;
  double reg_max = 1e9;
  std::vector<double> alphas = default_alphas();
  double accept_fraction = 0.1;
  bool squash = true;
  double squash_regularization = 1e-6;
  double stationary_tol = 1e-12;  // steps predicted to gain less are accepted as round-off

  static std::vector<double> default_alphas() {
    std::vector<double> a;
    for (int i = 0; i <= 10; ++i) a.push_back(std::ldexp(1.0, -i));
    return a;
  }

  void validate() const {
    if (alphas.empty() || alphas.front() != 1.0) throw ValidationError("solver alphas must start at 1");
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (!(alphas[i] > 0.0 && alphas[i] <= 1.0)) throw ValidationError("solver alphas must lie in (0, 1]");
      if (i > 0 && !(alphas[i] < alphas[i - 1])) throw ValidationError("solver alphas must be sorted descending");
    }
    if (!(reg_min <= reg_init && reg_init <= reg_max)) throw ValidationError("solver regularization bounds out of order");
  }
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double gap = 0.0;
  double grad = 0.0;
  double reg = 0.0;
  double alpha = 0.0;  // 0 when every step was rejected
  double expected = 0.0;
  double actual = 0.0;
};

template <class State>
struct SolverResult {
  std::vector<State> X;
  std::vector<VectorX> U;  // controls applied to the dynamics
  std::vector<VectorX> Z;  // raw decisions; equal to U without squashing
  std::vector<VectorX> k;  // feedforward, in decision space
  std::vector<MatrixX> K;  // feedback on tangent state error, in decision space
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  double gap_inf_norm = 0.0;
  double grad_inf_norm = 0.0;
  double solve_seconds = 0.0;
  std::string stop_reason;
  std::vector<IterationRecord> log;
};

// ---------------------------------------------------------------------------
// Squashing

/// s(z) = l + (u - l) σ(4z / (u - l)), element-wise.
class Squash {
 public:
  Squash() = default;
  Squash(VectorX lower, VectorX upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size()) throw DimensionMismatch("squash bounds have different sizes");
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
      if (!std::isfinite(lower_(i)) || !std::isfinite(upper_(i)) || !(upper_(i) > lower_(i))) {
        throw ValidationError("squash bounds must be finite with lower < upper");
      }
    }
  }

  Eigen::Index size() const { return lower_.size(); }
  const VectorX& lower() const { return lower_; }
  const VectorX& upper() const { return upper_; }

  VectorX operator()(const VectorX& z) const {
    VectorX u(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double r = upper_(i) - lower_(i);
      // keep the open range under rounding once σ saturates in double precision
      u(i) = std::clamp(lower_(i) + r * sigmoid(4.0 * z(i) / r), std::nextafter(lower_(i), upper_(i)),
                        std::nextafter(upper_(i), lower_(i)));
    }
    return u;
  }

  /// Diagonal of ds/dz.
  VectorX jacobian(const VectorX& z) const {
    VectorX d(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double s = sigmoid(4.0 * z(i) / (upper_(i) - lower_(i)));
      d(i) = 4.0 * s * (1.0 - s);
    }
    return d;
  }

  /// Preimage of u, with u pulled inside the box by a relative margin first.
  VectorX inverse(const VectorX& u, double margin = 1e-6) const {
    VectorX z(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const double r = upper_(i) - lower_(i);
      const double p = std::clamp((u(i) - lower_(i)) / r, margin, 1.0 - margin);
      z(i) = r / 4.0 * std::log(p / (1.0 - p));
    }
    return z;
  }

 private:
  static double sigmoid(double a) {
    // stable for large |a|
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
  }

  VectorX lower_, upper_;
};

// ---------------------------------------------------------------------------
// FDDP

template <class Problem>
class Fddp {
 public:
  using State = typename Problem::State;

  struct BackwardResult {
    double dv1 = 0.0;  // Σ kᵀ Q_u
    double dv2 = 0.0;  // Σ kᵀ Q_uu k
    double grad_inf = 0.0;
  };

  Fddp(const Problem& problem, SolverSettings settings = {}) : problem_(problem), settings_(std::move(settings)) {
    settings_.validate();
    const std::size_t T = problem_.horizon();
    const Eigen::Index nx = problem_.ndx();
    const Eigen::Index nu = problem_.nu();
    squashing_ = settings_.squash && problem_.bounded();
    if (squashing_) squash_ = Squash(problem_.control_lower(), problem_.control_upper());
    X_.assign(T + 1, problem_.initial_state());
    Z_.assign(T, VectorX::Zero(nu));
    k_.assign(T, VectorX::Zero(nu));
    K_.assign(T, MatrixX::Zero(nu, nx));
    Vx_.assign(T + 1, VectorX::Zero(nx));
    Vxx_.assign(T + 1, MatrixX::Zero(nx, nx));
    Qu_.assign(T, VectorX::Zero(nu));
    Quu_.assign(T, MatrixX::Zero(nu, nu));
    gaps_.assign(T + 1, VectorX::Zero(nx));
    data_.resize(T + 1);
  }

  const Problem& problem() const { return problem_; }
  const SolverSettings& settings() const { return settings_; }
  bool squashing() const { return squashing_; }
  const Squash& squash() const { return squash_; }
  const std::vector<State>& xs() const { return X_; }
  const std::vector<VectorX>& zs() const { return Z_; }
  const std::vector<VectorX>& gains_k() const { return k_; }
  const std::vector<MatrixX>& gains_K() const { return K_; }
  const std::vector<VectorX>& gaps() const { return gaps_; }
  double cost() const { return cost_; }
  double gap_inf_norm() const { return gap_inf_; }
  bool feasible() const { return feasible_; }

  VectorX control(const VectorX& z) const { return squashing_ ? squash_(z) : z; }
  VectorX decision(const VectorX& u) const { return squashing_ ? squash_.inverse(u) : u; }

  /// Sets the current iterate. Controls are given in control space.
  void set_candidate(const std::vector<State>& X, const std::vector<VectorX>& U) {
    const std::size_t T = problem_.horizon();
    if (X.size() != T + 1 || U.size() != T) {
      throw DimensionMismatch("initial guess needs " + std::to_string(T + 1) + " states and " + std::to_string(T) +
                              " controls");
    }
    X_ = X;
    for (std::size_t t = 0; t < T; ++t) {
      if (U[t].size() != problem_.nu()) throw DimensionMismatch("initial guess control has the wrong size");
      Z_[t] = decision(U[t]);
    }
    have_derivatives_ = false;
  }

  /// Same as set_candidate but with raw decisions.
  void set_candidate_decisions(const std::vector<State>& X, const std::vector<VectorX>& Z) {
    if (X.size() != problem_.horizon() + 1 || Z.size() != problem_.horizon()) {
      throw DimensionMismatch("initial guess has the wrong length");
    }
    X_ = X;
    Z_ = Z;
    have_derivatives_ = false;
  }

  /// Evaluates dynamics, costs, derivatives and gaps along the current iterate.
  void calc_derivatives() {
    const std::size_t T = problem_.horizon();
    const double w = settings_.squash_regularization;
    cost_ = 0.0;
    gaps_[0] = problem_.difference(X_[0], problem_.initial_state());
    for (std::size_t t = 0; t < T; ++t) {
      auto& d = data_[t];
      problem_.running_derivatives(t, X_[t], control(Z_[t]), d);
      if (squashing_) {
        const VectorX D = squash_.jacobian(Z_[t]);
        d.fu = d.fu * D.asDiagonal();
        d.lu = D.cwiseProduct(d.lu) + 2.0 * w * Z_[t];
        d.luu = D.asDiagonal() * d.luu * D.asDiagonal();
        d.luu.diagonal().array() += 2.0 * w;
        d.lux = D.asDiagonal() * d.lux;
        d.cost += w * Z_[t].squaredNorm();
      }
      cost_ += d.cost;
      gaps_[t + 1] = problem_.difference(X_[t + 1], d.next);
    }
    problem_.terminal_derivatives(X_[T], data_[T]);
    cost_ += data_[T].cost;
    gap_inf_ = 0.0;
    for (const auto& g : gaps_) gap_inf_ = std::max(gap_inf_, g.size() ? g.cwiseAbs().maxCoeff() : 0.0);
    feasible_ = gap_inf_ <= settings_.gap_tol;
    have_derivatives_ = true;
  }

  /// Riccati-like sweep with Levenberg-Marquardt regularization on Q_uu.
  BackwardResult backward_pass(double reg) {
    if (!have_derivatives_) calc_derivatives();
    const std::size_t T = problem_.horizon();
    BackwardResult out;
    Vx_[T] = data_[T].lx;
    Vxx_[T] = data_[T].lxx;
    if (!feasible_) Vx_[T].noalias() += Vxx_[T] * gaps_[T];
    for (std::size_t i = T; i-- > 0;) {
      const auto& d = data_[i];
      const VectorX& Vx = Vx_[i + 1];
      const MatrixX& Vxx = Vxx_[i + 1];
      const MatrixX VxxFx = Vxx * d.fx;
      const MatrixX VxxFu = Vxx * d.fu;
      const VectorX Qx = d.lx + d.fx.transpose() * Vx;
      Qu_[i] = d.lu + d.fu.transpose() * Vx;
      const MatrixX Qxx = d.lxx + d.fx.transpose() * VxxFx;
      const MatrixX Qux = d.lux + d.fu.transpose() * VxxFx;
      Quu_[i] = d.luu + d.fu.transpose() * VxxFu;
      MatrixX Quu_reg = Quu_[i];
      Quu_reg.diagonal().array() += reg;
      Eigen::LLT<MatrixX> llt(Quu_reg);
      if (llt.info() != Eigen::Success) {
        throw NonPositiveQuu("Q_uu not positive definite at node " + std::to_string(i));
      }
      k_[i] = -llt.solve(Qu_[i]);
      K_[i] = -llt.solve(Qux);
      Vx_[i] = Qx + K_[i].transpose() * Qu_[i];
      Vxx_[i] = Qxx + Qux.transpose() * K_[i];
      Vxx_[i] = 0.5 * (Vxx_[i] + Vxx_[i].transpose()).eval();
      if (!feasible_) Vx_[i].noalias() += Vxx_[i] * gaps_[i];
      out.dv1 += k_[i].dot(Qu_[i]);
      out.dv2 += k_[i].dot(Quu_[i] * k_[i]);
      if (Qu_[i].size()) out.grad_inf = std::max(out.grad_inf, Qu_[i].cwiseAbs().maxCoeff());
    }
    last_backward_ = out;
    return out;
  }

  struct Trial {
    std::vector<State> X;
    std::vector<VectorX> Z;
    double cost = 0.0;
    bool finite = true;
  };

  /// Nonlinear rollout of the updated policy with step α. Gaps of an
  /// infeasible iterate shrink by (1 - α) instead of closing at once.
  Trial forward_pass(double alpha) const {
    const std::size_t T = problem_.horizon();
    const double w = settings_.squash_regularization;
    Trial tr;
    tr.X.resize(T + 1);
    tr.Z.resize(T);
    const bool contract = !feasible_ && alpha != 1.0;
    try {
      State x = problem_.initial_state();
      for (std::size_t t = 0; t <= T; ++t) {
        tr.X[t] = contract ? problem_.integrate(x, (alpha - 1.0) * gaps_[t]) : x;
        if (t == T) break;
        const VectorX dx = problem_.difference(X_[t], tr.X[t]);
        tr.Z[t] = Z_[t] + alpha * k_[t] + K_[t] * dx;
        State next;
        double c = problem_.running(t, tr.X[t], control(tr.Z[t]), next);
        if (squashing_) c += w * tr.Z[t].squaredNorm();
        tr.cost += c;
        x = std::move(next);
        if (!std::isfinite(tr.cost)) throw NonFiniteRollout("cost is not finite at node " + std::to_string(t));
      }
      tr.cost += problem_.terminal(tr.X[T]);
      if (!std::isfinite(tr.cost)) throw NonFiniteRollout("terminal cost is not finite");
    } catch (const Error&) {
      tr.finite = false;
      tr.cost = std::numeric_limits<double>::infinity();
    }
    return tr;
  }

  /// Predicted cost reduction for step α, including the gap terms of an
  /// infeasible iterate.
  double expected_reduction(const Trial& trial, double alpha) const {
    const BackwardResult& b = last_backward_;
    double dg = -b.dv1;
    double dq = -b.dv2;
    double dv = 0.0;
    if (!feasible_) {
      const std::size_t T = problem_.horizon();
      for (std::size_t t = 0; t <= T; ++t) {
        dg -= Vx_[t].dot(gaps_[t]);
        dq += gaps_[t].dot(Vxx_[t] * gaps_[t]);
        dv -= gaps_[t].dot(Vxx_[t] * problem_.difference(trial.X[t], X_[t]));
      }
    }
    // dv enters as α(1 - α)dv; the expanded form cancels catastrophically when dv is huge
    return alpha * (dg + 0.5 * alpha * dq) + alpha * (1.0 - alpha) * dv;
  }

  SolverResult<State> solve() {
    const auto t0 = std::chrono::steady_clock::now();
    SolverResult<State> res;
    double reg = settings_.reg_init;
    calc_derivatives();
    int it = 0;
    for (; it < settings_.max_iters; ++it) {
      BackwardResult b;
      bool ok = false;
      while (!ok) {
        try {
          b = backward_pass(reg);
          ok = true;
        } catch (const NonPositiveQuu&) {
          if (reg >= settings_.reg_max) break;
          reg = std::min(reg * 10.0, settings_.reg_max);
        }
      }
      if (!ok) {
        res.stop_reason = "regularization exhausted in backward pass";
        break;
      }
      res.grad_inf_norm = b.grad_inf;
      if (feasible_ && b.grad_inf <= settings_.grad_tol) {
        res.converged = true;
        res.stop_reason = "converged";
        break;
      }
      IterationRecord rec{it + 1, cost_, gap_inf_, b.grad_inf, reg, 0.0, 0.0, 0.0};
      bool accepted = false;
      for (double alpha : settings_.alphas) {
        Trial tr = forward_pass(alpha);
        if (!tr.finite) continue;
        const double expected = expected_reduction(tr, alpha);
        const double actual = cost_ - tr.cost;
        bool accept;
        if (expected >= 0.0) {
          const bool round_off = expected < settings_.stationary_tol &&
                                 actual >= -settings_.stationary_tol * std::max(1.0, std::abs(cost_));
          accept = round_off || actual >= settings_.accept_fraction * expected;
        } else {
          // gap-closing step that is predicted to raise the cost
          accept = actual >= 2.0 * expected;
        }
        if (accept) {
          rec.alpha = alpha;
          rec.expected = expected;
          rec.actual = actual;
          X_ = std::move(tr.X);
          Z_ = std::move(tr.Z);
          calc_derivatives();
          accepted = true;
          break;
        }
      }
      res.log.push_back(rec);
      if (!accepted) {
        if (reg >= settings_.reg_max) {
          res.stop_reason = "regularization exhausted in line search";
          ++it;
          break;
        }
        reg = std::min(reg * 10.0, settings_.reg_max);
      } else if (rec.alpha == 1.0) {
        reg = std::max(reg * 0.5, settings_.reg_min);
      }
    }
    if (res.stop_reason.empty()) res.stop_reason = "iteration limit";
    res.iterations = it;
    const std::size_t T = problem_.horizon();
    res.X = X_;
    res.Z = Z_;
    res.U.resize(T);
    for (std::size_t t = 0; t < T; ++t) res.U[t] = control(Z_[t]);
    res.k = k_;
    res.K = K_;
    res.cost = cost_;
    res.gap_inf_norm = gap_inf_;
    res.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
  }

 private:
  const Problem& problem_;
  SolverSettings settings_;
  bool squashing_ = false;
  Squash squash_;
  std::vector<State> X_;
  std::vector<VectorX> Z_, k_, Vx_, Qu_, gaps_;
  std::vector<MatrixX> K_, Vxx_, Quu_;
  std::vector<NodeDerivatives<State>> data_;
  BackwardResult last_backward_;
  double cost_ = 0.0;
  double gap_inf_ = 0.0;
  bool feasible_ = false;
  bool have_derivatives_ = false;
};

/// Solves from the given guess, which may violate the dynamics. Exhausted
/// regularization is reported in `stop_reason`; `solve_or_throw` turns it into
/// NoProgress.
template <class Problem>
SolverResult<typename Problem::State> solve(const Problem& problem, const std::vector<typename Problem::State>& X_guess,
                                            const std::vector<VectorX>& U_guess, const SolverSettings& settings = {}) {
  Fddp<Problem> s(problem, settings);
  s.set_candidate(X_guess, U_guess);
  return s.solve();
}

template <class Problem>
SolverResult<typename Problem::State> solve_or_throw(const Problem& problem,
                                                     const std::vector<typename Problem::State>& X_guess,
                                                     const std::vector<VectorX>& U_guess,
                                                     const SolverSettings& settings = {}) {
  auto r = solve(problem, X_guess, U_guess, settings);
  if (r.stop_reason.rfind("regularization exhausted", 0) == 0) throw NoProgress(r.stop_reason);
  return r;
}

// ---------------------------------------------------------------------------
// Linear-quadratic problem

/// x' = A x + B u + c with l = ½xᵀQx + uᵀNx + ½uᵀRu + qᵀx + rᵀu and
/// terminal cost ½xᵀQf x + qfᵀx.
struct LqProblem {
  using State = VectorX;
  std::size_t T = 0;
  VectorX x0;
  std::vector<MatrixX> A, B, Q, R, N;
  std::vector<VectorX> c, q, r;
  MatrixX Qf;
  VectorX qf;
  VectorX lower, upper;  // optional bounds

  std::size_t horizon() const { return T; }
  const State& initial_state() const { return x0; }
  Eigen::Index ndx() const { return x0.size(); }
  Eigen::Index nu() const { return B.empty() ? 0 : B.front().cols(); }
  State integrate(const State& x, const VectorX& dx) const { return x + dx; }
  VectorX difference(const State& x, const State& y) const { return y - x; }
  bool bounded() const { return lower.size() > 0; }
  const VectorX& control_lower() const { return lower; }
  const VectorX& control_upper() const { return upper; }

  double running(std::size_t k, const State& x, const VectorX& u, State& next) const {
    next = A[k] * x + B[k] * u + c[k];
    return 0.5 * x.dot(Q[k] * x) + u.dot(N[k] * x) + 0.5 * u.dot(R[k] * u) + q[k].dot(x) + r[k].dot(u);
  }
  void running_derivatives(std::size_t k, const State& x, const VectorX& u, NodeDerivatives<State>& d) const {
    d.cost = running(k, x, u, d.next);
    d.fx = A[k];
    d.fu = B[k];
    d.lx = Q[k] * x + N[k].transpose() * u + q[k];
    d.lu = N[k] * x + R[k] * u + r[k];
    d.lxx = Q[k];
    d.lux = N[k];
    d.luu = R[k];
  }
  double terminal(const State& x) const { return 0.5 * x.dot(Qf * x) + qf.dot(x); }
  void terminal_derivatives(const State& x, NodeDerivatives<State>& d) const {
    d.cost = terminal(x);
    d.lx = Qf * x + qf;
    d.lxx = Qf;
  }
};

}  // namespace uamoc
