#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace holistic {

// min 1/2 x'Qx + C'x  s.t.  Jeq x = nu,  A x <= B,  lower <= x <= upper.
// Infinite bounds are ignored.
struct QPProblem {
  Eigen::MatrixXd Q;
  Eigen::VectorXd C;
  Eigen::MatrixXd Jeq;
  Eigen::VectorXd nu;
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::Index dim() const { return Q.rows(); }

  // Empty equality/inequality blocks sized for `n` variables.
  static QPProblem unconstrained(Eigen::Index n) {
    QPProblem p;
    p.Q = Eigen::MatrixXd::Identity(n, n);
    p.C = Eigen::VectorXd::Zero(n);
    p.Jeq.resize(0, n);
    p.nu.resize(0);
    p.A.resize(0, n);
    p.B.resize(0);
    p.lower = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
    p.upper = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    return p;
  }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(Q * x) + C.dot(x); }
};

enum class QPStatus { optimal, infeasible, max_iter };

inline const char* to_string(QPStatus s) {
  switch (s) {
    case QPStatus::optimal: return "optimal";
    case QPStatus::infeasible: return "infeasible";
    case QPStatus::max_iter: return "max_iter";
  }
  return "?";
}

struct QPSolution {
  Eigen::VectorXd x;
  QPStatus status = QPStatus::infeasible;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

struct QPSettings {
  int max_iter = 4000;
  double feasibility_tol = 1e-10;
  // Added to Q's diagonal (relative to its mean diagonal) when Q is only PSD.
  double ridge = 1e-10;
};

// Dual active-set method (Goldfarb & Idnani) for strictly convex QPs.
// Holds its workspace; one solve at a time per instance.
class QPSolver {
 public:
  explicit QPSolver(QPSettings settings = {}) : settings_(settings) {}

  QPSolution solve(const QPProblem& p,
                   const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) {
    n_ = p.dim();
    build_constraints(p);
    QPSolution sol;
    sol.status = run(p, warm_start, sol.iterations);
    sol.x = x_;
    sol.objective = p.objective(x_);
    sol.kkt_residual = kkt_residual(p);
    if (sol.status == QPStatus::optimal && sol.kkt_residual > 1e-6) {
      // Numerical breakdown; surface it rather than returning a bad point.
      sol.status = QPStatus::max_iter;
    }
    return sol;
  }

  // Multipliers of the inequality rows (A rows, then finite lower, then finite upper bounds).
  const Eigen::VectorXd& inequality_multipliers() const { return u_ineq_; }

 private:
  QPSettings settings_;
  Eigen::Index n_ = 0;
  Eigen::Index p_ = 0;  // equalities
  Eigen::Index m_ = 0;  // inequalities
  // constraints as  CE' x + ce0 = 0  and  CI' x + ci0 >= 0  (columns)
  Eigen::MatrixXd CE_, CI_;
  Eigen::VectorXd ce0_, ci0_;
  Eigen::MatrixXd J_, R_;
  Eigen::VectorXd x_, u_, d_, z_, r_, s_, u_ineq_, u_eq_;
  std::vector<Eigen::Index> active_;  // >=0 inequality index, <0 equality -(i+1)
  double r_norm_ = 1.0;

  // Inequality row k maps to: A row (k < a), lower bound, or upper bound.
  std::vector<Eigen::Index> ineq_var_;
  std::vector<int> ineq_kind_;  // 0: A row, 1: lower, 2: upper

  void build_constraints(const QPProblem& p) {
    p_ = p.Jeq.rows();
    CE_ = p.Jeq.transpose();
    ce0_ = -p.nu;
    ineq_var_.clear();
    ineq_kind_.clear();
    for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
      ineq_var_.push_back(i);
      ineq_kind_.push_back(0);
    }
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (std::isfinite(p.lower(i))) {
        ineq_var_.push_back(i);
        ineq_kind_.push_back(1);
      }
    }
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (std::isfinite(p.upper(i))) {
        ineq_var_.push_back(i);
        ineq_kind_.push_back(2);
      }
    }
    m_ = static_cast<Eigen::Index>(ineq_var_.size());
    CI_.setZero(n_, m_);
    ci0_.resize(m_);
    for (Eigen::Index k = 0; k < m_; ++k) {
      const auto v = ineq_var_[static_cast<std::size_t>(k)];
      switch (ineq_kind_[static_cast<std::size_t>(k)]) {
        case 0:
          CI_.col(k) = -p.A.row(v).transpose();
          ci0_(k) = p.B(v);
          break;
        case 1:
          CI_(v, k) = 1.0;
          ci0_(k) = -p.lower(v);
          break;
        default:
          CI_(v, k) = -1.0;
          ci0_(k) = p.upper(v);
          break;
      }
    }
  }

  void compute_d(const Eigen::VectorXd& np) { d_.noalias() = J_.transpose() * np; }

  void update_z(Eigen::Index iq) { z_.noalias() = J_.rightCols(n_ - iq) * d_.tail(n_ - iq); }

  void update_r(Eigen::Index iq) {
    if (iq == 0) return;
    r_.head(iq) = R_.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d_.head(iq));
  }

  bool add_constraint(Eigen::Index& iq) {
    for (Eigen::Index j = n_ - 1; j >= iq + 1; --j) {
      double cc = d_(j - 1);
      double ss = d_(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d_(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_(j - 1) = -h;
      } else {
        d_(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double t1 = J_(k, j - 1);
        const double t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++iq;
    R_.col(iq - 1).head(iq) = d_.head(iq);
    if (std::abs(d_(iq - 1)) <= std::numeric_limits<double>::epsilon() * r_norm_) return false;
    r_norm_ = std::max(r_norm_, std::abs(d_(iq - 1)));
    return true;
  }

  void delete_constraint(Eigen::Index& iq, Eigen::Index l) {
    Eigen::Index qq = -1;
    for (Eigen::Index i = p_; i < iq; ++i) {
      if (active_[static_cast<std::size_t>(i)] == l) {
        qq = i;
        break;
      }
    }
    if (qq < 0) return;
    for (Eigen::Index i = qq; i < iq - 1; ++i) {
      active_[static_cast<std::size_t>(i)] = active_[static_cast<std::size_t>(i) + 1];
      u_(i) = u_(i + 1);
      R_.col(i) = R_.col(i + 1);
    }
    active_[static_cast<std::size_t>(iq) - 1] = active_[static_cast<std::size_t>(iq)];
    u_(iq - 1) = u_(iq);
    active_[static_cast<std::size_t>(iq)] = 0;
    u_(iq) = 0.0;
    R_.col(iq - 1).setZero();
    --iq;
    if (iq == 0) return;
    for (Eigen::Index j = qq; j < iq; ++j) {
      double cc = R_(j, j);
      double ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Eigen::Index k = j + 1; k < iq; ++k) {
        const double t1 = R_(j, k);
        const double t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (Eigen::Index k = 0; k < n_; ++k) {
        const double t1 = J_(k, j);
        const double t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  QPStatus run(const QPProblem& p, const std::optional<Eigen::VectorXd>& warm, int& iters) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const Eigen::Index n = n_;
    x_ = Eigen::VectorXd::Zero(n);
    u_ineq_ = Eigen::VectorXd::Zero(m_);
    u_eq_ = Eigen::VectorXd::Zero(p_);
    iters = 0;

    Eigen::MatrixXd G = 0.5 * (p.Q + p.Q.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) {
      const double scale = std::max(G.diagonal().cwiseAbs().mean(), 1.0);
      G.diagonal().array() += settings_.ridge * scale;
      llt.compute(G);
      if (llt.info() != Eigen::Success) return QPStatus::infeasible;
    }
    const Eigen::MatrixXd L = llt.matrixL();
    J_ = L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n, n));
    R_.setZero(n, n);
    r_norm_ = 1.0;
    d_.setZero(n);
    z_.setZero(n);
    r_.setZero(p_ + m_ + 1);
    u_.setZero(p_ + m_ + 1);
    active_.assign(static_cast<std::size_t>(p_ + m_ + 1), 0);

    x_ = -llt.solve(p.C);

    Eigen::Index iq = 0;
    for (Eigen::Index i = 0; i < p_; ++i) {
      const Eigen::VectorXd np = CE_.col(i);
      compute_d(np);
      update_z(iq);
      update_r(iq);
      double t2 = 0.0;
      const double znp = z_.dot(np);
      if (std::abs(znp) > std::numeric_limits<double>::epsilon()) t2 = -(np.dot(x_) + ce0_(i)) / znp;
      x_ += t2 * z_;
      u_(iq) = t2;
      u_.head(iq) -= t2 * r_.head(iq);
      active_[static_cast<std::size_t>(iq)] = -i - 1;
      if (!add_constraint(iq)) return QPStatus::infeasible;  // dependent equalities
    }

    // Warm start biases which violated constraint is added first.
    std::vector<char> prefer(static_cast<std::size_t>(m_), 0);
    if (warm && warm->size() == n) {
      for (Eigen::Index k = 0; k < m_; ++k)
        prefer[static_cast<std::size_t>(k)] =
            std::abs(CI_.col(k).dot(*warm) + ci0_(k)) <= 1e-9 ? 1 : 0;
    }

    std::vector<char> in_active(static_cast<std::size_t>(m_), 0);
    std::vector<char> excluded(static_cast<std::size_t>(m_), 0);
    s_.resize(m_);

    auto tol_for = [&](Eigen::Index k) {
      return settings_.feasibility_tol * (1.0 + std::abs(ci0_(k)));
    };

    while (true) {
      // Step 1: choose a violated constraint.
      ++iters;
      if (iters > settings_.max_iter) return QPStatus::max_iter;
      for (Eigen::Index k = 0; k < m_; ++k) s_(k) = CI_.col(k).dot(x_) + ci0_(k);

    choose:
      Eigen::Index ip = -1;
      double worst = 0.0;
      bool worst_pref = false;
      for (Eigen::Index k = 0; k < m_; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        if (in_active[ks] || excluded[ks]) continue;
        if (s_(k) >= -tol_for(k)) continue;
        const bool pk = prefer[ks] != 0;
        if (ip < 0 || (pk && !worst_pref) || (pk == worst_pref && s_(k) < worst)) {
          ip = k;
          worst = s_(k);
          worst_pref = pk;
        }
      }
      if (ip < 0) break;
      Eigen::VectorXd np = CI_.col(ip);
      u_(iq) = 0.0;
      active_[static_cast<std::size_t>(iq)] = ip;

      while (true) {
        // Step 2a: step direction.
        compute_d(np);
        update_z(iq);
        update_r(iq);
        double t1 = inf;
        Eigen::Index l = -1;
        for (Eigen::Index k = p_; k < iq; ++k) {
          if (r_(k) > 0.0 && u_(k) / r_(k) < t1) {
            t1 = u_(k) / r_(k);
            l = active_[static_cast<std::size_t>(k)];
          }
        }
        double t2 = inf;
        if (z_.norm() > std::numeric_limits<double>::epsilon()) t2 = -s_(ip) / z_.dot(np);
        if (t2 < 0.0) t2 = 0.0;
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) return QPStatus::infeasible;

        if (!std::isfinite(t2)) {
          // dual-only step
          u_.head(iq) -= t * r_.head(iq);
          u_(iq) += t;
          in_active[static_cast<std::size_t>(l)] = 0;
          delete_constraint(iq, l);
          active_[static_cast<std::size_t>(iq)] = ip;
          if (++iters > settings_.max_iter) return QPStatus::max_iter;
          continue;
        }

        x_ += t * z_;
        u_.head(iq) -= t * r_.head(iq);
        u_(iq) += t;

        if (t == t2) {
          if (!add_constraint(iq)) {
            // Numerically dependent on the active set: exclude it and pick another.
            excluded[static_cast<std::size_t>(ip)] = 1;
            delete_constraint(iq, ip);
            for (Eigen::Index k = 0; k < m_; ++k) s_(k) = CI_.col(k).dot(x_) + ci0_(k);
            goto choose;
          }
          in_active[static_cast<std::size_t>(ip)] = 1;
          break;
        }
        // partial step: drop constraint l and retry
        in_active[static_cast<std::size_t>(l)] = 0;
        delete_constraint(iq, l);
        active_[static_cast<std::size_t>(iq)] = ip;
        s_(ip) = CI_.col(ip).dot(x_) + ci0_(ip);
        if (++iters > settings_.max_iter) return QPStatus::max_iter;
      }
    }

    for (Eigen::Index i = 0; i < iq; ++i) {
      const auto a = active_[static_cast<std::size_t>(i)];
      if (a >= 0) u_ineq_(a) = u_(i);
      else u_eq_(-a - 1) = u_(i);
    }
    return QPStatus::optimal;
  }

  // max of stationarity, primal infeasibility and complementarity (inf-norms).
  double kkt_residual(const QPProblem& p) const {
    const Eigen::VectorXd grad = p.Q * x_ + p.C;
    Eigen::VectorXd stat = grad;
    if (p_ > 0) stat -= CE_ * u_eq_;
    if (m_ > 0) stat -= CI_ * u_ineq_;
    double res = stat.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < p_; ++i) res = std::max(res, std::abs(CE_.col(i).dot(x_) + ce0_(i)));
    for (Eigen::Index k = 0; k < m_; ++k) {
      const double sk = CI_.col(k).dot(x_) + ci0_(k);
      res = std::max(res, std::max(0.0, -sk));
      res = std::max(res, std::max(0.0, -u_ineq_(k)));
      res = std::max(res, std::abs(u_ineq_(k) * sk));
    }
    return res;
  }
};

inline QPSolution solve(const QPProblem& p,
                        const std::optional<Eigen::VectorXd>& warm_start = std::nullopt,
                        QPSettings settings = {}) {
  QPSolver solver(settings);
  return solver.solve(p, warm_start);
}

}  // namespace holistic
