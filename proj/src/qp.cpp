#include "gmpar/qp.hpp"

#include <cmath>
#include <limits>

#include "gmpar/errors.hpp"

namespace gmpar {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Factorisation state of the active set: J = L^-T Q and R upper triangular
// with the first `iq` columns in use.
struct ActiveFactors {
  Matrix J;
  Matrix R;
  Eigen::Index iq = 0;
  double r_norm = 1.0;
};

// Appends the constraint whose transformed normal is `d` (= J^T n) to the
// active set. Returns false when it is linearly dependent on the active rows.
bool add_constraint(ActiveFactors& f, Vector& d) {
  const Eigen::Index n = d.size();
  for (Eigen::Index j = n - 1; j >= f.iq + 1; --j) {
    double cc = d[j - 1];
    double ss = d[j];
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d[j] = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d[j - 1] = -h;
    } else {
      d[j - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double t1 = f.J(k, j - 1);
      const double t2 = f.J(k, j);
      f.J(k, j - 1) = t1 * cc + t2 * ss;
      f.J(k, j) = xny * (t1 + f.J(k, j - 1)) - t2;
    }
  }
  ++f.iq;
  f.R.col(f.iq - 1).head(f.iq) = d.head(f.iq);
  if (std::abs(d[f.iq - 1]) <= kEps * f.r_norm) return false;
  f.r_norm = std::max(f.r_norm, std::abs(d[f.iq - 1]));
  return true;
}

// Removes active inequality `l` (an index into the constraint list) and
// restores R to upper-triangular form with Givens rotations.
void delete_constraint(ActiveFactors& f, std::vector<long>& active, Vector& u, Eigen::Index first_ineq, long l) {
  const Eigen::Index n = f.J.rows();
  Eigen::Index qq = -1;
  for (Eigen::Index i = first_ineq; i < f.iq; ++i) {
    if (active[static_cast<std::size_t>(i)] == l) {
      qq = i;
      break;
    }
  }
  if (qq < 0) throw Error("qp: constraint to drop is not active");

  for (Eigen::Index i = qq; i < f.iq - 1; ++i) {
    active[static_cast<std::size_t>(i)] = active[static_cast<std::size_t>(i + 1)];
    u[i] = u[i + 1];
    f.R.col(i) = f.R.col(i + 1);
  }
  active[static_cast<std::size_t>(f.iq - 1)] = active[static_cast<std::size_t>(f.iq)];
  u[f.iq - 1] = u[f.iq];
  active[static_cast<std::size_t>(f.iq)] = 0;
  u[f.iq] = 0.0;
  f.R.col(f.iq - 1).setZero();
  --f.iq;
  if (f.iq == 0) return;

  for (Eigen::Index j = qq; j < f.iq; ++j) {
    double cc = f.R(j, j);
    double ss = f.R(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    f.R(j + 1, j) = 0.0;
    if (cc < 0.0) {
      f.R(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      f.R(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (Eigen::Index k = j + 1; k < f.iq; ++k) {
      const double t1 = f.R(j, k);
      const double t2 = f.R(j + 1, k);
      f.R(j, k) = t1 * cc + t2 * ss;
      f.R(j + 1, k) = xny * (t1 + f.R(j, k)) - t2;
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      const double t1 = f.J(k, j);
      const double t2 = f.J(k, j + 1);
      f.J(k, j) = t1 * cc + t2 * ss;
      f.J(k, j + 1) = xny * (f.J(k, j) + t1) - t2;
    }
  }
}

// z = J[:, iq:] d[iq:] (primal step direction), r = R^-1 d[:iq] (dual).
void step_directions(const ActiveFactors& f, const Vector& d, Vector& z, Vector& r) {
  const Eigen::Index n = d.size();
  z = f.J.rightCols(n - f.iq) * d.tail(n - f.iq);
  r.resize(f.iq);
  for (Eigen::Index i = f.iq - 1; i >= 0; --i) {
    double s = d[i];
    for (Eigen::Index j = i + 1; j < f.iq; ++j) s -= f.R(i, j) * r[j];
    r[i] = s / f.R(i, i);
  }
}

}  // namespace

QpResult solve_qp(const Matrix& G, const Vector& g, const Matrix& E, const Vector& e, const Matrix& C,
                  const Vector& d, std::size_t max_iter) {
  const Eigen::Index n = G.rows();
  const bool eq_ok = E.rows() == e.size() && (E.rows() == 0 || E.cols() == n);
  const bool ineq_ok = C.rows() == d.size() && (C.rows() == 0 || C.cols() == n);
  if (G.cols() != n || g.size() != n || !eq_ok || !ineq_ok) throw DimensionMismatch("solve_qp: inconsistent shapes");
  const Eigen::Index me = E.rows();
  const Eigen::Index mi = C.rows();

  Eigen::LLT<Matrix> llt(G);
  if (llt.info() != Eigen::Success) throw SingularSystem("QP Hessian is not positive definite");
  const Matrix L = llt.matrixL();
  if (L.diagonal().minCoeff() <= 0.0) throw SingularSystem("QP Hessian is not positive definite");

  ActiveFactors f;
  f.J = L.transpose().triangularView<Eigen::Upper>().solve(Matrix::Identity(n, n));
  f.R = Matrix::Zero(n, n);
  const double c1 = G.trace();
  const double c2 = f.J.trace();

  QpResult res;
  Vector x = -llt.solve(g);
  const auto objective = [&](const Vector& v) { return 0.5 * v.dot(G * v) + g.dot(v); };

  // active[i] < 0 encodes equality -(i+1); otherwise an inequality index.
  std::vector<long> active(static_cast<std::size_t>(me + mi + 1), 0);
  Vector u = Vector::Zero(me + mi + 1);
  Vector z;
  Vector r;
  Vector dv;

  for (Eigen::Index i = 0; i < me; ++i) {
    const Vector np = E.row(i).transpose();
    dv = f.J.transpose() * np;
    step_directions(f, dv, z, r);
    const double residual = np.dot(x) - e[i];
    if (z.squaredNorm() <= kEps * (1.0 + np.squaredNorm())) {
      // Dependent on rows already added: skip if consistent.
      if (std::abs(residual) <= 1e-9 * (1.0 + std::abs(e[i]) + np.cwiseAbs().dot(x.cwiseAbs()))) continue;
      res.status = QpStatus::Infeasible;
      res.x = x;
      return res;
    }
    const double t2 = -residual / z.dot(np);
    x += t2 * z;
    u[f.iq] = t2;
    u.head(f.iq) -= t2 * r;
    active[static_cast<std::size_t>(f.iq)] = -static_cast<long>(i) - 1;
    if (!add_constraint(f, dv)) {
      res.status = QpStatus::Infeasible;
      res.x = x;
      return res;
    }
  }
  const Eigen::Index first_ineq = f.iq;

  // Inequalities in the form n^T x + b >= 0 with n = -C_i, b = d_i.
  const auto slack = [&](Eigen::Index i) { return d[i] - C.row(i).dot(x); };
  // Violations below this are roundoff, not worth another pivot.
  const auto feas_tol = [&](Eigen::Index i) {
    return 1e-11 * (1.0 + std::abs(d[i]) + C.row(i).cwiseAbs().dot(x.cwiseAbs()));
  };

  std::vector<long> iai(static_cast<std::size_t>(mi));
  std::vector<bool> iaexcl(static_cast<std::size_t>(mi), true);
  for (Eigen::Index i = 0; i < mi; ++i) iai[static_cast<std::size_t>(i)] = static_cast<long>(i);
  Vector s(mi);
  Vector x_old;
  Vector u_old;
  std::vector<long> active_old;

  const auto finish = [&](QpStatus status) {
    res.status = status;
    res.x = x;
    res.objective = objective(x);
    res.active.clear();
    for (Eigen::Index i = first_ineq; i < f.iq; ++i) {
      res.active.push_back(static_cast<std::size_t>(active[static_cast<std::size_t>(i)]));
    }
    return res;
  };

  while (true) {
    // Step 1: pick the most violated constraint.
    if (++res.iterations > max_iter) return finish(QpStatus::MaxIterExceeded);
    for (Eigen::Index i = first_ineq; i < f.iq; ++i) iai[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])] = -1;
    double psi = 0.0;
    for (Eigen::Index i = 0; i < mi; ++i) {
      s[i] = slack(i);
      if (s[i] < -feas_tol(i)) psi += s[i];
    }
    if (std::abs(psi) <= static_cast<double>(std::max<Eigen::Index>(mi, 1)) * kEps * c1 * c2 * 100.0) {
      return finish(QpStatus::Optimal);
    }
    u_old = u;
    active_old = active;
    x_old = x;

  select:
    Eigen::Index ip = -1;
    double ss = 0.0;
    for (Eigen::Index i = 0; i < mi; ++i) {
      const auto si = static_cast<std::size_t>(i);
      if (s[i] < ss && s[i] < -feas_tol(i) && iai[si] != -1 && iaexcl[si]) {
        ss = s[i];
        ip = i;
      }
    }
    if (ss >= 0.0) return finish(QpStatus::Optimal);

    const Vector np = -C.row(ip).transpose();
    u[f.iq] = 0.0;
    active[static_cast<std::size_t>(f.iq)] = static_cast<long>(ip);

    while (true) {
      // Step 2a: step directions.
      dv = f.J.transpose() * np;
      step_directions(f, dv, z, r);

      // Step 2b: dual (partial) and primal (full) step lengths.
      long l = -1;
      double t1 = kInf;
      for (Eigen::Index k = first_ineq; k < f.iq; ++k) {
        if (r[k] > 0.0 && u[k] / r[k] < t1) {
          t1 = u[k] / r[k];
          l = active[static_cast<std::size_t>(k)];
        }
      }
      double t2 = kInf;
      if (z.squaredNorm() > kEps) t2 = -s[ip] / z.dot(np);
      const double t = std::min(t1, t2);

      if (t >= kInf) return finish(QpStatus::Infeasible);

      if (t2 >= kInf) {
        // Dual step only.
        u.head(f.iq) -= t * r;
        u[f.iq] += t;
        iai[static_cast<std::size_t>(l)] = l;
        delete_constraint(f, active, u, first_ineq, l);
        continue;
      }

      x += t * z;
      u.head(f.iq) -= t * r;
      u[f.iq] += t;

      if (std::abs(t - t2) <= kEps * std::max(1.0, std::abs(t2))) {
        // Full step: the constraint becomes active.
        if (!add_constraint(f, dv)) {
          iaexcl[static_cast<std::size_t>(ip)] = false;
          delete_constraint(f, active, u, first_ineq, static_cast<long>(ip));
          for (Eigen::Index i = 0; i < mi; ++i) iai[static_cast<std::size_t>(i)] = static_cast<long>(i);
          for (Eigen::Index i = first_ineq; i < f.iq; ++i) {
            active[static_cast<std::size_t>(i)] = active_old[static_cast<std::size_t>(i)];
            u[i] = u_old[i];
            iai[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])] = -1;
          }
          x = x_old;
          goto select;
        }
        iai[static_cast<std::size_t>(ip)] = -1;
        break;
      }

      // Partial step: drop the blocking constraint and retry.
      iai[static_cast<std::size_t>(l)] = l;
      delete_constraint(f, active, u, first_ineq, l);
      s[ip] = slack(ip);
    }
  }
}

}  // namespace gmpar
