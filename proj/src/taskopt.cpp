#include "gmpar/taskopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gmpar/errors.hpp"
#include "gmpar/qp.hpp"

namespace gmpar {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double cosine_term(const Vector& yhat, const Vector& y) {
  const double ny = y.norm();
  const double nh = yhat.norm();
  if (ny == 0.0 || nh == 0.0) return 1.0;
  return 1.0 - yhat.dot(y) / (nh * ny);
}

struct LinearRows {
  Matrix E;
  Vector e;
  Matrix C;
  Vector d;
};

void check_constraint_shape(const AffineConstraint& c, std::size_t n) {
  if (static_cast<std::size_t>(c.y_coef.size()) != n ||
      (c.yhat_coef.size() != 0 && static_cast<std::size_t>(c.yhat_coef.size()) != n)) {
    throw DimensionMismatch("task constraint does not match the hierarchy size");
  }
}

// Affine constraint value at y = 0: the right-hand side is its negation.
double offset(const AffineConstraint& c, const Vector& yhat) {
  return (c.yhat_coef.size() ? c.yhat_coef.dot(yhat) : 0.0) + c.constant;
}

LinearRows assemble(const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec) {
  const auto n = static_cast<Eigen::Index>(h.n());
  const auto r = static_cast<Eigen::Index>(h.r());
  const auto neq = static_cast<Eigen::Index>(spec.equalities.size());
  const auto nin = static_cast<Eigen::Index>(spec.inequalities.size());
  const auto nband = static_cast<Eigen::Index>(spec.bands.size());

  LinearRows rows;
  rows.E.resize(r + neq, n);
  rows.e.resize(r + neq);
  rows.E.topRows(r) = h.A();
  rows.e.head(r).setZero();
  for (Eigen::Index j = 0; j < neq; ++j) {
    const auto& c = spec.equalities[static_cast<std::size_t>(j)];
    check_constraint_shape(c, h.n());
    rows.E.row(r + j) = c.y_coef.transpose();
    rows.e[r + j] = -offset(c, yhat);
  }

  rows.C = Matrix::Zero(nin + 2 * nband, n);
  rows.d.resize(nin + 2 * nband);
  for (Eigen::Index j = 0; j < nin; ++j) {
    const auto& c = spec.inequalities[static_cast<std::size_t>(j)];
    check_constraint_shape(c, h.n());
    rows.C.row(j) = c.y_coef.transpose();
    rows.d[j] = -offset(c, yhat);
  }
  for (Eigen::Index j = 0; j < nband; ++j) {
    const auto& b = spec.bands[static_cast<std::size_t>(j)];
    if (b.node >= h.n()) throw DimensionMismatch("band constraint on a node outside the hierarchy");
    const auto i = static_cast<Eigen::Index>(b.node);
    const double width = b.fraction * yhat[i];
    rows.C(nin + 2 * j, i) = 1.0;
    rows.d[nin + 2 * j] = yhat[i] + width;
    rows.C(nin + 2 * j + 1, i) = -1.0;
    rows.d[nin + 2 * j + 1] = -(yhat[i] - width);
  }
  return rows;
}

struct Violations {
  double coherence = 0.0;
  double eq = 0.0;
  double ineq = 0.0;
};

Violations measure(const Vector& y, const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec) {
  Violations v;
  if (h.r() > 0) v.coherence = (h.A() * y).cwiseAbs().maxCoeff();
  for (const auto& c : spec.equalities) v.eq = std::max(v.eq, std::abs(c.evaluate(y, yhat)));
  for (const auto& c : spec.inequalities) v.ineq = std::max(v.ineq, c.evaluate(y, yhat));
  for (const auto& b : spec.bands) {
    const auto i = static_cast<Eigen::Index>(b.node);
    v.ineq = std::max(v.ineq, std::abs(y[i] - yhat[i]) - b.fraction * yhat[i]);
  }
  return v;
}

// Solver variables: z = y for L2, z = (y, t) with t >= |y - yhat| for L1.
// The epigraph form keeps the L1 problem smooth without any smoothing width.
double solver_objective(const Vector& yhat, const Vector& z, const TaskSpec& spec) {
  const Eigen::Index n = yhat.size();
  const Vector y = z.head(n);
  const double dist = spec.norm == ObjectiveNorm::L2 ? (y - yhat).norm() : z.tail(n).sum();
  return dist + spec.beta * cosine_term(yhat, y);
}

struct Model {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

// Exact second-order model with the spectrum clamped from below so the QP
// subproblem stays strictly convex.
Model build_model(const Vector& yhat, const Vector& z, const TaskSpec& spec) {
  const Eigen::Index n = yhat.size();
  const Eigen::Index nz = z.size();
  const Vector y = z.head(n);
  Model m;
  m.value = solver_objective(yhat, z, spec);
  m.grad = Vector::Zero(nz);
  m.hess = Matrix::Zero(nz, nz);

  double floor = 0.0;
  if (spec.norm == ObjectiveNorm::L2) {
    const Vector res = y - yhat;
    const double rn = std::max(res.norm(), 1e-12 * (1.0 + yhat.norm()));
    const Vector u = res / rn;
    m.grad.head(n) += u;
    m.hess.topLeftCorner(n, n) += (Matrix::Identity(n, n) - u * u.transpose()) / rn;
    floor = 1e-2 / rn;
  } else {
    m.grad.tail(n).setOnes();
    floor = 1e-6 / (1.0 + yhat.cwiseAbs().maxCoeff());
  }

  const double ny = y.norm();
  const double nh = yhat.norm();
  if (spec.beta > 0.0 && ny > 0.0 && nh > 0.0) {
    const Vector a = yhat / nh;
    const double s = a.dot(y);
    const double ny3 = ny * ny * ny;
    const Vector grad_cos = a / ny - s * y / ny3;
    const Matrix hess_cos = -(a * y.transpose() + y * a.transpose()) / ny3 - (s / ny3) * Matrix::Identity(n, n) +
                            (3.0 * s / (ny3 * ny * ny)) * y * y.transpose();
    m.grad.head(n) -= spec.beta * grad_cos;
    m.hess.topLeftCorner(n, n) -= spec.beta * hess_cos;
    if (spec.norm == ObjectiveNorm::L1) floor += 1e-4 * spec.beta / (ny * ny);
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m.hess + m.hess.transpose()));
  const Vector lam = eig.eigenvalues().cwiseMax(floor);
  m.hess = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  return m;
}

}  // namespace

double AffineConstraint::evaluate(const Vector& y, const Vector& yhat) const {
  return y_coef.dot(y) + offset(*this, yhat);
}

AffineConstraint pin_to_forecast(std::size_t node, std::size_t n) {
  AffineConstraint c;
  c.y_coef = Vector::Zero(static_cast<Eigen::Index>(n));
  c.yhat_coef = Vector::Zero(static_cast<Eigen::Index>(n));
  c.y_coef[static_cast<Eigen::Index>(node)] = 1.0;
  c.yhat_coef[static_cast<Eigen::Index>(node)] = -1.0;
  return c;
}

TaskSpec alipay_spec(double beta, std::size_t n, double band) {
  if (beta < 0.0) throw ConfigError("beta must be nonnegative");
  TaskSpec spec;
  spec.beta = beta;
  spec.norm = ObjectiveNorm::L2;
  spec.equalities.push_back(pin_to_forecast(0, n));
  for (std::size_t i = 0; i < n; ++i) spec.bands.push_back({i, band});
  return spec;
}

double evaluate_objective(const Vector& yhat, const Vector& y, const TaskSpec& spec) {
  if (yhat.size() != y.size()) throw DimensionMismatch("objective vectors differ in length");
  const Vector res = yhat - y;
  const double dist = spec.norm == ObjectiveNorm::L2 ? res.norm() : res.cwiseAbs().sum();
  return dist + spec.beta * cosine_term(yhat, y);
}

bool interval_feasible(const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec) {
  const auto n = static_cast<Eigen::Index>(h.n());
  Vector lo = Vector::Constant(n, -kInf);
  Vector hi = Vector::Constant(n, kInf);

  const auto single_var = [&](const AffineConstraint& c) -> Eigen::Index {
    Eigen::Index idx = -1;
    for (Eigen::Index i = 0; i < c.y_coef.size(); ++i) {
      if (c.y_coef[i] == 0.0) continue;
      if (idx >= 0) return -1;
      idx = i;
    }
    return idx;
  };

  for (const auto& b : spec.bands) {
    const auto i = static_cast<Eigen::Index>(b.node);
    const double width = b.fraction * yhat[i];
    lo[i] = std::max(lo[i], yhat[i] - width);
    hi[i] = std::min(hi[i], yhat[i] + width);
  }
  for (const auto& c : spec.equalities) {
    const Eigen::Index i = single_var(c);
    if (i < 0) continue;
    const double v = -offset(c, yhat) / c.y_coef[i];
    lo[i] = std::max(lo[i], v);
    hi[i] = std::min(hi[i], v);
  }
  for (const auto& c : spec.inequalities) {
    const Eigen::Index i = single_var(c);
    if (i < 0) continue;
    const double v = -offset(c, yhat) / c.y_coef[i];
    if (c.y_coef[i] > 0) {
      hi[i] = std::min(hi[i], v);
    } else {
      lo[i] = std::max(lo[i], v);
    }
  }

  const auto empty = [&](Eigen::Index i) {
    const double scale = 1.0 + (std::isfinite(lo[i]) ? std::abs(lo[i]) : 0.0) + (std::isfinite(hi[i]) ? std::abs(hi[i]) : 0.0);
    return lo[i] > hi[i] + 1e-12 * scale;
  };

  for (std::size_t k = h.num_levels(); k-- > 0;) {
    const std::size_t mk = h.children_per_node(k);
    for (std::size_t j = 0; j < h.level_size(k); ++j) {
      const auto node = static_cast<Eigen::Index>(h.node_index(k, j));
      if (mk > 0) {
        const auto first = static_cast<Eigen::Index>(h.first_child(static_cast<std::size_t>(node)));
        const auto cnt = static_cast<Eigen::Index>(mk);
        lo[node] = std::max(lo[node], lo.segment(first, cnt).sum());
        hi[node] = std::min(hi[node], hi.segment(first, cnt).sum());
      }
      if (empty(node)) return false;
    }
  }
  return true;
}

TaskResult solve_task(const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec) {
  if (static_cast<std::size_t>(yhat.size()) != h.n()) throw DimensionMismatch("forecast length does not match n");
  if (!yhat.allFinite()) throw DimensionMismatch("forecast contains non-finite values");
  if (spec.beta < 0.0) throw ConfigError("beta must be nonnegative");
  if (!interval_feasible(yhat, h, spec)) {
    throw Infeasible("task constraints admit no coherent solution (interval check)");
  }

  const LinearRows rows = assemble(yhat, h, spec);
  const auto n = static_cast<Eigen::Index>(h.n());
  TaskResult out;

  const auto finish = [&](Vector y, TaskStatus status, std::size_t iters) {
    out.y = std::move(y);
    out.status = status;
    out.iterations = iters;
    out.objective = evaluate_objective(yhat, out.y, spec);
    const auto v = measure(out.y, yhat, h, spec);
    out.coherence_violation = v.coherence;
    out.eq_violation = v.eq;
    out.ineq_violation = std::max(0.0, v.ineq);
    return out;
  };

  // Both objective terms are nonnegative and vanish at y = yhat.
  {
    const auto v = measure(yhat, yhat, h, spec);
    if (v.coherence <= spec.tol_eq && v.eq <= spec.tol_eq && v.ineq <= spec.tol_ineq) {
      return finish(yhat, TaskStatus::Converged, 0);
    }
  }

  // Closest feasible point in the Euclidean norm: exact for L2 with beta = 0
  // and the starting iterate otherwise.
  const QpResult start = solve_qp(Matrix::Identity(n, n), -yhat, rows.E, rows.e, rows.C, rows.d);
  if (start.status == QpStatus::Infeasible) throw Infeasible("task constraints admit no coherent solution");
  Vector y = start.x;
  if (spec.norm == ObjectiveNorm::L2 && spec.beta == 0.0) return finish(y, TaskStatus::Converged, 1);

  Matrix E = rows.E;
  Vector e = rows.e;
  Matrix C = rows.C;
  Vector d = rows.d;
  Vector z = y;
  if (spec.norm == ObjectiveNorm::L1) {
    const Eigen::Index mi = rows.C.rows();
    E = Matrix::Zero(rows.E.rows(), 2 * n);
    E.leftCols(n) = rows.E;
    C = Matrix::Zero(mi + 2 * n, 2 * n);
    d.resize(mi + 2 * n);
    C.topLeftCorner(mi, n) = rows.C;
    d.head(mi) = rows.d;
    // y - t <= yhat and -y - t <= -yhat
    C.block(mi, 0, n, n) = Matrix::Identity(n, n);
    C.block(mi, n, n, n) = -Matrix::Identity(n, n);
    C.block(mi + n, 0, n, n) = -Matrix::Identity(n, n);
    C.block(mi + n, n, n, n) = -Matrix::Identity(n, n);
    d.segment(mi, n) = yhat;
    d.tail(n) = -yhat;
    z.resize(2 * n);
    z << y, (y - yhat).cwiseAbs();
  }

  const double step_tol = 1e-10 * (1.0 + yhat.cwiseAbs().maxCoeff());
  for (std::size_t iter = 1; iter <= spec.max_iter; ++iter) {
    const Model model = build_model(yhat, z, spec);
    const QpResult sub = solve_qp(model.hess, model.grad, E, e - E * z, C, d - C * z);
    if (sub.status != QpStatus::Optimal) return finish(z.head(n), TaskStatus::MaxIterExceeded, iter);
    const Vector& p = sub.x;
    if (p.cwiseAbs().maxCoeff() <= step_tol) return finish(z.head(n), TaskStatus::Converged, iter);

    const double slope = model.grad.dot(p);
    double alpha = 1.0;
    double f_new = solver_objective(yhat, z + p, spec);
    while (f_new > model.value + 1e-4 * alpha * slope && alpha > 1e-12) {
      alpha *= 0.5;
      f_new = solver_objective(yhat, z + alpha * p, spec);
    }
    if (f_new > model.value) return finish(z.head(n), TaskStatus::Converged, iter);
    z += alpha * p;
    if ((alpha * p).cwiseAbs().maxCoeff() <= step_tol) return finish(z.head(n), TaskStatus::Converged, iter);
    if (model.value - f_new <= 1e-14 * (1.0 + std::abs(model.value))) {
      return finish(z.head(n), TaskStatus::Converged, iter);
    }
  }
  y = z.head(n);
  return finish(y, TaskStatus::MaxIterExceeded, spec.max_iter);
}

std::string TaskResult::report() const {
  std::ostringstream os;
  os.precision(12);
  os << "status = " << (status == TaskStatus::Converged ? "converged" : "max_iter_exceeded") << "\n"
     << "iterations = " << iterations << "\n"
     << "objective = " << objective << "\n"
     << "coherence_violation = " << coherence_violation << "\n"
     << "eq_violation = " << eq_violation << "\n"
     << "ineq_violation = " << ineq_violation << "\n";
  return os.str();
}

}  // namespace gmpar
