#include "cipush/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace cipush::qp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kBoundInf = 1e19;

// Canonical internal row: n . x >= b (inequalities and bounds are negated on
// entry as needed).  kind/pos map multipliers back to the caller's layout.
struct CRow {
  std::vector<int> idx;
  std::vector<double> val;
  double b = 0.0;
  bool is_eq = false;
  int kind = 0;  // 0 eq, 1 ineq, 2 lb, 3 ub
  int pos = 0;
};

double cdot(const CRow& r, const Vec& x) {
  double s = 0.0;
  for (size_t k = 0; k < r.idx.size(); ++k) s += r.val[k] * x[r.idx[k]];
  return s;
}

struct Workspace {
  int n = 0;
  Vec x;
  Mat J;               // n x n operator L^{-T} Q
  Mat R;               // upper-triangular working-set factor (top-left q x q)
  std::vector<int> active;  // canonical row ids
  Vec u;               // multipliers of active rows (aligned with `active`)
  int q = 0;

  Vec d, z, r, np_dense;  // scratch
};

// d = J^T n_p for a sparse row.
void compute_d(const Workspace& w, const CRow& row, Vec& d) {
  d.setZero(w.n);
  for (size_t k = 0; k < row.idx.size(); ++k) {
    d += row.val[k] * w.J.row(row.idx[k]).transpose();
  }
}

void apply_givens_cols(Mat& J, int c1, int c2, double c, double s) {
  // [col_c1, col_c2] <- [col_c1*c + col_c2*s, -col_c1*s + col_c2*c]
  const int n = J.rows();
  for (int i = 0; i < n; ++i) {
    const double a = J(i, c1), b = J(i, c2);
    J(i, c1) = c * a + s * b;
    J(i, c2) = -s * a + c * b;
  }
}

// Appends row p to the working set.  `d` must be J^T n_p for the current J.
bool add_to_working_set(Workspace& w, int p, Vec& d, double u_new) {
  const int n = w.n, q = w.q;
  for (int i = n - 1; i > q; --i) {
    const double a = d[i - 1], b = d[i];
    if (b == 0.0) continue;
    const double h = std::hypot(a, b);
    const double c = a / h, s = b / h;
    d[i - 1] = h;
    d[i] = 0.0;
    apply_givens_cols(w.J, i - 1, i, c, s);
  }
  if (std::abs(d[q]) < 1e-14) return false;  // dependent row, refuse
  w.R.col(q).head(q + 1) = d.head(q + 1);
  w.active.push_back(p);
  Vec u2(w.q + 1);
  u2.head(w.q) = w.u.head(w.q);
  u2[w.q] = u_new;
  w.u = u2;
  w.q += 1;
  return true;
}

// Removes the working-set entry at position k (not row id).
void drop_from_working_set(Workspace& w, int k) {
  const int q = w.q;
  // Shift R columns left past k, leaving a Hessenberg block to re-triangularize.
  for (int j = k; j < q - 1; ++j) w.R.col(j).head(q) = w.R.col(j + 1).head(q);
  w.active.erase(w.active.begin() + k);
  for (int i = k; i < q - 1; ++i) w.u[i] = w.u[i + 1];
  w.q -= 1;
  w.u.conservativeResize(w.q);
  for (int j = k; j < w.q; ++j) {
    const double a = w.R(j, j), b = w.R(j + 1, j);
    if (b != 0.0) {
      const double h = std::hypot(a, b);
      const double c = a / h, s = b / h;
      for (int col = j; col < w.q; ++col) {
        const double r1 = w.R(j, col), r2 = w.R(j + 1, col);
        w.R(j, col) = c * r1 + s * r2;
        w.R(j + 1, col) = -s * r1 + c * r2;
      }
      apply_givens_cols(w.J, j, j + 1, c, s);
    }
    w.R(j + 1, j) = 0.0;
  }
}

}  // namespace

std::shared_ptr<const Factors> factorize(const Mat& H, double reg) {
  auto f = std::make_shared<Factors>();
  Mat Hr = H;
  double delta = 0.0;
  // Escalate until the shift dominates any negative eigenvalue (quasi-Newton
  // callers can hand in numerically indefinite matrices); only a non-finite H
  // is allowed to fall through to the throw below.
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::LLT<Mat> llt(Hr);
    if (llt.info() == Eigen::Success) {
      f->L = llt.matrixL();
      // Guard against a successful factorization with a tiny pivot.
      if (f->L.diagonal().minCoeff() > 1e-12 * (1.0 + f->L.diagonal().maxCoeff())) {
        f->LinvT = f->L.transpose()
                       .triangularView<Eigen::Upper>()
                       .solve(Mat::Identity(H.rows(), H.cols()));
        f->reg_used = delta;
        return f;
      }
    }
    delta = (delta == 0.0) ? reg : delta * 1e3;
    Hr = H + delta * Mat::Identity(H.rows(), H.cols());
  }
  throw std::runtime_error("qp::factorize: H not positive definite");
}

const char* status_name(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::MaxIter: return "max_iter";
    default: return "numerical_error";
  }
}

Result solve(const Problem& p, const Options& opt, const WarmStart* warm) {
  const int n = static_cast<int>(p.H.rows());
  if (p.H.cols() != n || p.g.size() != n) {
    throw std::invalid_argument("qp::solve: H/g dimension mismatch");
  }
  const bool has_lb = p.lb.size() > 0, has_ub = p.ub.size() > 0;
  if ((has_lb && p.lb.size() != n) || (has_ub && p.ub.size() != n)) {
    throw std::invalid_argument("qp::solve: bound dimension mismatch");
  }

  // Canonicalize rows to n.x >= b.
  //
  // A variable with lb == ub is emitted as a single equality row rather than
  // an opposite-sign lb/ub pair.  The pair form is degenerate for the dual
  // active-set method: once one side is active, the other is linearly
  // dependent with a negative expressing coefficient, and any floating-point
  // drift on the active side makes the twin look violated-and-unblockable,
  // i.e. spuriously infeasible.
  std::vector<bool> pinned(n, false);
  if (has_lb && has_ub) {
    for (int i = 0; i < n; ++i) {
      if (p.lb[i] > -kBoundInf && p.ub[i] < kBoundInf &&
          std::abs(p.ub[i] - p.lb[i]) <=
              1e-12 * (1.0 + std::abs(p.lb[i]) + std::abs(p.ub[i]))) {
        pinned[i] = true;
      }
    }
  }
  std::vector<CRow> rows;
  rows.reserve(p.eq.size() + p.ineq.size() + 2 * n);
  for (size_t i = 0; i < p.eq.size(); ++i) {
    CRow r{p.eq[i].idx, p.eq[i].val, p.eq[i].b, true, 0, static_cast<int>(i)};
    rows.push_back(std::move(r));
  }
  for (int i = 0; i < n; ++i) {
    if (pinned[i]) {
      rows.push_back(CRow{{i}, {1.0}, 0.5 * (p.lb[i] + p.ub[i]), true, 4, i});
    }
  }
  const int first_ineq = static_cast<int>(rows.size());
  for (size_t i = 0; i < p.ineq.size(); ++i) {
    CRow r{p.ineq[i].idx, p.ineq[i].val, -p.ineq[i].b, false, 1, static_cast<int>(i)};
    for (auto& v : r.val) v = -v;
    rows.push_back(std::move(r));
  }
  if (has_lb) {
    for (int i = 0; i < n; ++i) {
      if (p.lb[i] > -kBoundInf && !pinned[i]) {
        rows.push_back(CRow{{i}, {1.0}, p.lb[i], false, 2, i});
      }
    }
  }
  if (has_ub) {
    for (int i = 0; i < n; ++i) {
      if (p.ub[i] < kBoundInf && !pinned[i]) {
        rows.push_back(CRow{{i}, {-1.0}, -p.ub[i], false, 3, i});
      }
    }
  }
  const int m = static_cast<int>(rows.size());

  auto fac = p.factors ? p.factors : factorize(p.H, opt.reg);

  Workspace w;
  w.n = n;
  w.J = fac->LinvT;
  w.R = Mat::Zero(n, n);
  w.u = Vec();
  // Unconstrained minimizer x = -H^{-1} g.
  w.x = -(fac->LinvT * (fac->LinvT.transpose() * p.g));

  Result res;
  auto fail = [&](Status s) {
    res.status = s;
    res.x = w.x;
    return res;
  };

  const int max_iter = opt.max_iter > 0 ? opt.max_iter
                                        : std::min(200000, 50 * (n + m) + 200);
  int iter = 0;

  // Adds row id `pid`; returns Optimal when added, Infeasible/Numerical on
  // failure.  Handles intermediate drops of blocking inequality rows.
  auto add_row = [&](int pid) -> Status {
    const CRow& row = rows[pid];
    double u_add = 0.0;  // accumulated dual of the incoming row
    while (true) {
      if (++iter > max_iter) return Status::MaxIter;
      compute_d(w, row, w.d);
      const int q = w.q;
      // z = J2 J2^T n_p ; r = R^{-1} J1^T n_p
      w.z.noalias() = w.J.rightCols(n - q) * w.d.tail(n - q);
      if (q > 0) {
        w.r = w.R.topLeftCorner(q, q)
                  .triangularView<Eigen::Upper>()
                  .solve(w.d.head(q));
      }
      double zTn = 0.0;
      for (size_t k = 0; k < row.idx.size(); ++k) zTn += row.val[k] * w.z[row.idx[k]];

      double t1 = kInf;
      int blocker = -1;
      for (int k = 0; k < q; ++k) {
        if (rows[w.active[k]].is_eq) continue;
        if (w.r[k] > 1e-12) {
          const double cand = w.u[k] / w.r[k];
          if (cand < t1) {
            t1 = cand;
            blocker = k;
          }
        }
      }

      const double s = cdot(row, w.x) - row.b;
      // Dependence is a property of the normals alone: compare the projected
      // mass ||d2||^2 = zTn against the full ||d||^2 = n^T H^{-1} n.
      const double dnorm2 = w.d.squaredNorm();
      const bool z_ok = zTn > 1e-12 * dnorm2;

      if (!z_ok) {
        if (row.is_eq) {
          // Dependent equality: consistent -> skip, inconsistent -> infeasible.
          if (std::abs(s) <= std::max(1e-8, opt.feas_tol * (1.0 + std::abs(row.b)))) {
            return Status::Optimal;  // nothing to do
          }
          if (std::getenv("QP_DEP_DEBUG"))  // DEBUG
            std::fprintf(stderr, "[qpdep] eq pid=%d s=%g zTn=%g b=%g q=%d\n", pid, s, zTn,
                         row.b, w.q);
          return Status::Infeasible;
        }
        if (blocker < 0) {
          if (std::getenv("QP_DEP_DEBUG")) {  // DEBUG
            std::fprintf(stderr, "[qpdep] ineq pid=%d kind=%d pos=%d s=%g zTn=%g b=%g q=%d act:",
                         pid, row.kind, row.pos, s, zTn, row.b, w.q);
            for (int k = 0; k < w.q; ++k)
              std::fprintf(stderr, " %d(k%d,p%d)", w.active[k], rows[w.active[k]].kind,
                           rows[w.active[k]].pos);
            std::fprintf(stderr, "\n");
          }
          return Status::Infeasible;
        }
        // Pure dual step.
        const double t = t1;
        for (int k = 0; k < q; ++k) w.u[k] -= t * w.r[k];
        u_add += t;
        drop_from_working_set(w, blocker);
        continue;
      }

      const double t2 = -s / zTn;
      const double t = row.is_eq ? t2 : std::min(t1, t2);
      if (!std::isfinite(t)) return Status::NumericalError;

      w.x += t * w.z;
      for (int k = 0; k < w.q; ++k) w.u[k] -= t * w.r[k];
      u_add += t;

      if (row.is_eq || t2 <= t1) {
        if (!add_to_working_set(w, pid, w.d, u_add)) {
          if (row.is_eq) return Status::Optimal;  // dependent but consistent
          return Status::NumericalError;
        }
        return Status::Optimal;
      }
      drop_from_working_set(w, blocker);
    }
  };

  // Phase 1: equalities, in order.
  for (int i = 0; i < first_ineq; ++i) {
    const Status st = add_row(i);
    if (st != Status::Optimal) return fail(st);
  }
  // Phase 2: warm-start hints (only rows that are actually violated).
  if (warm) {
    for (int pid : warm->active_rows) {
      if (pid < first_ineq || pid >= m) continue;
      const double s = cdot(rows[pid], w.x) - rows[pid].b;
      if (s < -opt.feas_tol) {
        const Status st = add_row(pid);
        if (st != Status::Optimal) return fail(st);
      }
    }
  }
  // Phase 3: most-violated-first main loop.
  while (true) {
    if (++iter > max_iter) return fail(Status::MaxIter);
    double worst = -opt.feas_tol;
    int pid = -1;
    for (int i = first_ineq; i < m; ++i) {
      bool active = false;
      for (int k = 0; k < w.q; ++k) {
        if (w.active[k] == i) {
          active = true;
          break;
        }
      }
      if (active) continue;
      const double s = cdot(rows[i], w.x) - rows[i].b;
      if (s < worst) {
        worst = s;
        pid = i;
      }
    }
    if (pid < 0) break;
    const Status st = add_row(pid);
    if (st != Status::Optimal) return fail(st);
  }

  // Optional polish: exact KKT re-solve on the final active set.
  if (opt.polish && w.q > 0) {
    const int q = w.q;
    Mat K = Mat::Zero(n + q, n + q);
    K.topLeftCorner(n, n) = p.H;
    Vec rhs(n + q);
    rhs.head(n) = -p.g;
    for (int k = 0; k < q; ++k) {
      const CRow& row = rows[w.active[k]];
      for (size_t j = 0; j < row.idx.size(); ++j) {
        K(row.idx[j], n + k) = row.val[j];
        K(n + k, row.idx[j]) = row.val[j];
      }
      rhs[n + k] = row.b;
    }
    Eigen::PartialPivLU<Mat> lu(K);
    Vec sol = lu.solve(rhs);
    if ((K * sol - rhs).lpNorm<Eigen::Infinity>() < 1e-6 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
      w.x = sol.head(n);
      // The KKT system solves Hx + N z = -g while the working set tracks
      // Hx + g = N u, so u = -z.
      for (int k = 0; k < q; ++k) w.u[k] = -sol[n + k];
    }
  }

  // Map multipliers back and compute the KKT residual.
  res.status = Status::Optimal;
  res.x = w.x;
  res.y_eq = Vec::Zero(p.eq.size());
  res.lam_ineq = Vec::Zero(p.ineq.size());
  res.mu_lb = Vec::Zero(has_lb ? n : 0);
  res.mu_ub = Vec::Zero(has_ub ? n : 0);
  res.iterations = iter;
  res.active_rows.assign(w.active.begin(), w.active.end());

  Vec st = p.H * w.x + p.g;
  for (int k = 0; k < w.q; ++k) {
    const CRow& row = rows[w.active[k]];
    for (size_t j = 0; j < row.idx.size(); ++j) {
      st[row.idx[j]] -= w.u[k] * row.val[j];
    }
    switch (row.kind) {
      case 0: res.y_eq[row.pos] = -w.u[k]; break;
      case 1: res.lam_ineq[row.pos] = w.u[k]; break;
      case 2: res.mu_lb[row.pos] = w.u[k]; break;
      case 3: res.mu_ub[row.pos] = w.u[k]; break;
      case 4:
        // Pinned bound (lb == ub): the free-signed equality multiplier splits
        // into the usual nonnegative lower/upper pair.
        res.mu_lb[row.pos] = std::max(w.u[k], 0.0);
        res.mu_ub[row.pos] = std::max(-w.u[k], 0.0);
        break;
    }
  }
  double kkt = st.lpNorm<Eigen::Infinity>();
  for (int i = 0; i < m; ++i) {
    const double s = cdot(rows[i], w.x) - rows[i].b;
    if (rows[i].is_eq) {
      kkt = std::max(kkt, std::abs(s));
    } else if (s < 0.0) {
      kkt = std::max(kkt, -s);
    }
  }
  for (int k = 0; k < w.q; ++k) {
    const CRow& row = rows[w.active[k]];
    if (!row.is_eq) {
      kkt = std::max(kkt, std::abs(w.u[k] * (cdot(row, w.x) - row.b)));
      if (w.u[k] < 0.0) kkt = std::max(kkt, -w.u[k]);
    }
  }
  res.kkt_residual = kkt;
  return res;
}

}  // namespace cipush::qp
