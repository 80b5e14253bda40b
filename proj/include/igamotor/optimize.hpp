#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "igamotor/sensitivity.hpp"

namespace igamotor::optimize {

// ---------------------------------------------------------------------------
// Generic inequality-constrained minimization over the unit box:
//   min f(x)  s.t.  c_i(x) <= 0,  x in [0,1]^n
// by an augmented-Lagrangian outer loop with a projected limited-memory
// quasi-Newton inner solver. Points the model cannot evaluate (e.g. inverted
// geometry) report failure and are rejected by the line search.

class Problem {
 public:
  virtual ~Problem() = default;
  virtual int dim() const = 0;
  virtual int num_constraints() const = 0;
  // Evaluates f (always), the inequality values c (if m > 0), and optionally
  // the gradient/Jacobian when the pointers are non-null. Returns false when
  // the point is unevaluable; outputs are then unspecified.
  virtual bool eval(const VecX& x, double* f, VecX* grad, VecX* c,
                    Eigen::MatrixXd* jc) = 0;
};

struct Options {
  double tolerance = 1e-6;        // projected augmented-Lagrangian gradient
  VecX feasibility;               // per-constraint targets; empty -> 1e-6
  // Per-constraint normalization applied inside the augmented Lagrangian so
  // that rho acts on O(1) quantities regardless of physical units; empty -> 1.
  // Feasibility targets above stay in raw constraint units.
  VecX constraint_scale;
  int max_iterations = 100;       // accepted steps, all outer rounds combined
  int max_outer = 30;
  int max_inner = 0;              // accepted steps per outer round; 0 = no cap
  int memory = 8;                 // quasi-Newton history pairs
  double armijo = 1e-4;
  double step_floor = 1e-12;      // line-search backtracking limit
  double rho0 = 10.0;             // initial penalty (in normalized units)
  double rho_growth = 10.0;
  double viol_decrease = 0.25;    // required violation shrink per outer round
  // Called after every accepted step (and once for the initial point).
  std::function<void(const struct IterationRecord&)> on_accept;
};

struct IterationRecord {
  int iteration = 0;   // accepted-step counter; 0 is the initial point
  int outer = 0;
  double f = 0.0;
  double merit = 0.0;  // augmented-Lagrangian value at the current (mu, rho)
  double max_violation = 0.0;  // max_i max(0, c_i), unnormalized
  double pg_norm = 0.0;        // projected gradient norm of the merit
  VecX x;
};

struct Result {
  VecX x;
  double f = 0.0;
  VecX c;
  VecX multipliers;
  bool converged = false;
  int iterations = 0;
  std::vector<IterationRecord> history;
};

namespace detail {

struct LbfgsMemory {
  struct Pair {
    VecX s, y;
    double inv_sy;
  };
  std::deque<Pair> pairs;
  int capacity = 8;

  void push(const VecX& s, const VecX& y) {
    const double sy = s.dot(y);
    if (sy <= 1e-10 * s.norm() * y.norm()) return;  // curvature guard
    pairs.push_back({s, y, 1.0 / sy});
    if (static_cast<int>(pairs.size()) > capacity) pairs.pop_front();
  }

  // Two-loop recursion: returns -H g (a descent direction estimate).
  VecX direction(const VecX& g) const {
    VecX q = g;
    std::vector<double> alpha(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
      alpha[i] = pairs[i].inv_sy * pairs[i].s.dot(q);
      q -= alpha[i] * pairs[i].y;
    }
    if (!pairs.empty()) {
      const auto& last = pairs.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double beta = pairs[i].inv_sy * pairs[i].y.dot(q);
      q += (alpha[i] - beta) * pairs[i].s;
    }
    return -q;
  }
};

}  // namespace detail

inline Result minimize(Problem& prob, VecX x, const Options& opt = {}) {
  const int n = prob.dim();
  const int m = prob.num_constraints();
  x = x.cwiseMax(0.0).cwiseMin(1.0);

  VecX feas = opt.feasibility;
  if (feas.size() != m) feas = VecX::Constant(std::max(m, 1), 1e-6);
  VecX cs = opt.constraint_scale;
  if (cs.size() != m) cs = VecX::Ones(std::max(m, 1));
  VecX mu = VecX::Zero(m);  // multipliers for the normalized constraints c/cs
  double rho = opt.rho0;

  double f = 0.0;
  VecX g(n), c(m);
  Eigen::MatrixXd jc(m, n);
  if (!prob.eval(x, &f, &g, &c, &jc))
    throw std::runtime_error("initial design is not evaluable");

  // Penalty value, its gradient, and diagnostics at the active (mu, rho).
  const auto merit_of = [&](double fv, const VecX& cv) {
    double v = fv;
    for (int i = 0; i < m; ++i) {
      const double t = mu[i] + rho * cv[i] / cs[i];
      v += (t > 0.0 ? t * t - mu[i] * mu[i] : -mu[i] * mu[i]) / (2.0 * rho);
    }
    return v;
  };
  const auto merit_grad = [&](const VecX& gv, const VecX& cv, const Eigen::MatrixXd& jcv) {
    VecX ga = gv;
    for (int i = 0; i < m; ++i) {
      const double t = mu[i] + rho * cv[i] / cs[i];
      if (t > 0.0) ga += (t / cs[i]) * jcv.row(i).transpose();
    }
    return ga;
  };
  const auto projected_gradient_norm = [&](const VecX& xv, const VecX& ga) {
    return (xv - (xv - ga).cwiseMax(0.0).cwiseMin(1.0)).norm();
  };
  const auto max_violation = [&](const VecX& cv) {
    double v = 0.0;
    for (int i = 0; i < m; ++i) v = std::max(v, cv[i]);
    return v;
  };
  // Worst violation relative to each constraint's feasibility target.
  const auto scaled_violation = [&](const VecX& cv) {
    double v = 0.0;
    for (int i = 0; i < m; ++i) v = std::max(v, cv[i] / feas[i]);
    return v;
  };

  Result res;
  res.history.reserve(static_cast<std::size_t>(opt.max_iterations) + 1);
  int total = 0;
  const auto record = [&](int outer, const VecX& ga) {
    IterationRecord r;
    r.iteration = total;
    r.outer = outer;
    r.f = f;
    r.merit = merit_of(f, c);
    r.max_violation = max_violation(c);
    r.pg_norm = projected_gradient_norm(x, ga);
    r.x = x;
    res.history.push_back(r);
    if (opt.on_accept) opt.on_accept(res.history.back());
  };
  record(0, merit_grad(g, c, jc));

  bool converged = false;
  double prev_viol = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < opt.max_outer && total < opt.max_iterations; ++outer) {
    detail::LbfgsMemory mem;
    mem.capacity = opt.memory;
    const double tol_inner =
        std::max(opt.tolerance, 1e-2 * std::pow(0.1, outer));

    bool stalled = false;
    int inner_steps = 0;
    while (total < opt.max_iterations &&
           (opt.max_inner <= 0 || inner_steps < opt.max_inner)) {
      const VecX ga = merit_grad(g, c, jc);
      if (projected_gradient_norm(x, ga) <= tol_inner) break;

      VecX d = mem.direction(ga);
      if (d.dot(ga) >= -1e-12 * d.norm() * ga.norm()) {
        mem.pairs.clear();
        d = -ga;
      }

      const double merit0 = merit_of(f, c);
      bool accepted = false;
      for (double alpha = 1.0; alpha >= opt.step_floor; alpha *= 0.5) {
        const VecX xt = (x + alpha * d).cwiseMax(0.0).cwiseMin(1.0);
        const double move = (xt - x).norm();
        if (move == 0.0) break;  // box traps the whole direction
        double ft = 0.0;
        VecX ct(m);
        if (!prob.eval(xt, &ft, nullptr, &ct, nullptr)) continue;  // sentinel
        const double decrease = opt.armijo * std::min(0.0, ga.dot(xt - x));
        if (merit_of(ft, ct) > merit0 + decrease) continue;
        double f2 = 0.0;
        VecX g2(n), c2(m);
        Eigen::MatrixXd jc2(m, n);
        if (!prob.eval(xt, &f2, &g2, &c2, &jc2)) continue;
        const VecX ga2 = merit_grad(g2, c2, jc2);
        mem.push(xt - x, ga2 - ga);
        x = xt;
        f = f2;
        g = std::move(g2);
        c = std::move(c2);
        jc = std::move(jc2);
        ++total;
        ++inner_steps;
        accepted = true;
        record(outer, ga2);
        break;
      }
      if (!accepted) {
        stalled = true;
        break;  // inner stall at this (mu, rho)
      }
    }

    for (int i = 0; i < m; ++i) mu[i] = std::max(0.0, mu[i] + rho * c[i] / cs[i]);
    const double viol = scaled_violation(c);
    const VecX ga = merit_grad(g, c, jc);
    if (projected_gradient_norm(x, ga) <= opt.tolerance && viol <= 1.0) {
      converged = true;
      break;
    }
    // A feasible point where the line search cannot descend any further is
    // final even if the gradient tolerance is unmet; rounds with penalty
    // growth are only worthwhile while constraints are violated.
    if (stalled && viol <= 1.0) break;
    if (viol > 1.0 && viol > opt.viol_decrease * prev_viol) rho *= opt.rho_growth;
    prev_viol = viol;
  }

  res.x = x;
  res.f = f;
  res.c = c;
  res.multipliers = mu.cwiseQuotient(cs.head(m));  // back to raw constraint units
  res.converged = converged;
  res.iterations = total;
  return res;
}

// ---------------------------------------------------------------------------
// Machine design problem: x = [17 box-scaled parameters | 29 scaled radial
// surface offsets] in [0,1]^46, objective
//   f = w_area * A_magnet + w_ripple * std(T) + w_smooth * S(offsets)
// subject to mean(T) >= T_target and the nine clearance shortfalls g <= 0.

inline constexpr int kNumParams = 17;
inline constexpr int kNumOffsets = 29;
inline constexpr int kDesignDim = kNumParams + kNumOffsets;

inline VecX encode_design(const machine::Parameters& p, const VecX& offsets) {
  VecX x(kDesignDim);
  for (int l = 0; l < kNumParams; ++l) {
    const auto& info = machine::param_table()[static_cast<std::size_t>(l)];
    x[l] = (p[l] - info.lo) / (info.hi - info.lo);
  }
  for (int j = 0; j < kNumOffsets; ++j)
    x[kNumParams + j] = (offsets[j] + machine::kOffsetBound) / (2.0 * machine::kOffsetBound);
  return x;
}

inline machine::Parameters decode_params(const VecX& x) {
  machine::Parameters p;
  for (int l = 0; l < kNumParams; ++l) {
    const auto& info = machine::param_table()[static_cast<std::size_t>(l)];
    p[l] = info.lo + x[l] * (info.hi - info.lo);
  }
  return p;
}

inline VecX decode_offsets(const VecX& x) {
  VecX d(kNumOffsets);
  for (int j = 0; j < kNumOffsets; ++j)
    d[j] = x[kNumParams + j] * 2.0 * machine::kOffsetBound - machine::kOffsetBound;
  return d;
}

enum class Mode { kParam, kShape, kSequential, kCombined };

inline Mode mode_of(const std::string& name) {
  if (name == "param") return Mode::kParam;
  if (name == "shape") return Mode::kShape;
  if (name == "sequential") return Mode::kSequential;
  if (name == "combined") return Mode::kCombined;
  throw std::invalid_argument("unknown optimization mode: " + name);
}

struct MachineOptimizationConfig {
  Mode mode = Mode::kCombined;
  double w_area = 10000.0;
  double w_ripple = 100.0;
  double w_smooth = 1000.0;
  double torque_target = -1.0;  // <= 0: initial mean torque * (1 + margin)
  double target_margin = 0.02;
  std::vector<double> angles = machine::MachineSimulation::default_sweep_angles();
  int max_iterations = 100;
  double tolerance = 1e-6;
  double torque_feasibility_rel = 1e-3;  // on the torque target
  double clearance_feasibility = 1e-6;   // metres
  int memory = 8;
  // Shape mode may additionally tune the electric phase angle.
  bool shape_optimizes_phase = true;
  machine::Parameters initial;
  VecX initial_offsets = VecX::Zero(kNumOffsets);
  machine::SimulationOptions simulation;
  // Streaming hook, fired after each accepted step (history row flushing).
  std::function<void(const struct MachineIterationRecord&)> on_iteration;
};

// Objective components at one design, kept for reporting.
struct DesignComponents {
  double f = 0.0;
  double area = 0.0;
  double ripple = 0.0;
  double smooth = 0.0;
  double mean_torque = 0.0;
  std::vector<double> torque;
};

class MachineDesignProblem final : public Problem {
 public:
  // Ripple regularization scale [N m]; far below the design-relevant ripple
  // (1e-2) but far above the torque-profile noise floor (1e-9).
  static constexpr double kRippleSmoothing = 1e-5;

  MachineDesignProblem(const MachineOptimizationConfig& cfg, const materials::BHCurve* bh,
                       Mode phase_mode)
      : cfg_(cfg), bh_(bh), x_full_(encode_design(cfg.initial, cfg.initial_offsets)) {
    switch (phase_mode) {
      case Mode::kParam:
        for (int l = 0; l < kNumParams; ++l) active_.push_back(l);
        break;
      case Mode::kShape:
        if (cfg_.shape_optimizes_phase)
          active_.push_back(machine::Parameters::index_of("OPERATING_ANGLE"));
        for (int j = 0; j < kNumOffsets; ++j) active_.push_back(kNumParams + j);
        break;
      case Mode::kCombined:
        for (int i = 0; i < kDesignDim; ++i) active_.push_back(i);
        break;
      case Mode::kSequential:
        throw std::invalid_argument("sequential mode must be split into phases");
    }
    move_to(x_full_);  // initial design must be buildable
    if (cfg_.torque_target > 0.0) {
      t_target_ = cfg_.torque_target;
    } else {
      double f0 = 0.0;
      if (!eval(reduce(x_full_), &f0, nullptr, nullptr, nullptr))
        throw SolverError("initial design did not converge while deriving the torque target");
      t_target_ = last_.mean_torque * (1.0 + cfg_.target_margin);
    }
  }

  int dim() const override { return static_cast<int>(active_.size()); }
  int num_constraints() const override { return 10; }  // torque + 9 clearances

  double torque_target() const { return t_target_; }
  const DesignComponents& last() const { return last_; }
  const std::vector<int>& active() const { return active_; }
  long long evals() const { return evals_; }

  VecX expand(const VecX& reduced) const {
    VecX xf = x_full_;
    for (std::size_t i = 0; i < active_.size(); ++i)
      xf[active_[i]] = reduced[static_cast<Eigen::Index>(i)];
    return xf;
  }
  VecX reduce(const VecX& full) const {
    VecX xr(static_cast<Eigen::Index>(active_.size()));
    for (std::size_t i = 0; i < active_.size(); ++i)
      xr[static_cast<Eigen::Index>(i)] = full[active_[i]];
    return xr;
  }

  VecX feasibility_targets() const {
    VecX feas(10);
    feas[0] = cfg_.torque_feasibility_rel * t_target_;
    for (int i = 1; i < 10; ++i) feas[i] = cfg_.clearance_feasibility;
    return feas;
  }

  bool eval(const VecX& xr, double* f, VecX* grad, VecX* c, Eigen::MatrixXd* jc) override {
    ++evals_;
    const VecX xf = expand(xr);
    try {
      move_to(xf);

      machine::SweepResult sweep;
      sweep.angles = cfg_.angles;
      VecX state = warm_.empty() ? VecX::Zero(sim_->problem().size()) : warm_.front();
      for (std::size_t i = 0; i < cfg_.angles.size(); ++i) {
        if (i < warm_.size()) state = warm_[i];
        const auto rep = sim_->solve(cfg_.angles[i], &state);
        if (!rep.converged) return false;
        sweep.torque.push_back(sim_->torque(state));
        sweep.iterations.push_back(rep.iterations);
        sweep.states.push_back(state);
      }
      warm_ = sweep.states;

      const machine::Parameters p = decode_params(xf);
      const VecX offsets = decode_offsets(xf);
      const machine::Smoothness sm = machine::offset_smoothness(sim_->rotor(), offsets);
      last_.area = machine::magnet_area(p);
      last_.ripple = sweep.torque_stddev();
      last_.smooth = sm.value;
      last_.mean_torque = sweep.mean_torque();
      last_.torque = sweep.torque;
      last_.f = cfg_.w_area * last_.area + cfg_.w_ripple * last_.ripple +
                cfg_.w_smooth * last_.smooth;
      // The optimizer minimizes a regularized ripple, sqrt(var + eps^2) - eps:
      // the plain standard deviation has a |.|-type kink at zero that makes
      // every line-search direction look uphill once the ripple is driven to
      // the valley floor, freezing the remaining objective terms. Reported
      // component values (last_) always use the exact standard deviation.
      const double ripple_opt =
          std::sqrt(last_.ripple * last_.ripple + kRippleSmoothing * kRippleSmoothing) -
          kRippleSmoothing;
      *f = cfg_.w_area * last_.area + cfg_.w_ripple * ripple_opt + cfg_.w_smooth * last_.smooth;

      if (c != nullptr) {
        const auto shortfalls = machine::clearance_shortfalls(p);
        (*c)(0) = t_target_ - last_.mean_torque;
        for (int i = 0; i < 9; ++i) (*c)(i + 1) = shortfalls[static_cast<std::size_t>(i)];
      }

      if (grad != nullptr || jc != nullptr) {
        if (!eng_) eng_ = std::make_unique<machine::SensitivityEngine>(sim_.get());
        const auto sg = eng_->gradients(sweep, kRippleSmoothing);

        // Native-unit gradients chained to the scaled box coordinates.
        VecX dmean(kDesignDim), dstd(kDesignDim), dsmooth(kDesignDim), darea(kDesignDim);
        const auto area_grad = machine::magnet_area_gradient(p);
        for (int l = 0; l < kNumParams; ++l) {
          const auto& info = machine::param_table()[static_cast<std::size_t>(l)];
          const double range = info.hi - info.lo;
          dmean[l] = sg.dmean_params[l] * range;
          dstd[l] = sg.dstd_params[l] * range;
          dsmooth[l] = 0.0;
          darea[l] = area_grad[l] * range;
        }
        for (int j = 0; j < kNumOffsets; ++j) {
          const double range = 2.0 * machine::kOffsetBound;
          dmean[kNumParams + j] = sg.dmean_offsets[j] * range;
          dstd[kNumParams + j] = sg.dstd_offsets[j] * range;
          dsmooth[kNumParams + j] = sm.gradient[j] * range;
          darea[kNumParams + j] = 0.0;
        }

        if (grad != nullptr) {
          const VecX df = cfg_.w_area * darea + cfg_.w_ripple * dstd + cfg_.w_smooth * dsmooth;
          *grad = reduce(df);
        }
        if (jc != nullptr) {
          Eigen::MatrixXd full = Eigen::MatrixXd::Zero(10, kDesignDim);
          full.row(0) = -dmean.transpose();
          const auto cj = machine::clearance_jacobian(p);
          for (int i = 0; i < 9; ++i)
            for (int l = 0; l < kNumParams; ++l) {
              const auto& info = machine::param_table()[static_cast<std::size_t>(l)];
              full(i + 1, l) = cj(i, l) * (info.hi - info.lo);
            }
          jc->resize(10, dim());
          for (std::size_t i = 0; i < active_.size(); ++i)
            jc->col(static_cast<Eigen::Index>(i)) = full.col(active_[i]);
        }
      }
      x_full_ = xf;
      return true;
    } catch (const GeometryError&) {
      return false;
    } catch (const SolverError&) {
      return false;
    } catch (const std::invalid_argument&) {
      return false;
    }
  }

 private:
  // Rebuilds or re-offsets the simulation so it matches the design point.
  void move_to(const VecX& xf) {
    const machine::Parameters p = decode_params(xf);
    const VecX offsets = decode_offsets(xf);
    bool params_changed = !sim_;
    if (sim_) {
      for (int l = 0; l < kNumParams && !params_changed; ++l)
        params_changed = sim_->params()[l] != p[l];
    }
    if (params_changed) {
      sim_ = std::make_unique<machine::MachineSimulation>(p, bh_, cfg_.simulation);
      eng_.reset();
      cur_offsets_ = VecX::Zero(kNumOffsets);
    }
    if ((offsets - cur_offsets_).norm() != 0.0) {
      sim_->set_offsets(offsets);  // validates; throws GeometryError when folded
      cur_offsets_ = offsets;
    }
  }

  MachineOptimizationConfig cfg_;
  const materials::BHCurve* bh_;
  VecX x_full_;
  std::vector<int> active_;
  std::unique_ptr<machine::MachineSimulation> sim_;
  std::unique_ptr<machine::SensitivityEngine> eng_;
  VecX cur_offsets_;
  std::vector<VecX> warm_;
  DesignComponents last_;
  double t_target_ = 0.0;
  long long evals_ = 0;
};

struct MachineIterationRecord {
  std::string phase;
  int iteration = 0;
  int outer = 0;
  double f = 0.0;
  double merit = 0.0;
  double mean_torque = 0.0;
  double area = 0.0;
  double ripple = 0.0;
  double smooth = 0.0;
  double max_violation = 0.0;
  double pg_norm = 0.0;
  long long evals = 0;  // cumulative model evaluations at this point
  VecX x;               // full 46-dim design vector
};

struct MachineOptimizationResult {
  machine::Parameters params;
  VecX offsets;
  VecX x;  // full design vector
  double torque_target = 0.0;
  bool converged = false;
  int iterations = 0;
  DesignComponents initial;
  DesignComponents final;
  VecX constraints;  // torque + clearances at the final point
  std::vector<MachineIterationRecord> history;
};

inline MachineOptimizationResult optimize_machine(const MachineOptimizationConfig& cfg,
                                                  const materials::BHCurve* bh) {
  MachineOptimizationResult out;

  std::vector<std::pair<std::string, Mode>> phases;
  if (cfg.mode == Mode::kSequential) {
    phases.emplace_back("param", Mode::kParam);
    phases.emplace_back("shape", Mode::kShape);
  } else {
    const char* name = cfg.mode == Mode::kParam    ? "param"
                       : cfg.mode == Mode::kShape  ? "shape"
                                                   : "combined";
    phases.emplace_back(name, cfg.mode);
  }

  MachineOptimizationConfig phase_cfg = cfg;
  int budget = cfg.max_iterations;
  long long evals_before = 0;
  Result core;
  std::unique_ptr<MachineDesignProblem> prob;
  for (std::size_t ph = 0; ph < phases.size(); ++ph) {
    const int phase_budget =
        phases.size() == 1 ? budget : (ph == 0 ? (budget + 1) / 2 : budget);
    prob = std::make_unique<MachineDesignProblem>(phase_cfg, bh, phases[ph].second);
    if (ph == 0) out.torque_target = prob->torque_target();
    phase_cfg.torque_target = out.torque_target;  // lock for later phases

    Options opt;
    opt.tolerance = cfg.tolerance;
    opt.max_iterations = phase_budget;
    opt.memory = cfg.memory;
    opt.feasibility = prob->feasibility_targets();
    // Normalize the augmented Lagrangian: torque deficit relative to the
    // target, clearance shortfalls relative to the 1.5 mm bridge thickness.
    opt.constraint_scale = VecX::Constant(10, 1.5e-3);
    opt.constraint_scale[0] = prob->torque_target();
    // Cap each multiplier round so the budget spans several penalty updates.
    opt.max_inner = std::max(8, phase_budget / 6);
    opt.step_floor = 1e-8;  // box units: below physical design resolution
    opt.on_accept = [&](const IterationRecord& r) {
      MachineIterationRecord mr;
      mr.phase = phases[ph].first;
      mr.iteration = static_cast<int>(out.history.size());
      mr.outer = r.outer;
      mr.f = r.f;
      mr.merit = r.merit;
      const auto& comps = prob->last();
      mr.mean_torque = comps.mean_torque;
      mr.area = comps.area;
      mr.ripple = comps.ripple;
      mr.smooth = comps.smooth;
      mr.max_violation = r.max_violation;
      mr.pg_norm = r.pg_norm;
      mr.evals = evals_before + prob->evals();
      mr.x = prob->expand(r.x);
      out.history.push_back(std::move(mr));
      if (cfg.on_iteration) cfg.on_iteration(out.history.back());
    };

    core = minimize(*prob, prob->reduce(encode_design(phase_cfg.initial,
                                                      phase_cfg.initial_offsets)),
                    opt);
    budget -= core.iterations;
    evals_before += prob->evals();
    if (ph == 0 && !out.history.empty()) {
      out.initial.f = out.history.front().f;
      out.initial.area = out.history.front().area;
      out.initial.ripple = out.history.front().ripple;
      out.initial.smooth = out.history.front().smooth;
      out.initial.mean_torque = out.history.front().mean_torque;
    }

    const VecX xfull = prob->expand(core.x);
    phase_cfg.initial = decode_params(xfull);
    phase_cfg.initial_offsets = decode_offsets(xfull);
    out.x = xfull;
    out.converged = core.converged;
    out.iterations += core.iterations;
    out.constraints = core.c;
    if (budget <= 0 && ph + 1 < phases.size()) break;
  }

  out.params = decode_params(out.x);
  out.offsets = decode_offsets(out.x);
  // Line-search rejections may have left the evaluator at a probed design;
  // refresh the component snapshot at the returned point.
  double ffinal = 0.0;
  if (prob->eval(prob->reduce(out.x), &ffinal, nullptr, nullptr, nullptr))
    out.final = prob->last();
  return out;
}

}  // namespace igamotor::optimize
