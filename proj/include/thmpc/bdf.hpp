#pragma once

// Backward-differentiation time discretization of the CV dynamics and the
// stacked horizon constraint system used by the predictive controller.

#include "thmpc/netmodel.hpp"

#include <optional>
#include <span>
#include <stdexcept>

namespace thmpc {

class MissingHistory : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Coefficients of  theta_k - a1 theta_{k-1} + a2 theta_{k-2} - gamma dt f = 0.
struct BdfCoefficients {
  double gamma;
  double a1;
  double a2;
};

BdfCoefficients bdf_coefficients(int order);

class DiscreteModel {
 public:
  DiscreteModel(const CvNetwork& net, double dt, int order = 2);

  const CvNetwork& net() const { return *net_; }
  double dt() const { return dt_; }
  int order() const { return order_; }

 private:
  const CvNetwork* net_;
  double dt_;
  int order_;
};

/// Temperatures preceding the step being solved. `theta_km2` is absent at startup.
struct StepHistory {
  Vector theta_km1;
  std::optional<Vector> theta_km2;
};

/// Effective order of a step: BDF1 while only one past state exists.
int effective_order(const DiscreteModel& model, const StepHistory& history);

/// Residual of the discrete dynamics at `point` (which carries theta_k) [K].
Vector step_residual(const DiscreteModel& model, const Point& point, const StepHistory& history, int order);
Vector step_residual(const DiscreteModel& model, const Point& point, const StepHistory& history);

/// Jacobian of the step residual w.r.t. a block of the current point.
SparseMatrix step_jacobian(const DiscreteModel& model, const Point& point, Block b, int order);

/// Per-step slots of the stacked horizon vector.
struct StepLayout {
  Index theta = 0, mflow = 0, zh = 0, zt = 0, uh = 0, ut = 0;  // offsets
  Index size = 0;

  explicit StepLayout(const Dimensions& dims);
  StepLayout() = default;
  Index offset(Block b) const;
};

/// Row families of one horizon step, in stacked order.
enum class Family { dynamics, f_h, f_t, mflow_link, g_h, g_t };

struct FamilyRange {
  Family family;
  int step;
  Index offset;
  Index rows;
};

class ForecastTooShort : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Stacked equality/inequality system over n_c steps. Equalities per step are
/// [dynamics | f_h | f_t | mflow_link], inequalities per step are [g_h | g_t].
/// The first step couples to the supplied history; later steps couple to
/// their predecessors inside the stacked vector.
class HorizonAssembly {
 public:
  HorizonAssembly(const DiscreteModel& model, int n_c, StepHistory history,
                  std::span<const Vector> disturbances, std::span<const double> prices);

  const DiscreteModel& model() const { return *model_; }
  const CvNetwork& net() const { return model_->net(); }
  int horizon() const { return n_c_; }
  const StepLayout& layout() const { return layout_; }
  const StepHistory& history() const { return history_; }
  const Vector& disturbance(int step) const { return disturbances_[static_cast<std::size_t>(step)]; }
  double price(int step) const { return prices_[static_cast<std::size_t>(step)]; }

  Index size() const { return layout_.size * n_c_; }
  Index equality_rows() const { return eq_rows_per_step_ * n_c_; }
  Index inequality_rows() const { return ineq_rows_per_step_ * n_c_; }
  int order_at(int step) const;

  std::vector<FamilyRange> equality_families() const;
  std::vector<FamilyRange> inequality_families() const;

  /// History of step `step` taken from the stacked vector where needed.
  StepHistory history_at(const Vector& x, int step) const;
  /// Point of one step; CV flows are re-derived from the u_h slot.
  Point point_at(const Vector& x, int step) const;
  /// Writes a point (and the CV flows it implies) into the stacked vector.
  void set_point(Vector& x, int step, const Point& p) const;

  Vector eval_equalities(const Vector& x) const;
  Vector eval_inequalities(const Vector& x) const;
  /// Horizon costs (J_h, J_t) [EUR] with per-step prices.
  std::pair<double, double> objective(const Vector& x) const;

 private:
  const DiscreteModel* model_;
  int n_c_;
  StepHistory history_;
  std::vector<Vector> disturbances_;
  std::vector<double> prices_;
  StepLayout layout_;
  Index eq_rows_per_step_ = 0;
  Index ineq_rows_per_step_ = 0;
};

/// Scaled stacked equality residual: max |r_i| / (1 + max |x_j|).
double scaled_equality_residual(const HorizonAssembly& h, const Vector& x);
/// Largest positive inequality value, scaled the same way.
double scaled_inequality_violation(const HorizonAssembly& h, const Vector& x);

}  // namespace thmpc
