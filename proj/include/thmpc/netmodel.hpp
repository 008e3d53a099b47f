#pragma once

// Canonical continuous-time model of a network of control volumes (CVs).
//
// Every relation of the model (dynamics right-hand side, algebraic equations,
// inequality constraints, objective) is stored in one affine + bilinear shape
//
//     r(v) = sum_b  M_b v_b  +  c  +  sum_t  X_t [ (Y_t mdot) o (Z_t v_{zb(t)}) ]
//
// where mdot = M u_h are the CV mass flows. Once u_h is fixed every relation is
// affine in the remaining blocks, which is what the decomposition relies on.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace thmpc {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Index = Eigen::Index;
using Triplet = Eigen::Triplet<double>;

/// Variable blocks of the canonical model. `mflow` is derived (mdot = M u_h).
enum class Block { theta, zh, zt, uh, ut, d, mflow };

inline constexpr std::size_t kBlockCount = 7;
inline constexpr std::array<Block, kBlockCount> kAllBlocks = {
    Block::theta, Block::zh, Block::zt, Block::uh, Block::ut, Block::d, Block::mflow};

std::string_view block_name(Block b);

/// Parses "theta", "zh", "zt", "uh", "ut", "d" or "mflow". Throws UnknownBlock.
Block parse_block(std::string_view name);

class UnknownBlock : public std::invalid_argument {
 public:
  explicit UnknownBlock(const std::string& name)
      : std::invalid_argument("unknown variable block '" + name + "'") {}
};

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(Block block, Index expected, Index got);
  Block block() const { return block_; }

 private:
  Block block_;
};

struct Dimensions {
  Index theta = 0;
  Index zh = 0;
  Index zt = 0;
  Index uh = 0;
  Index ut = 0;
  Index d = 0;
  Index mflow = 0;

  Index size(Block b) const;
  bool operator==(const Dimensions&) const = default;
};

/// Full variable assignment for one time instant. CV mass flows are not stored;
/// they follow from u_h through the network's mass-flow map.
struct Point {
  Vector theta;
  Vector zh;
  Vector zt;
  Vector uh;
  Vector ut;
  Vector d;

  static Point zeros(const Dimensions& dims);
  const Vector& get(Block b) const;  // throws UnknownBlock for mflow
  Vector& get(Block b);
};

/// One Hadamard-product term X [ (Y mdot) o (Z v) ].
struct BilinearTerm {
  SparseMatrix x_matrix;  // target rows x term rows
  SparseMatrix y_matrix;  // term rows x n_mflow
  SparseMatrix z_matrix;  // term rows x size(z_block)
  Block z_block = Block::theta;

  Index term_rows() const { return y_matrix.rows(); }
};

/// Affine + bilinear map over all variable blocks.
class BilinearMap {
 public:
  BilinearMap() = default;
  BilinearMap(Index rows, const Dimensions& dims);

  Index rows() const { return rows_; }
  const Dimensions& dims() const { return dims_; }

  void set_affine(Block b, SparseMatrix m);
  void set_constant(Vector c);
  void add_term(BilinearTerm term);

  const SparseMatrix& affine(Block b) const { return affine_[static_cast<std::size_t>(b)]; }
  const Vector& constant() const { return constant_; }
  const std::vector<BilinearTerm>& terms() const { return terms_; }

  /// Residual at `p` with CV flows `mflow`. Dimensions are assumed checked.
  Vector evaluate(const Point& p, const Vector& mflow) const;

  /// Exact derivative w.r.t. one block at `p`. For Block::uh the chain rule
  /// through `mflow_map` is applied to every flow-dependent part.
  SparseMatrix jacobian(const Point& p, const Vector& mflow, const SparseMatrix& mflow_map,
                        Block b) const;

  /// Mutable access for building; used by generators and fault injection.
  SparseMatrix& affine_mut(Block b) { return affine_[static_cast<std::size_t>(b)]; }

 private:
  const Vector& block_value(const Point& p, const Vector& mflow, Block b) const;

  Index rows_ = 0;
  Dimensions dims_;
  std::array<SparseMatrix, kBlockCount> affine_;
  Vector constant_;
  std::vector<BilinearTerm> terms_;
};

enum class ConstraintKind { equality, inequality_leq };

/// Reference to one scalar variable.
struct VarRef {
  Block block;
  Index index;
};

struct ConstraintSet {
  BilinearMap map;
  ConstraintKind kind = ConstraintKind::equality;
  std::vector<std::string> row_labels;
  // Variable to carry forward when a row loses all sensitivity (e.g. mixing
  // at zero total flow). Only consulted by the plant simulation.
  std::vector<std::optional<VarRef>> degenerate_hold;

  Index rows() const { return map.rows(); }
};

/// Objective in the same canonical form; a single row summed to a scalar.
/// With `price_scaled` the stored coefficients are powers [W] and the cost of
/// one step is price [EUR/kWh] / 3.6e6 * dt * value.
struct ObjectiveForm {
  BilinearMap form;
  bool price_scaled = false;

  double value(const Point& p, const Vector& mflow) const;
};

inline constexpr double kJoulePerKilowattHour = 3.6e6;

/// Converts a price in EUR/kWh and a step length into the factor that turns a
/// power [W] into the step cost [EUR].
inline double price_factor(double price_eur_per_kwh, double dt) {
  return price_eur_per_kwh / kJoulePerKilowattHour * dt;
}

ObjectiveForm instantiate(const ObjectiveForm& base, double price_eur_per_kwh, double dt);

struct CvNetwork {
  Dimensions dims;
  Vector capacity;  // rho*c*V per temperature state [J/K]
  std::vector<std::string> state_labels;

  BilinearMap dynamics;  // d(theta)/dt; affine theta block is A
  ConstraintSet f_h;
  ConstraintSet f_t;
  ConstraintSet g_h;
  ConstraintSet g_t;
  SparseMatrix mflow_map;  // n_mflow x n_uh
  ObjectiveForm objective_h;
  ObjectiveForm objective_t;

  const SparseMatrix& a_matrix() const { return dynamics.affine(Block::theta); }
  Vector mflow(const Point& p) const { return mflow_map * p.uh; }

  /// Structural invariants; throws std::invalid_argument describing the first
  /// violation.
  void validate() const;
};

enum class Target { dynamics, f_h, f_t, g_h, g_t, objective_h, objective_t };

std::string_view target_name(Target t);

const BilinearMap& target_map(const CvNetwork& net, Target t);

/// Throws DimensionError naming the first block whose size disagrees.
void check_point(const CvNetwork& net, const Point& p);

Vector eval_constraints(const CvNetwork& net, const Point& p, Target which);
Vector eval_dynamics_rhs(const CvNetwork& net, const Point& p);
SparseMatrix jacobian_wrt_block(const CvNetwork& net, const Point& p, Target target, Block b);

/// Largest violation of cap_i A_ij = cap_j A_ji, relative to the coupling size.
double capacity_symmetry_defect(const CvNetwork& net);

}  // namespace thmpc
