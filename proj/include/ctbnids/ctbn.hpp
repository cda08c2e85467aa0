#ifndef CTBNIDS_CTBN_HPP
#define CTBNIDS_CTBN_HPP

// Continuous time Bayesian networks: conditional intensity matrices, the
// network, amalgamation into one joint process, forward sampling,
// conditional sufficient statistics and learning.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctbnids/ctmc.hpp"

namespace ctbnids::ctbn {

struct Variable {
  std::string name;
  int cardinality = 2;
  // Toggles are event emitters: two states whose flips are the events.
  bool toggle = false;
};

// One intensity matrix per parent instantiation. Instantiations are encoded
// mixed-radix in parent order, the first parent most significant.
struct Cim {
  std::vector<int> parents;
  std::vector<ctmc::IntensityMatrix> matrices;
};

class CtbnModel {
 public:
  // Returns the new variable's id. New variables start parentless with zero
  // rates and a uniform initial distribution.
  int add_variable(const std::string& name, int cardinality, bool toggle = false);
  // Replaces the CIM of `var`. Throws InputError on inconsistent shapes.
  void set_cim(int var, std::vector<int> parents, std::vector<ctmc::IntensityMatrix> matrices);
  void set_initial(int var, const Vector& distribution);

  int size() const { return static_cast<int>(variables_.size()); }
  const Variable& variable(int v) const { return variables_.at(v); }
  const std::vector<Variable>& variables() const { return variables_; }
  const Cim& cim(int v) const { return cims_.at(v); }
  const Vector& initial(int v) const { return initial_.at(v); }
  const std::vector<int>& children(int v) const { return children_.at(v); }
  std::optional<int> find(const std::string& name) const;

  int parent_instantiations(int v) const;
  // Index u of the parents' current values inside `values` (one per variable).
  int parent_index(int v, std::span<const int> values) const;
  // Inverse of parent_index: the parent values encoded by u.
  std::vector<int> parent_values(int v, int u) const;
  const ctmc::IntensityMatrix& conditional(int v, std::span<const int> values) const {
    return cims_[v].matrices[parent_index(v, values)];
  }

  // Free-form key/value annotations carried through serialization.
  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  bool operator==(const CtbnModel& other) const;

 private:
  std::vector<Variable> variables_;
  std::vector<Cim> cims_;
  std::vector<Vector> initial_;
  std::vector<std::vector<int>> children_;
  std::map<std::string, std::string> meta_;
};

struct JointEvent {
  double time = 0.0;
  int variable = 0;
  int value = 0;  // new value
};

struct JointTrajectory {
  std::vector<int> initial;
  std::vector<JointEvent> events;
  double horizon = 0.0;

  void validate(const CtbnModel& model) const;
  // Values of every variable after the first `n_events` events.
  std::vector<int> state_after(std::size_t n_events) const;
};

// stats[v][u]: T[x|u] and M[x, x'|u] of variable v under parent instantiation u.
struct ConditionalSuffStats {
  std::vector<std::vector<ctmc::SufficientStatistics>> stats;

  ConditionalSuffStats() = default;
  explicit ConditionalSuffStats(const CtbnModel& model);
  ConditionalSuffStats& operator+=(const ConditionalSuffStats& other);
};

struct AmalgamationOptions {
  long long max_states = 4096;
};

long long joint_size(const CtbnModel& model);
// Variable 0 is the least significant digit.
int joint_index(const CtbnModel& model, std::span<const int> values);
std::vector<int> joint_values(const CtbnModel& model, int index);

// Throws std::length_error naming the product when the cap is exceeded.
ctmc::IntensityMatrix amalgamate(const CtbnModel& model, const AmalgamationOptions& options = {});
// Product of the factored initial distributions, in joint index order.
Vector joint_initial(const CtbnModel& model, const AmalgamationOptions& options = {});

JointTrajectory forward_sample(const CtbnModel& model, double horizon, std::uint64_t seed);

ConditionalSuffStats ctbn_suff_stats(const CtbnModel& model, const JointTrajectory& traj);

// Replaces every CIM with its conditional MLE; structure and initial kept.
CtbnModel ctbn_mle(const CtbnModel& model, const ConditionalSuffStats& ss,
                   const ctmc::Regularization& reg = {});

double ctbn_loglik(const CtbnModel& model, const ConditionalSuffStats& ss);

// The joint trajectory as a single process over the amalgamated state space.
ctmc::Trajectory flatten(const CtbnModel& model, const JointTrajectory& traj);

// Joint evidence when only `observed` variables are seen; the rest are free.
ctmc::EvidenceTrajectory observe(const CtbnModel& model, const JointTrajectory& traj,
                                 std::span<const int> observed);

// Folds expected statistics of the amalgamated process back into
// per-variable conditional statistics.
ConditionalSuffStats project_joint_stats(const CtbnModel& model,
                                         const ctmc::SufficientStatistics& joint);

struct ExactEmResult {
  CtbnModel model;
  std::vector<double> log_likelihoods;
  int iterations = 0;
  bool converged = false;
};

ExactEmResult exact_em(const CtbnModel& init, std::span<const ctmc::EvidenceTrajectory> data,
                       const ctmc::EmConfig& config = {},
                       const AmalgamationOptions& options = {});

}  // namespace ctbnids::ctbn

#endif
