#pragma once

#include <vector>

#include "empl/encoders.hpp"

namespace empl {

// One open-vocabulary episode: observed classes V_i (with training images)
// and unseen classes U_i (names only). Both lists are sorted ascending.
struct TaskSpec {
  std::vector<ClassId> observed;
  std::vector<ClassId> unseen;

  // Sorted union of observed and unseen.
  std::vector<ClassId> all_classes() const;
  bool is_unseen(ClassId id) const;
  bool is_observed(ClassId id) const;

  // Throws InvalidTaskError if unseen is empty, the sets overlap, or an id
  // repeats. Observed may be empty (energy only needs U_i).
  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

}  // namespace empl
