#include "empl/task.hpp"

#include <algorithm>
#include <string>

#include "empl/errors.hpp"

namespace empl {

std::vector<ClassId> TaskSpec::all_classes() const {
  std::vector<ClassId> all = observed;
  all.insert(all.end(), unseen.begin(), unseen.end());
  std::sort(all.begin(), all.end());
  return all;
}

bool TaskSpec::is_unseen(ClassId id) const {
  return std::find(unseen.begin(), unseen.end(), id) != unseen.end();
}

bool TaskSpec::is_observed(ClassId id) const {
  return std::find(observed.begin(), observed.end(), id) != observed.end();
}

void TaskSpec::validate() const {
  if (unseen.empty()) throw InvalidTaskError("task has no unseen classes");
  std::vector<ClassId> all = all_classes();
  const auto dup = std::adjacent_find(all.begin(), all.end());
  if (dup != all.end()) {
    throw InvalidTaskError("class " + std::to_string(*dup) +
                           " appears twice in the task (observed and unseen must be disjoint)");
  }
}

}  // namespace empl
