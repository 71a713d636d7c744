#pragma once

// Shared pieces of the experiment front end: reference numbers for the
// published tables, log-log slope fits and repeated test evaluation.

#include "mol/core.hpp"
#include "mol/fields.hpp"
#include "mol/network.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mol {

// Git describe of the tree the library was built from.
const char* build_id();

struct TableReference {
  std::string key;
  std::string description;
  double percent = 0.0;
};

// Keys look like table1:linear:1000, table2:dm:100:10 (estimator, N_PDE,
// N_OBS), table3:gmls:0:25, table4:semilinear:100:2 and
// table5:surrogate:20x20:0.01:kappa. Tables are numbered in publication order.
std::optional<TableReference> table_reference(const std::string& key);
const std::vector<TableReference>& table_references();

// Least-squares slope of log y against log x. Needs two or more distinct x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct RepeatedEvaluation {
  std::vector<double> errors;  // one per repetition
  double mean = 0.0;
};

// Mean L2 relative error over `repeats` passes, each over a differently
// shuffled copy of the test samples.
RepeatedEvaluation evaluate_repeated(const DeepONet& model, const OperatorDataset& test, Index repeats,
                                     std::uint64_t seed);

}  // namespace mol
