#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "medt/schema.hpp"

namespace medt {

// Rows plus per-class weights.  All empirical means downstream run over
// trajectory classes (observations collapse onto the schema's enumerated
// valid trajectories), which keeps the estimation loops small.
struct Dataset {
  std::shared_ptr<const Schema> schema;
  std::vector<Trajectory> rows;
  std::vector<int32_t> row_class;     // per row: trajectory class id
  std::vector<int64_t> class_count;   // per class
  std::vector<double> class_weight;   // class_count / n

  size_t n() const { return rows.size(); }
};

// Validates every row; throws std::invalid_argument naming the first bad row.
Dataset make_dataset(std::shared_ptr<const Schema> schema, std::vector<Trajectory> rows);

// CSV with a header of node names; blank values are the token "NA".
Dataset read_csv(std::shared_ptr<const Schema> schema, std::istream& in);
Dataset read_csv_file(std::shared_ptr<const Schema> schema, const std::string& path);
void write_csv(const Dataset& data, std::ostream& out);
void write_csv_file(const Dataset& data, const std::string& path);

}  // namespace medt
