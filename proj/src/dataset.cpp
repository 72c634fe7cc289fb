#include "medt/dataset.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace medt {

Dataset make_dataset(std::shared_ptr<const Schema> schema, std::vector<Trajectory> rows) {
  Dataset d;
  d.schema = std::move(schema);
  d.rows = std::move(rows);
  d.row_class.resize(d.rows.size());
  d.class_count.assign(d.schema->classes.size(), 0);
  d.class_weight.assign(d.schema->classes.size(), 0.0);
  for (size_t r = 0; r < d.rows.size(); ++r) {
    ValidationReport rep = validate_trajectory(*d.schema, d.rows[r]);
    if (!rep.ok)
      throw std::invalid_argument("row " + std::to_string(r + 1) + ", node " + rep.node +
                                  ": " + rep.message);
    auto it = d.schema->class_index.find(d.schema->pack_full(d.rows[r]));
    if (it == d.schema->class_index.end())
      throw std::invalid_argument("row " + std::to_string(r + 1) + ": unreachable trajectory");
    d.row_class[r] = it->second;
    d.class_count[it->second] += 1;
  }
  if (!d.rows.empty()) {
    double inv = 1.0 / static_cast<double>(d.rows.size());
    for (size_t c = 0; c < d.class_count.size(); ++c)
      d.class_weight[c] = static_cast<double>(d.class_count[c]) * inv;
  }
  return d;
}

static std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

Dataset read_csv(std::shared_ptr<const Schema> schema, std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty input");
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() != schema->nodes.size())
    throw std::invalid_argument("csv: header has " + std::to_string(header.size()) +
                                " columns, schema has " + std::to_string(schema->nodes.size()));
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] != schema->names[i])
      throw std::invalid_argument("csv: column " + std::to_string(i + 1) + " is '" + header[i] +
                                  "', expected '" + schema->names[i] + "'");

  std::vector<Trajectory> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != schema->nodes.size())
      throw std::invalid_argument("csv line " + std::to_string(lineno) + ": wrong column count");
    Trajectory tr(schema->nodes.size());
    for (size_t i = 0; i < cells.size(); ++i) {
      if (cells[i] == "NA") {
        tr[i] = kBlank;
      } else {
        try {
          size_t pos = 0;
          int v = std::stoi(cells[i], &pos);
          if (pos != cells[i].size()) throw std::invalid_argument("");
          tr[i] = static_cast<int8_t>(v);
        } catch (...) {
          throw std::invalid_argument("csv line " + std::to_string(lineno) + ", column " +
                                      schema->names[i] + ": bad value '" + cells[i] + "'");
        }
      }
    }
    rows.push_back(std::move(tr));
  }
  if (rows.empty()) throw std::invalid_argument("csv: no data rows");
  return make_dataset(std::move(schema), std::move(rows));
}

Dataset read_csv_file(std::shared_ptr<const Schema> schema, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  return read_csv(std::move(schema), in);
}

void write_csv(const Dataset& data, std::ostream& out) {
  const Schema& s = *data.schema;
  for (size_t i = 0; i < s.names.size(); ++i) {
    if (i) out << ',';
    out << s.names[i];
  }
  out << '\n';
  for (const Trajectory& tr : data.rows) {
    for (size_t i = 0; i < tr.size(); ++i) {
      if (i) out << ',';
      if (tr[i] == kBlank)
        out << "NA";
      else
        out << static_cast<int>(tr[i]);
    }
    out << '\n';
  }
}

void write_csv_file(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
  write_csv(data, out);
}

}  // namespace medt
