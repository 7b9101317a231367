#pragma once

// Binary field snapshots.
//
// Layout: the 6 magic bytes "SHOMv1", a little-endian int32 dimension, a
// little-endian uint64 byte count followed by a JSON header, then every array
// as little-endian 64-bit floats in row-major order, in header order. The header
// lists each array as {"name", "size", "shape", "location"} plus free metadata.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shom/common.hpp"

namespace shom {

struct SnapshotArray {
  std::string name;
  std::string location;     // placement tag, e.g. "cell", "face:0", "node"
  std::vector<int> shape;   // row-major extents
  std::vector<double> values;
};

struct Snapshot {
  int dim = 2;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<SnapshotArray> arrays;

  const SnapshotArray& get(const std::string& name) const;
};

void write_snapshot(const std::string& path, const Snapshot& snap);
Snapshot read_snapshot(const std::string& path);

}  // namespace shom
