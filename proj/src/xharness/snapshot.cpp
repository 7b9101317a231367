#include "shom/snapshot.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace shom {

namespace {

constexpr char kMagic[6] = {'S', 'H', 'O', 'M', 'v', '1'};

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("snapshot truncated");
  return v;
}

}  // namespace

const SnapshotArray& Snapshot::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw Error("snapshot has no array '" + name + "'");
}

void write_snapshot(const std::string& path, const Snapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  nlohmann::json header;
  header["meta"] = snap.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : snap.arrays)
    header["arrays"].push_back({{"name", a.name}, {"location", a.location}, {"shape", a.shape}, {"size", a.values.size()}});
  const std::string text = header.dump();
  out.write(kMagic, sizeof(kMagic));
  put<std::int32_t>(out, snap.dim);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : snap.arrays)
    out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  if (!out) throw Error("write failed: " + path);
}

Snapshot read_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[6];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw Error(path + " is not a SHOMv1 snapshot");
  Snapshot snap;
  snap.dim = get<std::int32_t>(in);
  const auto len = get<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("snapshot truncated");
  const auto header = nlohmann::json::parse(text);
  snap.meta = header.value("meta", nlohmann::json::object());
  for (const auto& h : header.at("arrays")) {
    SnapshotArray a;
    a.name = h.at("name").get<std::string>();
    a.location = h.value("location", "");
    a.shape = h.value("shape", std::vector<int>{});
    a.values.resize(h.at("size").get<std::size_t>());
    in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    if (!in) throw Error("snapshot truncated");
    snap.arrays.push_back(std::move(a));
  }
  return snap;
}

}  // namespace shom
