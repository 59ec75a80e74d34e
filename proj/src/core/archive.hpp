#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "params.hpp"

namespace m3pt {

static_assert(std::endian::native == std::endian::little,
              "weight archives assume a little-endian host");

// On-disk tensor archive. Format (documented byte-exactly in
// docs/weight_archive.md):
//
//   line 1:  "M3PTW1 <index_bytes>\n"
//   index:   one line per tensor, "<name> f32 <rank> <dims...> <offset>\n"
//   payload: tightly packed little-endian IEEE-754 binary32, row-major,
//            in index order; <offset> is the byte offset into the payload.
struct WeightArchive {
  struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    int64_t offset = 0;  // bytes into payload
  };
  std::vector<Entry> entries;
  std::vector<unsigned char> payload;

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::vector<float> read(const Entry& e) const {
    int64_t n = Tensor<float>::numel_of(e.shape);
    if (e.offset < 0 ||
        e.offset + n * 4 > static_cast<int64_t>(payload.size()))
      fail(ErrorKind::Archive, "truncated payload for tensor " + e.name);
    std::vector<float> out(static_cast<size_t>(n));
    std::memcpy(out.data(), payload.data() + e.offset, static_cast<size_t>(n) * 4);
    return out;
  }
};

inline void write_archive_stream(const WeightArchive& a, std::ostream& os) {
  std::ostringstream index;
  for (const auto& e : a.entries) {
    index << e.name << " f32 " << e.shape.size();
    for (int64_t d : e.shape) index << " " << d;
    index << " " << e.offset << "\n";
  }
  std::string idx = index.str();
  os << "M3PTW1 " << idx.size() << "\n" << idx;
  os.write(reinterpret_cast<const char*>(a.payload.data()),
           static_cast<std::streamsize>(a.payload.size()));
}

inline WeightArchive read_archive_stream(std::istream& is) {
  std::string magic;
  size_t index_bytes = 0;
  if (!(is >> magic >> index_bytes) || magic != "M3PTW1")
    fail(ErrorKind::Archive, "not a weight archive (bad magic)");
  is.get();  // newline after the header
  std::string idx(index_bytes, '\0');
  is.read(idx.data(), static_cast<std::streamsize>(index_bytes));
  if (is.gcount() != static_cast<std::streamsize>(index_bytes))
    fail(ErrorKind::Archive, "truncated index");
  WeightArchive a;
  std::istringstream lines(idx);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    WeightArchive::Entry e;
    std::string dtype;
    size_t rank = 0;
    if (!(ls >> e.name >> dtype >> rank))
      fail(ErrorKind::Archive, "malformed index line: " + line);
    if (dtype != "f32")
      fail(ErrorKind::Archive, "unsupported dtype '" + dtype + "' for " + e.name);
    e.shape.resize(rank);
    for (size_t i = 0; i < rank; ++i)
      if (!(ls >> e.shape[i]))
        fail(ErrorKind::Archive, "malformed shape in index line: " + line);
    if (!(ls >> e.offset))
      fail(ErrorKind::Archive, "missing offset in index line: " + line);
    for (const auto& prev : a.entries)
      if (prev.name == e.name)
        fail(ErrorKind::Archive, "duplicate tensor name " + e.name);
    a.entries.push_back(std::move(e));
  }
  a.payload.assign(std::istreambuf_iterator<char>(is),
                   std::istreambuf_iterator<char>());
  for (const auto& e : a.entries) {
    int64_t n = Tensor<float>::numel_of(e.shape);
    if (e.offset < 0 || e.offset + n * 4 > static_cast<int64_t>(a.payload.size()))
      fail(ErrorKind::Archive, "truncated payload for tensor " + e.name +
                                   " (need " + std::to_string(e.offset + n * 4) +
                                   " bytes, have " +
                                   std::to_string(a.payload.size()) + ")");
  }
  return a;
}

inline void save_archive(const WeightArchive& a, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  write_archive_stream(a, os);
  if (!os) fail(ErrorKind::Io, "write failed for " + path);
}

inline WeightArchive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  return read_archive_stream(is);
}

// ---------------------------------------------------------------------------
// Store <-> archive bridges
// ---------------------------------------------------------------------------

template <typename S>
WeightArchive archive_from_store(const ParamStore<S>& store,
                                 const std::string& prefix = "") {
  WeightArchive a;
  int64_t offset = 0;
  for (size_t i = 0; i < store.count(); ++i) {
    const std::string& name = store.name(i);
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    const Tensor<S>& t = store.tensor(i);
    WeightArchive::Entry e{name, t.shape, offset};
    a.entries.push_back(e);
    size_t base = a.payload.size();
    a.payload.resize(base + static_cast<size_t>(t.numel()) * 4);
    for (int64_t k = 0; k < t.numel(); ++k) {
      float f = static_cast<float>(t[k]);
      std::memcpy(a.payload.data() + base + static_cast<size_t>(k) * 4, &f, 4);
    }
    offset += t.numel() * 4;
  }
  return a;
}

// Applies archive values to every store tensor whose name carries the prefix.
// Every such tensor must be present with a matching shape.
template <typename S>
void apply_archive(const WeightArchive& a, ParamStore<S>& store,
                   const std::string& prefix = "") {
  for (size_t i = 0; i < store.count(); ++i) {
    const std::string& name = store.name(i);
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    const WeightArchive::Entry* e = a.find(name);
    if (!e) fail(ErrorKind::Archive, "missing tensor " + name);
    Tensor<S>& t = store.tensor(i);
    if (e->shape != t.shape)
      fail(ErrorKind::Archive, "shape mismatch for " + name + ": archive " +
                                   shape_str(e->shape) + ", model " +
                                   shape_str(t.shape));
    std::vector<float> vals = a.read(*e);
    for (int64_t k = 0; k < t.numel(); ++k) t[k] = static_cast<S>(vals[static_cast<size_t>(k)]);
  }
}

}  // namespace m3pt
