#include "nabi/dataset_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nabi::io {

namespace {

constexpr char kDatasetMagic[9] = "NABIDSET";
constexpr char kSamplesMagic[9] = "NABISMPL";
constexpr uint32_t kVersion = 1;

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("I/O failure while writing");
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("I/O failure while reading (truncated file?)");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

std::string read_string(std::istream& is) {
  uint32_t n = read_pod<uint32_t>(is);
  if (n > (1u << 20)) throw std::runtime_error("corrupt file: oversized string");
  std::string s(n, '\0');
  read_bytes(is, s.data(), n);
  return s;
}

}  // namespace

void save_dataset(const std::string& path, const models::Dataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_bytes(os, kDatasetMagic, 8);
  write_pod<uint32_t>(os, kVersion);
  write_string(os, ds.model_id);
  write_pod<uint64_t>(os, static_cast<uint64_t>(ds.n));
  write_pod<uint32_t>(os, 1);  // parameter dimension
  write_pod<uint32_t>(os, static_cast<uint32_t>(ds.data_shape.size()));
  for (int64_t d : ds.data_shape) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
  int64_t flen = ds.field_len();
  for (int64_t i = 0; i < ds.n; ++i) {
    write_pod<double>(os, ds.theta[static_cast<size_t>(i)]);
    write_bytes(os, ds.fields.data() + i * flen, static_cast<size_t>(flen) * sizeof(double));
  }
}

models::Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  read_bytes(is, magic, 8);
  if (std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a dataset file");
  uint32_t ver = read_pod<uint32_t>(is);
  if (ver != kVersion)
    throw std::runtime_error("dataset version " + std::to_string(ver) +
                             " unsupported (expected " + std::to_string(kVersion) + ")");
  models::Dataset ds;
  ds.model_id = read_string(is);
  ds.n = static_cast<int64_t>(read_pod<uint64_t>(is));
  uint32_t d = read_pod<uint32_t>(is);
  if (d != 1) throw std::runtime_error("dataset parameter dimension != 1");
  uint32_t rank = read_pod<uint32_t>(is);
  ds.data_shape.resize(rank);
  for (uint32_t i = 0; i < rank; ++i)
    ds.data_shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is));
  int64_t flen = ds.field_len();
  ds.theta.resize(static_cast<size_t>(ds.n));
  ds.fields.resize(static_cast<size_t>(ds.n * flen));
  for (int64_t i = 0; i < ds.n; ++i) {
    ds.theta[static_cast<size_t>(i)] = read_pod<double>(is);
    read_bytes(is, ds.fields.data() + i * flen, static_cast<size_t>(flen) * sizeof(double));
  }
  return ds;
}

uint64_t dataset_checksum(const models::Dataset& ds) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  mix(ds.theta.data(), ds.theta.size() * sizeof(double));
  mix(ds.fields.data(), ds.fields.size() * sizeof(double));
  return h;
}

void save_samples(const std::string& path, const SamplesFile& sf) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_bytes(os, kSamplesMagic, 8);
  write_pod<uint32_t>(os, kVersion);
  write_string(os, sf.method);
  write_pod<uint64_t>(os, sf.records.size());
  for (const auto& r : sf.records) {
    write_pod<uint64_t>(os, r.dataset_id);
    write_pod<uint8_t>(os, r.is_triple ? 1 : 0);
    write_pod<uint64_t>(os, r.values.size());
    write_bytes(os, r.values.data(), r.values.size() * sizeof(double));
  }
}

SamplesFile load_samples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  read_bytes(is, magic, 8);
  if (std::memcmp(magic, kSamplesMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a samples file");
  uint32_t ver = read_pod<uint32_t>(is);
  if (ver != kVersion)
    throw std::runtime_error("samples version " + std::to_string(ver) + " unsupported");
  SamplesFile sf;
  sf.method = read_string(is);
  uint64_t n = read_pod<uint64_t>(is);
  sf.records.resize(n);
  for (auto& r : sf.records) {
    r.dataset_id = read_pod<uint64_t>(is);
    r.is_triple = read_pod<uint8_t>(is) != 0;
    uint64_t m = read_pod<uint64_t>(is);
    r.values.resize(m);
    read_bytes(is, r.values.data(), m * sizeof(double));
  }
  return sf;
}

}  // namespace nabi::io
