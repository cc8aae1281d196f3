#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfpose/optim.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

/// Binary record container shared by checkpoints and dataset caches.
///
/// Layout: magic "TFPZ", u32 version, u64 record count, then records.
///   v1 (checkpoints):    u32 name length, name bytes, u32 ndim, u64 dims...,
///                        raw 32-bit little-endian values.
///   v2 (dataset caches): as v1 plus a u32 dtype tag (0 = f32, 1 = f64)
///                        between the name and ndim; values match the dtype.
struct Record {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;  // only used by v2 files
  bool is_f64 = false;

  std::uint64_t count() const;
};

inline constexpr char kRecordMagic[4] = {'T', 'F', 'P', 'Z'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDatasetCacheVersion = 2;

void write_record_file(const std::string& path, std::uint32_t version,
                       const std::vector<Record>& records);
/// Returns the file's version; `records` receives its content.
std::uint32_t read_record_file(const std::string& path, std::vector<Record>& records);

struct CheckpointData {
  std::int64_t step = 0;
  std::string config_json;
  std::map<std::string, Record> params;
  std::map<std::string, Record> opt_m, opt_v;
  bool has_optimizer = false;
};

/// Saves parameters (and optimizer moments when given) as 32-bit values,
/// together with the step counter and a config snapshot.
template <typename T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& params,
                     const AdamW<T>* optimizer, std::int64_t step, const std::string& config_json);

CheckpointData load_checkpoint(const std::string& path);

/// Writes checkpoint data into a freshly built registry; every parameter must
/// be present with a matching shape.
template <typename T>
void apply_checkpoint_params(const CheckpointData& data, ParamRegistry<T>& params);

/// Restores optimizer moments from a checkpoint that has them.
template <typename T>
void apply_checkpoint_optimizer(const CheckpointData& data, const ParamRegistry<T>& params,
                                AdamW<T>& optimizer);

}  // namespace tfpose
