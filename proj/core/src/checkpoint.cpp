#include "tfpose/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace tfpose {

std::uint64_t Record::count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

template <typename V>
void write_pod(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw std::runtime_error("record file truncated: " + path);
  return v;
}

}  // namespace

void write_record_file(const std::string& path, std::uint32_t version,
                       const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write record file: " + path);
  out.write(kRecordMagic, 4);
  write_pod<std::uint32_t>(out, version);
  write_pod<std::uint64_t>(out, records.size());
  for (const auto& rec : records) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(rec.name.size()));
    out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    if (version >= kDatasetCacheVersion) write_pod<std::uint32_t>(out, rec.is_f64 ? 1u : 0u);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(rec.dims.size()));
    for (auto d : rec.dims) write_pod<std::uint64_t>(out, d);
    const std::uint64_t n = rec.count();
    if (rec.is_f64) {
      if (rec.f64.size() != n) throw std::logic_error("record '" + rec.name + "': value count mismatch");
      out.write(reinterpret_cast<const char*>(rec.f64.data()), static_cast<std::streamsize>(n * 8));
    } else {
      if (rec.f32.size() != n) throw std::logic_error("record '" + rec.name + "': value count mismatch");
      out.write(reinterpret_cast<const char*>(rec.f32.data()), static_cast<std::streamsize>(n * 4));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::uint32_t read_record_file(const std::string& path, std::vector<Record>& records) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open record file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kRecordMagic, 4) != 0) {
    throw std::runtime_error("bad magic in record file: " + path);
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion && version != kDatasetCacheVersion) {
    throw std::runtime_error("unsupported record file version " + std::to_string(version) + ": " + path);
  }
  const auto count = read_pod<std::uint64_t>(in, path);
  records.clear();
  records.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    Record rec;
    const auto name_len = read_pod<std::uint32_t>(in, path);
    rec.name.resize(name_len);
    in.read(rec.name.data(), name_len);
    if (!in) throw std::runtime_error("record file truncated: " + path);
    if (version >= kDatasetCacheVersion) rec.is_f64 = read_pod<std::uint32_t>(in, path) == 1;
    const auto ndim = read_pod<std::uint32_t>(in, path);
    for (std::uint32_t d = 0; d < ndim; ++d) rec.dims.push_back(read_pod<std::uint64_t>(in, path));
    const std::uint64_t n = rec.count();
    if (rec.is_f64) {
      rec.f64.resize(n);
      in.read(reinterpret_cast<char*>(rec.f64.data()), static_cast<std::streamsize>(n * 8));
    } else {
      rec.f32.resize(n);
      in.read(reinterpret_cast<char*>(rec.f32.data()), static_cast<std::streamsize>(n * 4));
    }
    if (!in) throw std::runtime_error("record file truncated: " + path);
    records.push_back(std::move(rec));
  }
  return version;
}

namespace {

constexpr const char* kStepRecord = "__step__";
constexpr const char* kConfigRecord = "__config__";
constexpr const char* kParamPrefix = "param/";
constexpr const char* kOptMPrefix = "opt/m/";
constexpr const char* kOptVPrefix = "opt/v/";

Record bytes_record(const std::string& name, const std::string& text) {
  Record rec;
  rec.name = name;
  rec.dims = {text.size()};
  rec.f32.reserve(text.size());
  for (unsigned char ch : text) rec.f32.push_back(static_cast<float>(ch));
  return rec;
}

std::string bytes_from_record(const Record& rec) {
  std::string text;
  text.reserve(rec.f32.size());
  for (float v : rec.f32) text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return text;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& params,
                     const AdamW<T>* optimizer, std::int64_t step, const std::string& config_json) {
  std::vector<Record> records;
  {
    Record rec;
    rec.name = kStepRecord;
    rec.dims = {1};
    rec.f32 = {static_cast<float>(step)};
    records.push_back(std::move(rec));
  }
  records.push_back(bytes_record(kConfigRecord, config_json));
  for (const auto& [name, t] : params.items()) {
    Record rec;
    rec.name = kParamPrefix + name;
    for (int d : t->shape) rec.dims.push_back(static_cast<std::uint64_t>(d));
    rec.f32.assign(t->value.begin(), t->value.end());
    records.push_back(std::move(rec));
  }
  if (optimizer) {
    for (std::size_t i = 0; i < params.items().size(); ++i) {
      const auto& [name, t] = params.items()[i];
      Record m, v;
      m.name = kOptMPrefix + name;
      v.name = kOptVPrefix + name;
      m.dims = v.dims = {static_cast<std::uint64_t>(t->size())};
      m.f32.assign(optimizer->moment1()[i].begin(), optimizer->moment1()[i].end());
      v.f32.assign(optimizer->moment2()[i].begin(), optimizer->moment2()[i].end());
      records.push_back(std::move(m));
      records.push_back(std::move(v));
    }
  }
  write_record_file(path, kCheckpointVersion, records);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::vector<Record> records;
  const auto version = read_record_file(path, records);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("not a checkpoint file (version " + std::to_string(version) + "): " + path);
  }
  CheckpointData data;
  for (auto& rec : records) {
    if (rec.name == kStepRecord) {
      data.step = static_cast<std::int64_t>(rec.f32.at(0));
    } else if (rec.name == kConfigRecord) {
      data.config_json = bytes_from_record(rec);
    } else if (rec.name.rfind(kParamPrefix, 0) == 0) {
      data.params.emplace(rec.name.substr(std::strlen(kParamPrefix)), std::move(rec));
    } else if (rec.name.rfind(kOptMPrefix, 0) == 0) {
      data.has_optimizer = true;
      data.opt_m.emplace(rec.name.substr(std::strlen(kOptMPrefix)), std::move(rec));
    } else if (rec.name.rfind(kOptVPrefix, 0) == 0) {
      data.opt_v.emplace(rec.name.substr(std::strlen(kOptVPrefix)), std::move(rec));
    } else {
      throw std::runtime_error("unknown checkpoint record '" + rec.name + "' in " + path);
    }
  }
  return data;
}

template <typename T>
void apply_checkpoint_params(const CheckpointData& data, ParamRegistry<T>& params) {
  for (auto& [name, t] : params.items()) {
    auto it = data.params.find(name);
    if (it == data.params.end()) {
      throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
    }
    const Record& rec = it->second;
    if (rec.dims.size() != t->shape.size() ||
        !std::equal(t->shape.begin(), t->shape.end(), rec.dims.begin(),
                    [](int a, std::uint64_t b) { return static_cast<std::uint64_t>(a) == b; })) {
      throw std::runtime_error("checkpoint shape mismatch for parameter '" + name + "'");
    }
    for (std::size_t i = 0; i < rec.f32.size(); ++i) t->value[i] = static_cast<T>(rec.f32[i]);
  }
  if (data.params.size() != params.items().size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(data.params.size()) +
                             " parameters, model expects " + std::to_string(params.items().size()));
  }
}

template <typename T>
void apply_checkpoint_optimizer(const CheckpointData& data, const ParamRegistry<T>& params,
                                AdamW<T>& optimizer) {
  if (!data.has_optimizer) throw std::runtime_error("checkpoint has no optimizer state");
  std::vector<std::vector<T>> m, v;
  for (const auto& [name, t] : params.items()) {
    auto mi = data.opt_m.find(name);
    auto vi = data.opt_v.find(name);
    if (mi == data.opt_m.end() || vi == data.opt_v.end()) {
      throw std::runtime_error("checkpoint is missing optimizer state for '" + name + "'");
    }
    m.emplace_back(mi->second.f32.begin(), mi->second.f32.end());
    v.emplace_back(vi->second.f32.begin(), vi->second.f32.end());
  }
  optimizer.set_state(std::move(m), std::move(v));
}

template void save_checkpoint<float>(const std::string&, const ParamRegistry<float>&,
                                     const AdamW<float>*, std::int64_t, const std::string&);
template void save_checkpoint<double>(const std::string&, const ParamRegistry<double>&,
                                      const AdamW<double>*, std::int64_t, const std::string&);
template void apply_checkpoint_params<float>(const CheckpointData&, ParamRegistry<float>&);
template void apply_checkpoint_params<double>(const CheckpointData&, ParamRegistry<double>&);
template void apply_checkpoint_optimizer<float>(const CheckpointData&, const ParamRegistry<float>&,
                                                AdamW<float>&);
template void apply_checkpoint_optimizer<double>(const CheckpointData&, const ParamRegistry<double>&,
                                                 AdamW<double>&);

}  // namespace tfpose
