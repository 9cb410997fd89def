#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcaunet/config.hpp"
#include "lcaunet/optim.hpp"

namespace lcaunet {

// One saved run state. Binary layout (host-endian, single-machine artifact):
//   8-byte magic, u32 version,
//   u64 header length + JSON header (config, counters, param names/shapes),
//   raw parameter blobs in registration order,
//   optimizer first/second-moment blobs when present.
// Raw IEEE bytes in, raw bytes out — the round trip is bit-exact.
template <typename T>
struct Checkpoint {
  TrainConfig config;
  std::int64_t epoch = 0;
  double best_val_dice = -1.0;
  double lr = 0.0;
  double sched_best = -std::numeric_limits<double>::infinity();
  std::int64_t sched_bad = 0;
  std::int64_t step_count = 0;
  bool has_optim = false;
  std::vector<std::pair<std::string, Array<T>>> params;
  std::vector<std::vector<T>> m, v;
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'L', 'C', 'A', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
const char* scalar_tag() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else return "unknown";
}

inline void write_exact(std::ofstream& f, const void* p, std::size_t n,
                        const std::string& path) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!f.good())
    fail<std::runtime_error>("checkpoint write failed (disk full?): ", path);
}

inline void read_exact(std::ifstream& f, void* p, std::size_t n,
                       const std::string& path) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    fail<ConfigError>("checkpoint truncated: ", path);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  nlohmann::json h;
  h["config"] = config_to_json(ck.config);
  h["epoch"] = ck.epoch;
  h["best_val_dice"] = ck.best_val_dice;
  h["lr"] = ck.lr;
  // JSON has no infinity; the scheduler's best starts at -inf.
  if (std::isfinite(ck.sched_best)) h["sched_best"] = ck.sched_best;
  else h["sched_best"] = nullptr;
  h["sched_bad"] = ck.sched_bad;
  h["step_count"] = ck.step_count;
  h["has_optim"] = ck.has_optim;
  h["scalar"] = detail::scalar_tag<T>();
  auto names = nlohmann::json::array();
  for (const auto& [name, arr] : ck.params) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = arr.shape;
    names.push_back(std::move(e));
  }
  h["params"] = std::move(names);
  const std::string header = h.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  LCAUNET_CHECK_CONFIG(f.good(), "cannot open checkpoint for writing: ", path);
  detail::write_exact(f, detail::kCkptMagic, sizeof detail::kCkptMagic, path);
  const std::uint32_t ver = detail::kCkptVersion;
  detail::write_exact(f, &ver, sizeof ver, path);
  const std::uint64_t hlen = header.size();
  detail::write_exact(f, &hlen, sizeof hlen, path);
  detail::write_exact(f, header.data(), header.size(), path);
  for (const auto& [name, arr] : ck.params)
    detail::write_exact(f, arr.data.data(),
                        static_cast<std::size_t>(arr.size()) * sizeof(T), path);
  if (ck.has_optim) {
    LCAUNET_CHECK_CONFIG(ck.m.size() == ck.params.size() &&
                             ck.v.size() == ck.params.size(),
                         "checkpoint: optimizer moments do not match params");
    for (const auto& blob : ck.m)
      detail::write_exact(f, blob.data(), blob.size() * sizeof(T), path);
    for (const auto& blob : ck.v)
      detail::write_exact(f, blob.data(), blob.size() * sizeof(T), path);
  }
  f.flush();
  if (!f.good())
    fail<std::runtime_error>("checkpoint flush failed (disk full?): ", path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  LCAUNET_CHECK_CONFIG(f.good(), "cannot open checkpoint: ", path);
  char magic[8];
  detail::read_exact(f, magic, sizeof magic, path);
  LCAUNET_CHECK_CONFIG(
      std::memcmp(magic, detail::kCkptMagic, sizeof magic) == 0,
      "not a checkpoint file: ", path);
  std::uint32_t ver = 0;
  detail::read_exact(f, &ver, sizeof ver, path);
  LCAUNET_CHECK_CONFIG(ver == detail::kCkptVersion, "checkpoint version ", ver,
                       " unsupported (expected ", detail::kCkptVersion, ")");
  std::uint64_t hlen = 0;
  detail::read_exact(f, &hlen, sizeof hlen, path);
  std::string header(hlen, '\0');
  detail::read_exact(f, header.data(), hlen, path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    fail<ConfigError>("corrupt checkpoint header in ", path, ": ", e.what());
  }

  Checkpoint<T> ck;
  LCAUNET_CHECK_CONFIG(h.at("scalar").get<std::string>() == detail::scalar_tag<T>(),
                       "checkpoint scalar type ", h.at("scalar").get<std::string>(),
                       " does not match this build (", detail::scalar_tag<T>(), ")");
  apply_config_json(ck.config, h.at("config"));
  ck.epoch = h.at("epoch").get<std::int64_t>();
  ck.best_val_dice = h.at("best_val_dice").get<double>();
  ck.lr = h.at("lr").get<double>();
  ck.sched_best = h.at("sched_best").is_null()
                      ? -std::numeric_limits<double>::infinity()
                      : h.at("sched_best").get<double>();
  ck.sched_bad = h.at("sched_bad").get<std::int64_t>();
  ck.step_count = h.at("step_count").get<std::int64_t>();
  ck.has_optim = h.at("has_optim").get<bool>();
  for (const auto& e : h.at("params")) {
    Array<T> arr(e.at("shape").get<Shape>());
    detail::read_exact(f, arr.data.data(),
                       static_cast<std::size_t>(arr.size()) * sizeof(T), path);
    ck.params.emplace_back(e.at("name").get<std::string>(), std::move(arr));
  }
  if (ck.has_optim) {
    ck.m.resize(ck.params.size());
    ck.v.resize(ck.params.size());
    for (auto* blobs : {&ck.m, &ck.v})
      for (std::size_t i = 0; i < ck.params.size(); ++i) {
        (*blobs)[i].resize(static_cast<std::size_t>(ck.params[i].second.size()));
        detail::read_exact(f, (*blobs)[i].data(), (*blobs)[i].size() * sizeof(T),
                           path);
      }
  }
  return ck;
}

// Copy checkpoint values into a live parameter set; names and shapes must
// match the registration order exactly.
template <typename T>
void apply_params(ag::ParamSet<T>& params, const Checkpoint<T>& ck) {
  LCAUNET_CHECK_CONFIG(params.count() == ck.params.size(),
                       "checkpoint has ", ck.params.size(), " tensors, model has ",
                       params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& entry = params.entries()[i];
    const auto& [name, arr] = ck.params[i];
    LCAUNET_CHECK_CONFIG(entry.name == name, "checkpoint param ", i, " is '", name,
                         "', model expects '", entry.name, "'");
    LCAUNET_CHECK_SHAPE(entry.var.shape() == arr.shape, "checkpoint param ", name,
                        " shape mismatch");
    entry.var.node().value = arr;
  }
}

template <typename T>
void apply_optim(AdamW<T>& opt, const Checkpoint<T>& ck) {
  LCAUNET_CHECK_CONFIG(ck.has_optim, "checkpoint carries no optimizer state");
  LCAUNET_CHECK_CONFIG(opt.moment1().size() == ck.m.size(),
                       "optimizer state size mismatch");
  opt.moment1() = ck.m;
  opt.moment2() = ck.v;
  opt.set_step_count(ck.step_count);
  opt.set_lr(ck.lr);
}

// Snapshot live objects into a serializable record.
template <typename T>
Checkpoint<T> snapshot(const TrainConfig& cfg, const ag::ParamSet<T>& params,
                       const AdamW<T>* opt = nullptr) {
  Checkpoint<T> ck;
  ck.config = cfg;
  for (const auto& e : params.entries())
    ck.params.emplace_back(e.name, e.var.value());
  if (opt) {
    ck.has_optim = true;
    ck.m = opt->moment1();
    ck.v = opt->moment2();
    ck.step_count = opt->step_count();
    ck.lr = opt->lr();
  }
  return ck;
}

}  // namespace lcaunet
