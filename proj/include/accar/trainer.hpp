#pragma once

// Alternating optimization of the registration and variance networks with
// Adam, plus versioned binary checkpoints. Training is a pure function of
// (config, dataset, seed): all randomness flows through two serializable
// streams, one for batch sampling and one for contrast augmentation.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "accar/augment.hpp"
#include "accar/losses.hpp"
#include "accar/network.hpp"
#include "accar/synth.hpp"
#include "accar/warp.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace accar {

struct TrainConfig {
  double lr = 1e-4;
  int64_t steps = 1;
  int64_t alternate_every = 1;  // phase length; 1 gives strict R,V,R,V interleaving
  int64_t batch = 1;
  int64_t warmup = 0;  // registration-only steps before alternation begins
  uint64_t seed = 0;
  LossWeights weights;
  NetworkConfig network;
  std::string data;  // dataset directory; resolved by the CLI, unused by train()

  void validate() const {
    ACCAR_CHECK(lr > 0.0, "TrainConfig: lr must be positive");
    ACCAR_CHECK(steps >= 1, "TrainConfig: steps must be at least 1");
    ACCAR_CHECK(alternate_every >= 1, "TrainConfig: alternate_every must be at least 1");
    ACCAR_CHECK(batch >= 1, "TrainConfig: batch must be at least 1");
    ACCAR_CHECK(warmup >= 0, "TrainConfig: warmup must be non-negative");
    weights.validate();
    network.validate();
  }
};

struct AdamState {
  struct Slot {
    std::vector<double> m, v;
    int64_t t = 0;  // per-parameter update count; phases update disjoint subsets
  };
  std::map<std::string, Slot> slots;
};

// Standard Adam with bias correction. Parameters without an allocated
// gradient are an error; callers that want "no gradient means zero" must
// allocate zeros first.
inline void adam_step(ModelParams& params, AdamState& state, const std::vector<std::string>& names,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  for (const std::string& name : names) {
    const Tensor& p = param(params, name);
    ACCAR_CHECK(p.has_grad(), "adam_step: missing gradient for " + name);
    AdamState::Slot& slot = state.slots[name];
    const size_t n = size_t(p.numel());
    if (slot.m.empty()) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    }
    ACCAR_CHECK(slot.m.size() == n, "adam_step: moment size mismatch for " + name);
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(slot.t));
    const double bc2 = 1.0 - std::pow(beta2, double(slot.t));
    for (size_t i = 0; i < n; ++i) {
      const double g = p.grad()[i];
      slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
      slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
      p.mutable_val()[i] -= lr * (slot.m[i] / bc1) / (std::sqrt(slot.v[i] / bc2) + eps);
    }
  }
}

inline std::vector<std::string> registration_param_names(const ModelParams& p) {
  std::vector<std::string> names;
  for (const auto& [name, t] : p)
    if (name.rfind("var.", 0) != 0) names.push_back(name);
  return names;
}

inline std::vector<std::string> variance_param_names(const ModelParams& p) {
  std::vector<std::string> names;
  for (const auto& [name, t] : p)
    if (name.rfind("var.", 0) == 0) names.push_back(name);
  return names;
}

namespace detail {

// One contrast-augmented view. Degenerate stacks (constant output) are
// resampled a few times; the retry draws come off the same stream, so the
// sequence stays deterministic.
inline Tensor augment_view(const Tensor& image, Rng& rng) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    AugmentResult r = apply_rc_stack(image, sample_rc_stack(rng.raw()));
    if (!r.degenerate) return r.image;
  }
  return apply_rc_stack(image, sample_rc_stack(rng.raw())).image;
}

inline void ensure_grads(ModelParams& params, const std::vector<std::string>& names) {
  for (const std::string& name : names) param(params, name).ensure_grad();
}

inline void clear_grads(ModelParams& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

inline void check_finite_loss(double v, const char* where) {
  if (!std::isfinite(v))
    throw NumericError(std::string(where) + ": non-finite loss " + std::to_string(v));
}

}  // namespace detail

// One update of the registration side: two fresh contrast views per image,
// flow from the first view pair, variance weight taken from the frozen
// variance decoder, loss supervised on the un-augmented pair. Updates every
// parameter except the variance decoder.
inline double registration_step(ModelParams& params, AdamState& state,
                                const std::vector<const PairSample*>& batch,
                                const TrainConfig& cfg, Rng& aug_rng) {
  ACCAR_CHECK(!batch.empty(), "registration_step: empty batch");
  Tape tape;
  Tensor total = Tensor::scalar(0.0);
  for (const PairSample* pair : batch) {
    const Tensor m1 = detail::augment_view(pair->moving, aug_rng);
    const Tensor m2 = detail::augment_view(pair->moving, aug_rng);
    const Tensor f1 = detail::augment_view(pair->fixed, aug_rng);
    const Tensor f2 = detail::augment_view(pair->fixed, aug_rng);
    auto enc_m1 = encoder_forward(m1, params, cfg.network);
    auto enc_m2 = encoder_forward(m2, params, cfg.network);
    auto enc_f1 = encoder_forward(f1, params, cfg.network);
    auto enc_f2 = encoder_forward(f2, params, cfg.network);
    Tensor u = decoder_forward(enc_m1.first, enc_f1.first, enc_m1.second, enc_f1.second, params,
                               cfg.network);
    Tensor lv;
    {
      NoGrad ng;
      lv = variance_forward(apply_displacement(m1, u), f1, params, cfg.network);
    }
    total = total + registration_loss(pair->moving, pair->fixed, u, lv, enc_m1.first, enc_m2.first,
                                      enc_f1.first, enc_f2.first, cfg.weights,
                                      param(params, "proj.head.w"), param(params, "proj.head.b"));
  }
  total = scale(total, 1.0 / double(batch.size()));
  const double loss = total.item();
  detail::check_finite_loss(loss, "registration_step");
  tape.backward(total);
  const auto names = registration_param_names(params);
  detail::ensure_grads(params, names);
  adam_step(params, state, names, cfg.lr);
  detail::clear_grads(params);
  return loss;
}

// One update of the variance side: the flow is computed without recording,
// so no gradient can reach the registration decoder, and only the variance
// decoder is stepped (the shared encoder stays frozen here).
inline double variance_step(ModelParams& params, AdamState& state,
                            const std::vector<const PairSample*>& batch, const TrainConfig& cfg,
                            Rng& aug_rng) {
  ACCAR_CHECK(!batch.empty(), "variance_step: empty batch");
  Tape tape;
  Tensor total = Tensor::scalar(0.0);
  for (const PairSample* pair : batch) {
    const Tensor m1 = detail::augment_view(pair->moving, aug_rng);
    const Tensor f1 = detail::augment_view(pair->fixed, aug_rng);
    Tensor warped_aug, warped;
    {
      NoGrad ng;
      auto enc_m = encoder_forward(m1, params, cfg.network);
      auto enc_f = encoder_forward(f1, params, cfg.network);
      Tensor u = decoder_forward(enc_m.first, enc_f.first, enc_m.second, enc_f.second, params,
                                 cfg.network);
      warped_aug = apply_displacement(m1, u);
      warped = apply_displacement(pair->moving, u);
    }
    Tensor lv = variance_forward(warped_aug, f1, params, cfg.network);
    total = total + beta_nll(warped, pair->fixed, lv, cfg.weights.beta);
  }
  total = scale(total, 1.0 / double(batch.size()));
  const double loss = total.item();
  detail::check_finite_loss(loss, "variance_step");
  tape.backward(total);
  const auto names = variance_param_names(params);
  detail::ensure_grads(params, names);
  adam_step(params, state, names, cfg.lr);
  detail::clear_grads(params);
  return loss;
}

struct Checkpoint {
  NetworkConfig network;
  ModelParams params;
  AdamState opt;
  int64_t step = 0;
  std::string data_rng_state;
  std::string aug_rng_state;
};

struct StepLog {
  int64_t step = 0;
  char phase = 'R';  // 'R' registration, 'V' variance
  double loss = 0.0;
};

namespace detail {

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline nlohmann::json network_config_json(const NetworkConfig& c) {
  return nlohmann::json{{"side", c.side},
                        {"levels", c.levels},
                        {"enc_channels", c.enc_channels},
                        {"dec_channels", c.dec_channels},
                        {"proj_channels", c.proj_channels},
                        {"condition", condition_kind_name(c.condition)},
                        {"fixed_pyramid_level", c.fixed_pyramid_level},
                        {"slope", c.slope},
                        {"fft_keep", c.fft_keep},
                        {"use_modulation", c.use_modulation}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "side",       "levels", "enc_channels", "dec_channels",   "proj_channels",
      "condition",  "slope",  "fft_keep",     "use_modulation", "fixed_pyramid_level"};
  for (auto it = j.begin(); it != j.end(); ++it)
    ACCAR_CHECK(std::find(known.begin(), known.end(), it.key()) != known.end(),
                "network config: unknown key '" + it.key() + "'");
  NetworkConfig c;
  c.side = j.value("side", c.side);
  c.levels = j.value("levels", c.levels);
  c.enc_channels = j.value("enc_channels", c.enc_channels);
  c.dec_channels = j.value("dec_channels", c.dec_channels);
  c.proj_channels = j.value("proj_channels", c.proj_channels);
  if (j.contains("condition")) c.condition = condition_kind_parse(j.at("condition").get<std::string>());
  c.fixed_pyramid_level = j.value("fixed_pyramid_level", c.fixed_pyramid_level);
  c.slope = j.value("slope", c.slope);
  c.fft_keep = j.value("fft_keep", c.fft_keep);
  c.use_modulation = j.value("use_modulation", c.use_modulation);
  c.validate();
  return c;
}

inline void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(reinterpret_cast<const char*>(p), n);
}
inline void put_u32(std::string& out, uint32_t v) { put_bytes(out, &v, 4); }
inline void put_u8(std::string& out, uint8_t v) { put_bytes(out, &v, 1); }
inline void put_i64(std::string& out, int64_t v) { put_bytes(out, &v, 8); }

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  void take(void* p, size_t n) {
    if (pos + n > buf.size()) throw DataError("checkpoint: truncated entry table");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    take(&v, 4);
    return v;
  }
  uint8_t u8() {
    uint8_t v;
    take(&v, 1);
    return v;
  }
  int64_t i64() {
    int64_t v;
    take(&v, 8);
    return v;
  }
};

constexpr char kContainerMagic[8] = {'A', 'C', 'C', 'A', 'R', 'C', 'K', 'P'};
constexpr uint32_t kContainerVersion = 1;
constexpr uint8_t kEntryTensor = 0;  // rank + extents + f64 payload
constexpr uint8_t kEntryBytes = 1;   // rank 1, extents[0] = byte count

inline void put_entry_tensor(std::string& out, const std::string& name, const Shape& shape,
                             const std::vector<double>& data) {
  put_u32(out, uint32_t(name.size()));
  put_bytes(out, name.data(), name.size());
  put_u8(out, kEntryTensor);
  put_u8(out, uint8_t(shape.size()));
  for (int64_t e : shape) put_i64(out, e);
  put_bytes(out, data.data(), data.size() * 8);
}

inline void put_entry_bytes(std::string& out, const std::string& name, const std::string& data) {
  put_u32(out, uint32_t(name.size()));
  put_bytes(out, name.data(), name.size());
  put_u8(out, kEntryBytes);
  put_u8(out, 1);
  put_i64(out, int64_t(data.size()));
  put_bytes(out, data.data(), data.size());
}

}  // namespace detail

// Single-file tensor table: magic, version, entry count, (name, tag,
// extents, payload) table, trailing CRC32 over everything before it. The
// same container carries checkpoints, dataset pairs, and single images.
struct TensorContainer {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> blobs;
};

inline void save_container(const TensorContainer& c, const std::string& path) {
  using namespace detail;
  std::string body;
  put_bytes(body, kContainerMagic, 8);
  put_u32(body, kContainerVersion);
  put_u32(body, uint32_t(c.tensors.size() + c.blobs.size()));
  for (const auto& [name, data] : c.blobs) put_entry_bytes(body, name, data);
  for (const auto& [name, t] : c.tensors) put_entry_tensor(body, name, t.shape(), t.val());
  const uint32_t crc =
      uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size())));
  put_u32(body, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("container: cannot open for writing: " + path);
  out.write(body.data(), std::streamsize(body.size()));
  if (!out) throw DataError("container: write failed: " + path);
}

inline TensorContainer load_container(const std::string& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("container: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 20) throw DataError("container: file too short");
  const std::string body = buf.substr(0, buf.size() - 4);
  uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  const uint32_t crc =
      uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size())));
  if (crc != stored) throw DataError("container: checksum mismatch");

  ByteReader r{body};
  char magic[8];
  r.take(magic, 8);
  if (std::memcmp(magic, kContainerMagic, 8) != 0) throw DataError("container: bad magic");
  const uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw DataError("container: unsupported version " + std::to_string(version));
  const uint32_t entries = r.u32();

  TensorContainer c;
  for (uint32_t e = 0; e < entries; ++e) {
    std::string name(r.u32(), '\0');
    r.take(name.data(), name.size());
    const uint8_t tag = r.u8();
    const uint8_t rank = r.u8();
    Shape shape(rank, 0);
    for (uint8_t d = 0; d < rank; ++d) shape[d] = r.i64();
    const int64_t n = shape_numel(shape);
    if (n < 0) throw DataError("container: negative extent in " + name);
    if (tag == kEntryBytes) {
      std::string data(size_t(n), '\0');
      r.take(data.data(), data.size());
      c.blobs.emplace(std::move(name), std::move(data));
    } else if (tag == kEntryTensor) {
      std::vector<double> data(size_t(n), 0.0);
      r.take(data.data(), size_t(n) * 8);
      c.tensors.emplace(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    } else {
      throw DataError("container: unknown entry tag in " + name);
    }
  }
  if (r.pos != body.size()) throw DataError("container: trailing bytes after entry table");
  return c;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json meta = {{"step", ckpt.step},
                         {"data_rng", ckpt.data_rng_state},
                         {"aug_rng", ckpt.aug_rng_state},
                         {"network", detail::network_config_json(ckpt.network)},
                         {"adam_t", nlohmann::json::object()}};
  for (const auto& [name, slot] : ckpt.opt.slots) meta["adam_t"][name] = slot.t;

  TensorContainer c;
  c.blobs.emplace("__meta__", meta.dump());
  for (const auto& [name, t] : ckpt.params) c.tensors.emplace(name, t);
  for (const auto& [name, slot] : ckpt.opt.slots) {
    c.tensors.emplace("adam.m:" + name,
                      Tensor::from({int64_t(slot.m.size())}, slot.m));
    c.tensors.emplace("adam.v:" + name,
                      Tensor::from({int64_t(slot.v.size())}, slot.v));
  }
  save_container(c, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  TensorContainer c = load_container(path);
  auto meta_it = c.blobs.find("__meta__");
  if (meta_it == c.blobs.end()) throw DataError("checkpoint: missing __meta__ entry");

  nlohmann::json meta = nlohmann::json::parse(meta_it->second, nullptr, false);
  if (meta.is_discarded()) throw DataError("checkpoint: unparseable __meta__ entry");
  Checkpoint ckpt;
  ckpt.step = meta.at("step").get<int64_t>();
  ckpt.data_rng_state = meta.at("data_rng").get<std::string>();
  ckpt.aug_rng_state = meta.at("aug_rng").get<std::string>();
  ckpt.network = detail::network_config_from_json(meta.at("network"));

  for (auto& [name, t] : c.tensors) {
    if (name.rfind("adam.m:", 0) == 0) {
      ckpt.opt.slots[name.substr(7)].m = t.val();
    } else if (name.rfind("adam.v:", 0) == 0) {
      ckpt.opt.slots[name.substr(7)].v = t.val();
    } else {
      t.set_requires_grad(true);
      ckpt.params.emplace(name, t);
    }
  }
  for (auto& [name, slot] : ckpt.opt.slots) {
    slot.t = meta.at("adam_t").value(name, int64_t(0));
    if (slot.m.size() != slot.v.size()) throw DataError("checkpoint: moment pair mismatch for " + name);
  }
  return ckpt;
}

// Runs the alternating schedule from scratch or from a checkpoint. Resuming
// with the same config and dataset reproduces the uninterrupted run
// bit-exactly because every mutable piece of state rides in the checkpoint.
inline Checkpoint train(const TrainConfig& cfg, const std::vector<PairSample>& dataset,
                        const Checkpoint* resume = nullptr, std::vector<StepLog>* log = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  for (const PairSample& pair : dataset)
    ACCAR_CHECK(pair.moving.rank() == 2 && pair.moving.shape()[0] == cfg.network.side &&
                    pair.moving.shape()[1] == cfg.network.side,
                "train: dataset image size does not match network side");

  ModelParams params;
  AdamState state;
  Rng data_rng, aug_rng;
  int64_t start = 0;
  if (resume) {
    ACCAR_CHECK(resume->step <= cfg.steps, "train: checkpoint is already past the requested steps");
    params = resume->params;
    state = resume->opt;
    data_rng.deserialize(resume->data_rng_state);
    aug_rng.deserialize(resume->aug_rng_state);
    start = resume->step;
  } else {
    Rng init_rng{detail::mix_seed(cfg.seed, 0)};
    params = init_params(cfg.network, init_rng);
    data_rng = Rng{detail::mix_seed(cfg.seed, 1)};
    aug_rng = Rng{detail::mix_seed(cfg.seed, 2)};
  }

  for (int64_t k = start; k < cfg.steps; ++k) {
    std::vector<const PairSample*> batch;
    for (int64_t b = 0; b < cfg.batch; ++b)
      batch.push_back(&dataset[size_t(data_rng.below(int64_t(dataset.size())))]);
    const bool reg_phase = k < cfg.warmup || ((k - cfg.warmup) / cfg.alternate_every) % 2 == 0;
    const double loss = reg_phase ? registration_step(params, state, batch, cfg, aug_rng)
                                  : variance_step(params, state, batch, cfg, aug_rng);
    if (log) log->push_back({k, reg_phase ? 'R' : 'V', loss});
  }

  Checkpoint out;
  out.network = cfg.network;
  out.params = std::move(params);
  out.opt = std::move(state);
  out.step = cfg.steps;
  out.data_rng_state = data_rng.serialize();
  out.aug_rng_state = aug_rng.serialize();
  return out;
}

}  // namespace accar
