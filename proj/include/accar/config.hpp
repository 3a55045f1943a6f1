#pragma once

// Declarative run configuration: one JSON document covering training,
// dataset simulation, and metric options. Parsing rejects unknown keys at
// every level so typos fail loudly instead of silently using defaults.

#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "accar/synth.hpp"
#include "accar/trainer.hpp"

namespace accar {

struct RunConfig {
  TrainConfig train;
  std::vector<FFDSpec> ffds;  // simulation deformations; dataset cycles through them
  int64_t sim_count = 10;     // pairs written by the simulate command
  int64_t sim_size = 64;
  int64_t sim_structures = 3;
  int64_t sparsify_steps = 20;
  int64_t rmsd_variants = 8;
  std::string out_dir = "out";

  void validate() const {
    train.validate();
    ACCAR_CHECK(sim_count >= 1, "RunConfig: simulate.count must be at least 1");
    ACCAR_CHECK(sim_size >= 16 && sim_size % 16 == 0,
                "RunConfig: simulate.size must be a positive multiple of 16");
    ACCAR_CHECK(sim_structures >= 1 && sim_structures <= 5,
                "RunConfig: simulate.structures outside [1,5]");
    ACCAR_CHECK(sparsify_steps >= 2, "RunConfig: metrics.sparsify_steps must be at least 2");
    ACCAR_CHECK(rmsd_variants >= 2, "RunConfig: metrics.rmsd_variants must be at least 2");
    ACCAR_CHECK(!out_dir.empty(), "RunConfig: out_dir must not be empty");
    for (const FFDSpec& f : ffds) f.validate();
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const char* where,
                       std::initializer_list<const char*> known) {
  ACCAR_CHECK(j.is_object(), std::string(where) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    ACCAR_CHECK(ok, std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

inline LossWeights weights_from_json(const nlohmann::json& j) {
  check_keys(j, "weights", {"lambda1", "lambda2", "lambda3", "beta"});
  LossWeights w;
  w.lambda1 = j.value("lambda1", w.lambda1);
  w.lambda2 = j.value("lambda2", w.lambda2);
  w.lambda3 = j.value("lambda3", w.lambda3);
  w.beta = j.value("beta", w.beta);
  w.validate();
  return w;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  check_keys(j, "train", {"lr", "steps", "alternate_every", "batch", "warmup", "seed", "data",
                          "weights", "network"});
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.alternate_every = j.value("alternate_every", c.alternate_every);
  c.batch = j.value("batch", c.batch);
  c.warmup = j.value("warmup", c.warmup);
  c.seed = j.value("seed", c.seed);
  c.data = j.value("data", c.data);
  if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
  if (j.contains("network")) c.network = network_config_from_json(j.at("network"));
  c.validate();
  return c;
}

inline FFDSpec ffd_from_json(const nlohmann::json& j) {
  check_keys(j, "ffd", {"mesh_spacing", "amplitude", "seed"});
  FFDSpec f;
  f.mesh_spacing = j.value("mesh_spacing", f.mesh_spacing);
  f.amplitude = j.value("amplitude", f.amplitude);
  f.seed = j.value("seed", f.seed);
  f.validate();
  return f;
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "config", {"train", "simulate", "metrics", "out_dir"});
  RunConfig c;
  if (j.contains("train")) c.train = detail::train_config_from_json(j.at("train"));
  if (j.contains("simulate")) {
    const nlohmann::json& s = j.at("simulate");
    detail::check_keys(s, "simulate", {"count", "size", "structures", "ffds"});
    c.sim_count = s.value("count", c.sim_count);
    c.sim_size = s.value("size", c.sim_size);
    c.sim_structures = s.value("structures", c.sim_structures);
    if (s.contains("ffds")) {
      ACCAR_CHECK(s.at("ffds").is_array(), "simulate.ffds: expected an array");
      for (const nlohmann::json& f : s.at("ffds")) c.ffds.push_back(detail::ffd_from_json(f));
    }
  }
  if (j.contains("metrics")) {
    const nlohmann::json& m = j.at("metrics");
    detail::check_keys(m, "metrics", {"sparsify_steps", "rmsd_variants"});
    c.sparsify_steps = m.value("sparsify_steps", c.sparsify_steps);
    c.rmsd_variants = m.value("rmsd_variants", c.rmsd_variants);
  }
  c.out_dir = j.value("out_dir", c.out_dir);
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("config: unparseable JSON in " + path);
  return run_config_from_json(j);
}

}  // namespace accar
