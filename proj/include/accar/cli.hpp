#pragma once

// Command implementations behind the executable: dataset simulation,
// training, evaluation, sparsification reports, stand-alone augmentation,
// and feature-RMSD summaries. Each command is a plain function over paths
// so tests can drive it in-process; run_cli() adds flag parsing and the
// exit-code mapping (0 ok, 1 usage, 2 data, 3 numeric).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "accar/config.hpp"
#include "accar/metrics.hpp"
#include "accar/trainer.hpp"

namespace accar {

inline void write_pgm(const Tensor& img, const std::string& path) {
  ACCAR_CHECK(img.rank() == 2, "write_pgm: [H,W] image expected");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("pgm: cannot open for writing: " + path);
  out << "P5\n" << img.shape()[1] << ' ' << img.shape()[0] << "\n255\n";
  for (double v : img.val()) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out.put(char(uint8_t(std::lround(c * 255.0))));
  }
  if (!out) throw DataError("pgm: write failed: " + path);
}

struct PlotSeries {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<std::pair<double, double>> pts;
};

// Minimal self-contained line plot; CSV stays the canonical output.
inline void write_svg_plot(const std::string& path, const std::string& title,
                           const std::vector<PlotSeries>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const PlotSeries& s : series)
    for (const auto& [x, y] : s.pts) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0.0, x1 = 1.0;
  if (y0 >= y1) y0 -= 0.5, y1 += 0.5;
  const double w = 640, h = 440, ml = 70, mr = 20, mt = 40, mb = 50;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); };

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("svg: cannot open for writing: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n"
      << "<!-- accar-svg v1 -->\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
      << "</text>\n";
  out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n"
      << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  out << std::setprecision(4);
  out << "<text x='" << ml << "' y='" << h - mb + 18 << "' font-size='11'>" << x0 << "</text>\n"
      << "<text x='" << w - mr << "' y='" << h - mb + 18
      << "' text-anchor='end' font-size='11'>" << x1 << "</text>\n"
      << "<text x='" << ml - 6 << "' y='" << h - mb << "' text-anchor='end' font-size='11'>" << y0
      << "</text>\n"
      << "<text x='" << ml - 6 << "' y='" << mt + 4 << "' text-anchor='end' font-size='11'>" << y1
      << "</text>\n";
  double legend_y = mt + 8;
  for (const PlotSeries& s : series) {
    out << "<polyline fill='none' stroke='" << s.color << "'"
        << (s.dashed ? " stroke-dasharray='5,4'" : "") << " points='";
    out << std::setprecision(6);
    for (const auto& [x, y] : s.pts) out << px(x) << ',' << py(y) << ' ';
    out << "'/>\n";
    if (!s.label.empty()) {
      out << "<line x1='" << w - mr - 130 << "' y1='" << legend_y << "' x2='" << w - mr - 110
          << "' y2='" << legend_y << "' stroke='" << s.color << "'"
          << (s.dashed ? " stroke-dasharray='5,4'" : "") << "/>\n"
          << "<text x='" << w - mr - 104 << "' y='" << legend_y + 4 << "' font-size='11'>"
          << s.label << "</text>\n";
      legend_y += 16;
    }
  }
  out << "</svg>\n";
  if (!out) throw DataError("svg: write failed: " + path);
}

namespace detail {

inline std::string pair_file_name(int64_t i) {
  std::ostringstream os;
  os << "pair_" << std::setw(4) << std::setfill('0') << i << ".bin";
  return os.str();
}

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("csv: cannot open for writing: " + path);
  out << "# accar-csv v1\n";
  out << std::setprecision(12);
  return out;
}

inline std::set<int64_t> foreground_labels(const Tensor& seg) {
  std::set<int64_t> out;
  for (double v : seg.val())
    if (int64_t(v) != 0) out.insert(int64_t(v));
  return out;
}

// Displacement prediction for one raw (un-augmented) pair.
inline Tensor predict_flow(const PairSample& pair, const ModelParams& params,
                           const NetworkConfig& cfg) {
  auto enc_m = encoder_forward(pair.moving, params, cfg);
  auto enc_f = encoder_forward(pair.fixed, params, cfg);
  return decoder_forward(enc_m.first, enc_f.first, enc_m.second, enc_f.second, params, cfg);
}

// Decoder feature maps for `variants` independently re-contrasted copies of
// the same pair; the spread between them measures contrast sensitivity.
inline std::vector<Tensor> variant_features(const PairSample& pair, const ModelParams& params,
                                            const NetworkConfig& cfg, int64_t variants, Rng& rng) {
  std::vector<Tensor> feats;
  for (int64_t v = 0; v < variants; ++v) {
    const Tensor m = augment_view(pair.moving, rng);
    const Tensor f = augment_view(pair.fixed, rng);
    auto enc_m = encoder_forward(m, params, cfg);
    auto enc_f = encoder_forward(f, params, cfg);
    feats.push_back(decoder_features(enc_m.first, enc_f.first, enc_m.second, enc_f.second, params,
                                     cfg));
  }
  return feats;
}

}  // namespace detail

// Writes `sim_count` deformed phantom pairs plus a manifest. Phantom seeds
// advance per item; deformation specs cycle through the configured list with
// a per-item seed offset so every pair gets a fresh field.
inline std::vector<std::string> cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.out_dir + "/dataset";
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"format_version", 1},
                             {"count", cfg.sim_count},
                             {"size", cfg.sim_size},
                             {"structures", cfg.sim_structures},
                             {"entries", nlohmann::json::array()}};
  std::vector<std::string> files;
  for (int64_t i = 0; i < cfg.sim_count; ++i) {
    FFDSpec ffd = cfg.ffds.empty() ? FFDSpec{} : cfg.ffds[size_t(i) % cfg.ffds.size()];
    ffd.seed += uint64_t(i) * 0x9E3779B9ULL;
    const int64_t phantom_seed = int64_t(cfg.train.seed) + i;
    PairSample pair = gen_pair(gen_phantom(phantom_seed, cfg.sim_size, cfg.sim_structures), ffd);

    nlohmann::json meta = {{"format_version", 1},
                           {"phantom_seed", phantom_seed},
                           {"mesh_spacing", ffd.mesh_spacing},
                           {"amplitude", ffd.amplitude},
                           {"field_seed", ffd.seed}};
    TensorContainer c;
    c.blobs.emplace("__meta__", meta.dump());
    c.tensors.emplace("moving", pair.moving);
    c.tensors.emplace("fixed", pair.fixed);
    c.tensors.emplace("moving_seg", pair.moving_seg);
    c.tensors.emplace("fixed_seg", pair.fixed_seg);
    c.tensors.emplace("true_field", pair.true_field);
    const std::string file = detail::pair_file_name(i);
    save_container(c, dir + "/" + file);
    meta.erase("format_version");
    meta["file"] = file;
    manifest["entries"].push_back(meta);
    files.push_back(file);
  }
  std::ofstream out(dir + "/manifest.json", std::ios::trunc);
  if (!out) throw DataError("simulate: cannot write manifest");
  out << manifest.dump(2) << '\n';
  return files;
}

inline std::vector<PairSample> load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw DataError("dataset: missing manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw DataError("dataset: unparseable manifest in " + dir);
  if (manifest.value("format_version", 0) != 1)
    throw DataError("dataset: unsupported manifest version");
  std::vector<PairSample> out;
  for (const nlohmann::json& entry : manifest.at("entries")) {
    TensorContainer c = load_container(dir + "/" + entry.at("file").get<std::string>());
    auto need = [&](const char* name) -> Tensor {
      auto it = c.tensors.find(name);
      if (it == c.tensors.end())
        throw DataError(std::string("dataset: pair file missing tensor '") + name + "'");
      return it->second;
    };
    PairSample pair;
    pair.moving = need("moving");
    pair.fixed = need("fixed");
    pair.moving_seg = need("moving_seg");
    pair.fixed_seg = need("fixed_seg");
    pair.true_field = need("true_field");
    out.push_back(std::move(pair));
  }
  if (out.empty()) throw DataError("dataset: manifest lists no entries");
  return out;
}

// Trains on the configured dataset and writes checkpoint.bin plus a step log.
inline Checkpoint cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.train.data.empty() ? cfg.out_dir + "/dataset" : cfg.train.data;
  const std::vector<PairSample> dataset = load_dataset(dir);
  std::vector<StepLog> log;
  Checkpoint ckpt = train(cfg.train, dataset, nullptr, &log);
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(ckpt, cfg.out_dir + "/checkpoint.bin");
  std::ofstream csv = detail::open_csv(cfg.out_dir + "/train_log.csv");
  csv << "step,network,loss\n";
  for (const StepLog& row : log)
    csv << row.step << ',' << (row.phase == 'R' ? "registration" : "variance") << ',' << row.loss
        << '\n';
  return ckpt;
}

struct EvalRow {
  std::string name;
  double dice_pre = 0, dice_post = 0, hd95_pre = 0, hd95_post = 0;
  double folding = 0, grad_jac = 0, epe_zero = 0, epe = 0, feat_rmsd = 0;
};

// Per-pair registration quality against the known truth, plus the spread of
// decoder features across re-contrasted variants. Appends mean and std rows
// to the CSV.
inline std::vector<EvalRow> cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
                                     const std::string& out_dir, int64_t variants, uint64_t seed) {
  ACCAR_CHECK(variants >= 2, "eval: variants must be at least 2");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<PairSample> dataset = load_dataset(data_dir);
  std::filesystem::create_directories(out_dir);

  std::vector<EvalRow> rows;
  NoGrad ng;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const PairSample& pair = dataset[i];
    EvalRow row;
    row.name = detail::pair_file_name(int64_t(i));
    Tensor u = detail::predict_flow(pair, ckpt.params, ckpt.network);
    Tensor warped_seg = warp_nearest(pair.moving_seg, u);

    const std::set<int64_t> labels = detail::foreground_labels(pair.fixed_seg);
    double dpre = 0, dpost = 0, hpre = 0, hpost = 0;
    int64_t nh = 0;
    for (int64_t l : labels) {
      dpre += dice(pair.moving_seg, pair.fixed_seg, l);
      dpost += dice(warped_seg, pair.fixed_seg, l);
      const bool in_moving = detail::foreground_labels(pair.moving_seg).count(l) != 0;
      const bool in_warped = detail::foreground_labels(warped_seg).count(l) != 0;
      if (in_moving && in_warped) {
        hpre += hd95(pair.moving_seg, pair.fixed_seg, l);
        hpost += hd95(warped_seg, pair.fixed_seg, l);
        ++nh;
      }
    }
    const double nl = double(labels.empty() ? 1 : labels.size());
    row.dice_pre = dpre / nl;
    row.dice_post = dpost / nl;
    row.hd95_pre = nh ? hpre / double(nh) : std::nan("");
    row.hd95_post = nh ? hpost / double(nh) : std::nan("");
    row.folding = folding_ratio(u);
    row.grad_jac = grad_jacobian_mag(u);
    row.epe_zero = end_point_error(Tensor::zeros(u.shape()), pair.true_field);
    row.epe = end_point_error(u, pair.true_field);

    Rng rng{detail::mix_seed(seed, 1000 + uint64_t(i))};
    row.feat_rmsd =
        feature_rmsd(detail::variant_features(pair, ckpt.params, ckpt.network, variants, rng))
            .second;
    rows.push_back(row);
  }

  std::ofstream csv = detail::open_csv(out_dir + "/eval.csv");
  csv << "pair,dice_pre,dice_post,hd95_pre,hd95_post,folding,grad_jac,epe_zero,epe,feat_rmsd\n";
  auto emit = [&](const std::string& name, auto get) {
    csv << name;
    for (int k = 0; k < 9; ++k) csv << ',' << get(k);
    csv << '\n';
  };
  auto field = [](const EvalRow& r, int k) {
    const double v[9] = {r.dice_pre, r.dice_post, r.hd95_pre, r.hd95_post, r.folding,
                         r.grad_jac, r.epe_zero,  r.epe,      r.feat_rmsd};
    return v[k];
  };
  for (const EvalRow& r : rows) emit(r.name, [&](int k) { return field(r, k); });
  const double n = double(rows.size());
  std::vector<double> mean(9, 0.0), sd(9, 0.0);
  for (const EvalRow& r : rows)
    for (int k = 0; k < 9; ++k) mean[size_t(k)] += field(r, k) / n;
  for (const EvalRow& r : rows)
    for (int k = 0; k < 9; ++k) {
      const double d = field(r, k) - mean[size_t(k)];
      sd[size_t(k)] += d * d / n;
    }
  emit("mean", [&](int k) { return mean[size_t(k)]; });
  emit("std", [&](int k) { return std::sqrt(sd[size_t(k)]); });
  return rows;
}

struct SparsifyResult {
  std::vector<SparsificationCurve> curves;
  std::vector<double> areas;
};

inline SparsifyResult cmd_sparsify(const std::string& ckpt_path, const std::string& data_dir,
                                   const std::string& out_dir, int64_t n_steps) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.params.find("var.head.w") == ckpt.params.end())
    throw DataError("sparsify: checkpoint has no variance decoder");
  const std::vector<PairSample> dataset = load_dataset(data_dir);
  std::filesystem::create_directories(out_dir);

  SparsifyResult result;
  std::ofstream csv = detail::open_csv(out_dir + "/sparsify.csv");
  csv << "pair,fraction_removed,remaining_mse,oracle_mse\n";
  std::vector<PlotSeries> plot;
  const char* colors[6] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  NoGrad ng;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const PairSample& pair = dataset[i];
    Tensor u = detail::predict_flow(pair, ckpt.params, ckpt.network);
    Tensor warped = apply_displacement(pair.moving, u);
    const int64_t hw = warped.numel();
    Tensor sq = Tensor::zeros(warped.shape());
    Tensor var = Tensor::zeros(warped.shape());
    Tensor lv = variance_forward(warped, pair.fixed, ckpt.params, ckpt.network);
    for (int64_t k = 0; k < hw; ++k) {
      const double r = warped.val()[size_t(k)] - pair.fixed.val()[size_t(k)];
      sq.mutable_val()[size_t(k)] = r * r;
      var.mutable_val()[size_t(k)] = std::exp(lv.val()[size_t(k)]);
    }
    SparsificationCurve curve = sparsification_curve(sq, var, n_steps);
    for (size_t k = 0; k < curve.fractions_removed.size(); ++k)
      csv << detail::pair_file_name(int64_t(i)) << ',' << curve.fractions_removed[k] << ','
          << curve.remaining_mse[k] << ',' << curve.oracle_mse[k] << '\n';
    const std::string color = colors[i % 6];
    PlotSeries model{"pair " + std::to_string(i), color, false, {}};
    PlotSeries oracle{"", color, true, {}};
    for (size_t k = 0; k < curve.fractions_removed.size(); ++k) {
      model.pts.emplace_back(curve.fractions_removed[k], curve.remaining_mse[k]);
      oracle.pts.emplace_back(curve.fractions_removed[k], curve.oracle_mse[k]);
    }
    plot.push_back(std::move(model));
    plot.push_back(std::move(oracle));
    result.areas.push_back(sparsification_error(curve));
    result.curves.push_back(std::move(curve));
  }
  write_svg_plot(out_dir + "/sparsify.svg", "remaining MSE vs fraction removed (dashed: oracle)",
                 plot);
  std::ofstream summary = detail::open_csv(out_dir + "/sparsify_summary.csv");
  summary << "pair,area_between_curves\n";
  for (size_t i = 0; i < result.areas.size(); ++i)
    summary << detail::pair_file_name(int64_t(i)) << ',' << result.areas[i] << '\n';
  return result;
}

// Applies one freshly sampled contrast stack to a stored image. The output
// is a tensor container unless the target path asks for a PGM preview.
inline Tensor cmd_augment(const std::string& image_path, uint64_t seed,
                          const std::string& out_path, const std::string& entry = "") {
  TensorContainer c = load_container(image_path);
  Tensor image;
  if (!entry.empty()) {
    auto it = c.tensors.find(entry);
    if (it == c.tensors.end()) throw DataError("augment: input has no tensor '" + entry + "'");
    image = it->second;
  } else if (auto it = c.tensors.find("data"); it != c.tensors.end()) {
    image = it->second;
  } else if (c.tensors.size() == 1) {
    image = c.tensors.begin()->second;
  } else {
    throw DataError("augment: input has no 'data' tensor and is ambiguous; use --tensor");
  }
  const AugmentResult r = apply_rc_stack(image, sample_rc_stack(seed));
  if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".pgm") {
    write_pgm(r.image, out_path);
  } else {
    TensorContainer out;
    nlohmann::json meta = {{"format_version", 1}, {"seed", seed}, {"degenerate", r.degenerate}};
    out.blobs.emplace("__meta__", meta.dump());
    out.tensors.emplace("data", r.image);
    save_container(out, out_path);
  }
  return r.image;
}

// Full ordered-pair RMSD table across re-contrasted variants of every pair.
inline double cmd_feat_rmsd(const std::string& ckpt_path, const std::string& data_dir,
                            const std::string& out_dir, int64_t variants, uint64_t seed) {
  ACCAR_CHECK(variants >= 2, "feat-rmsd: variants must be at least 2");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<PairSample> dataset = load_dataset(data_dir);
  std::filesystem::create_directories(out_dir);

  std::ofstream csv = detail::open_csv(out_dir + "/feat_rmsd.csv");
  csv << "pair,variant_i,variant_j,rmsd\n";
  std::ofstream summary = detail::open_csv(out_dir + "/feat_rmsd_summary.csv");
  summary << "pair,mean_rmsd\n";
  double overall = 0.0;
  NoGrad ng;
  for (size_t i = 0; i < dataset.size(); ++i) {
    Rng rng{detail::mix_seed(seed, 1000 + uint64_t(i))};
    const auto feats =
        detail::variant_features(dataset[i], ckpt.params, ckpt.network, variants, rng);
    const auto [pair_rmsds, mean] = feature_rmsd(feats);
    size_t idx = 0;
    for (int64_t a = 0; a < variants; ++a)
      for (int64_t b = 0; b < variants; ++b) {
        if (a == b) continue;
        csv << detail::pair_file_name(int64_t(i)) << ',' << a << ',' << b << ','
            << pair_rmsds[idx++] << '\n';
      }
    summary << detail::pair_file_name(int64_t(i)) << ',' << mean << '\n';
    overall += mean / double(dataset.size());
  }
  summary << "overall," << overall << '\n';
  return overall;
}

namespace detail {

inline void apply_ablations(RunConfig& cfg, const std::vector<std::string>& ablations) {
  for (const std::string& kv : ablations) {
    const size_t eq = kv.find('=');
    ACCAR_CHECK(eq != std::string::npos, "--ablate expects KEY=VAL, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "acfm") {
      ACCAR_CHECK(val == "on" || val == "off", "--ablate acfm takes on|off");
      cfg.train.network.use_modulation = val == "on";
    } else if (key == "clr") {
      try {
        cfg.train.weights.lambda2 = std::stod(val);
      } catch (const std::exception&) {
        throw std::invalid_argument("accar: --ablate clr takes a number");
      }
    } else {
      throw std::invalid_argument("accar: --ablate: unknown key '" + key +
                                  "' (expected acfm|clr)");
    }
  }
}

inline int64_t parse_pyramid(const std::string& s) {
  if (s == "progressive") return -1;
  if (s.rfind("fixed:", 0) == 0) {
    try {
      return std::stoll(s.substr(6));
    } catch (const std::exception&) {
    }
  }
  throw std::invalid_argument("accar: --pyramid expects progressive|fixed:K, got '" + s + "'");
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"contrast-agnostic deformable registration on synthetic 2D pairs"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt_path, image_path, out_path;
  std::vector<std::string> ablations;
  std::string condition, pyramid;
  int64_t seed = -1, variants = -1, steps = -1;

  auto add_common = [&](CLI::App* sub, bool with_model_flags) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--out", out_dir, "output directory");
    if (with_model_flags) {
      sub->add_option("--ablate", ablations, "ablation KEY=VAL (acfm=off, clr=0)");
      sub->add_option("--condition", condition,
                      "conditioning input: haar_ll|haar_h|haar_all|fft|db|bior");
      sub->add_option("--pyramid", pyramid, "conditioning scale: progressive|fixed:K");
    }
  };

  CLI::App* sim = app.add_subcommand("simulate", "write a synthetic dataset");
  add_common(sim, false);
  CLI::App* trn = app.add_subcommand("train", "train on a simulated dataset");
  add_common(trn, true);
  trn->add_option("--data", data_dir, "dataset directory");
  CLI::App* evl = app.add_subcommand("eval", "registration metrics against the known truth");
  add_common(evl, false);
  evl->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  evl->add_option("--data", data_dir, "dataset directory");
  evl->add_option("--variants", variants, "re-contrasted variants per pair");
  CLI::App* spr = app.add_subcommand("sparsify", "uncertainty sparsification curves");
  add_common(spr, false);
  spr->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  spr->add_option("--data", data_dir, "dataset directory");
  spr->add_option("--steps", steps, "curve resolution");
  std::string tensor_entry;
  CLI::App* aug = app.add_subcommand("augment", "apply one random contrast stack to an image");
  aug->add_option("--image", image_path, "input tensor container")->required();
  aug->add_option("--seed", seed, "stack seed");
  aug->add_option("--tensor", tensor_entry, "entry to read from multi-tensor containers");
  aug->add_option("--out-file", out_path, "output file (.pgm for a preview)")->required();
  CLI::App* fr = app.add_subcommand("feat-rmsd", "decoder-feature spread across contrasts");
  add_common(fr, false);
  fr->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  fr->add_option("--data", data_dir, "dataset directory");
  fr->add_option("--variants", variants, "re-contrasted variants per pair");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);

    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed >= 0) cfg.train.seed = uint64_t(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!condition.empty()) cfg.train.network.condition = condition_kind_parse(condition);
    if (!pyramid.empty()) cfg.train.network.fixed_pyramid_level = detail::parse_pyramid(pyramid);
    detail::apply_ablations(cfg, ablations);
    if (!data_dir.empty()) cfg.train.data = data_dir;
    cfg.validate();
    const std::string dataset_dir =
        cfg.train.data.empty() ? cfg.out_dir + "/dataset" : cfg.train.data;
    if (variants < 0) variants = cfg.rmsd_variants;
    if (steps < 0) steps = cfg.sparsify_steps;

    if (sim->parsed()) {
      cmd_simulate(cfg);
    } else if (trn->parsed()) {
      cmd_train(cfg);
    } else if (evl->parsed()) {
      cmd_eval(ckpt_path, dataset_dir, cfg.out_dir, variants, cfg.train.seed);
    } else if (spr->parsed()) {
      cmd_sparsify(ckpt_path, dataset_dir, cfg.out_dir, steps);
    } else if (aug->parsed()) {
      cmd_augment(image_path, seed < 0 ? cfg.train.seed : uint64_t(seed), out_path, tensor_entry);
    } else if (fr->parsed()) {
      cmd_feat_rmsd(ckpt_path, dataset_dir, cfg.out_dir, variants, cfg.train.seed);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace accar
