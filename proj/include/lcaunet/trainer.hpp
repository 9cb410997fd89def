#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "lcaunet/checkpoint.hpp"
#include "lcaunet/data.hpp"
#include "lcaunet/model.hpp"
#include "lcaunet/optim.hpp"

namespace lcaunet {

struct Batch {
  Array<float> images;  // (B,3,H,W)
  Array<float> masks;   // (B,1,H,W)
  Array<float> edges;   // (B,1,H,W)
  std::vector<std::string> ids;
};

// Assemble samples picked by `idx` into one NCHW batch. When augmenting, each
// sample's draw is seeded by (aug_seed, dataset index) so the batch layout
// never influences the transform stream.
inline Batch make_batch(const std::vector<data::Sample>& set,
                        const std::vector<std::size_t>& idx, bool augment,
                        std::uint64_t aug_seed) {
  LCAUNET_CHECK_CONFIG(!idx.empty(), "make_batch: empty index list");
  const std::int64_t h = set[idx[0]].mask.dim(0), w = set[idx[0]].mask.dim(1);
  const std::int64_t n = static_cast<std::int64_t>(idx.size());
  Batch b;
  b.images = Array<float>(Shape{n, 3, h, w});
  b.masks = Array<float>(Shape{n, 1, h, w});
  b.edges = Array<float>(Shape{n, 1, h, w});
  for (std::int64_t i = 0; i < n; ++i) {
    const data::Sample* s = &set[idx[static_cast<std::size_t>(i)]];
    data::Sample aug;
    if (augment) {
      aug = data::augment(*s, mix_seed(aug_seed, idx[static_cast<std::size_t>(i)]));
      s = &aug;
    }
    LCAUNET_CHECK_SHAPE(s->mask.dim(0) == h && s->mask.dim(1) == w,
                        "make_batch: mixed sample resolutions");
    std::copy_n(s->image.data.data(), 3 * h * w, b.images.data.data() + i * 3 * h * w);
    std::copy_n(s->mask.data.data(), h * w, b.masks.data.data() + i * h * w);
    std::copy_n(s->edge_gt.data.data(), h * w, b.edges.data.data() + i * h * w);
    b.ids.push_back(s->id);
  }
  return b;
}

// Forward the set in fixed order (no augmentation, no gradients) and score
// each image against its mask.
template <typename T>
std::vector<ImageMetrics> evaluate_model(const LCAUnet<T>& model,
                                         const std::vector<data::Sample>& set,
                                         int batch_size) {
  ag::NoGradGuard freeze;
  std::vector<ImageMetrics> rows;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size();
       start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start;
         i < std::min(set.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      idx.push_back(i);
    Batch b = make_batch(set, idx, /*augment=*/false, 0);
    auto out = model.forward(ag::Var<T>::constant(std::move(b.images)));
    const Array<T>& logits = out.logits.value();
    const std::int64_t hw = logits.dim(2) * logits.dim(3);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Array<T> prob(Shape{hw});
      Array<T> gt(Shape{hw});
      const T* lp = logits.data.data() + static_cast<std::int64_t>(i) * hw;
      const float* mp = b.masks.data.data() + static_cast<std::int64_t>(i) * hw;
      for (std::int64_t j = 0; j < hw; ++j) {
        prob[j] = T(1) / (T(1) + std::exp(-lp[j]));
        gt[j] = static_cast<T>(mp[j]);
      }
      rows.push_back({set[idx[i]].id,
                      metrics_from_counts(confusion(binarize(prob), gt))});
    }
  }
  return rows;
}

struct TrainOutcome {
  double best_val_dice = -1.0;
  double final_train_dice = -1.0;  // overfit mode
  std::string best_ckpt, last_ckpt, log_path;
  std::vector<nlohmann::json> epoch_logs;
};

namespace detail {

struct SplitSets {
  std::vector<data::Sample> train, val, test;
};

inline SplitSets build_datasets(const TrainConfig& cfg) {
  SplitSets s;
  if (cfg.dataset == "synthetic") {
    // One deterministic stream, sliced train | val | test, so ids are unique
    // and sets are disjoint by construction.
    auto all = data::make_synth_set(cfg.synth_train + cfg.synth_val + cfg.synth_test,
                                    mix_seed(cfg.seed, 0xda7a), cfg.img_size,
                                    cfg.img_size);
    auto it = all.begin();
    s.train.assign(it, it + cfg.synth_train);
    it += cfg.synth_train;
    s.val.assign(it, it + cfg.synth_val);
    it += cfg.synth_val;
    s.test.assign(it, all.end());
  } else {
    auto loaded = data::load_isic_dir(cfg.dataset, cfg.seed, cfg.img_size,
                                      cfg.img_size, cfg.train_frac, cfg.val_frac);
    if (!loaded.skipped.empty()) {
      std::cerr << "warning: skipped " << loaded.skipped.size()
                << " unpaired file(s):";
      for (const auto& id : loaded.skipped) std::cerr << ' ' << id;
      std::cerr << '\n';
    }
    s.train = std::move(loaded.train);
    s.val = std::move(loaded.val);
    s.test = std::move(loaded.test);
  }
  return s;
}

inline std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

template <typename T>
double mean_dice(const LCAUnet<T>& model, const std::vector<data::Sample>& set,
                 int batch_size) {
  auto rows = evaluate_model(model, set, batch_size);
  return aggregate_metrics(rows).dice;
}

}  // namespace detail

// Full training run: builds data + model from the config, optimizes with
// decoupled weight decay, reduces lr on validation-Dice plateaus, writes
// JSON-lines epoch logs plus best/last checkpoints under cfg.out_dir.
// Deterministic for a fixed config: no timestamps, no free-running state.
template <typename T = float>
TrainOutcome train(const TrainConfig& cfg, bool quiet = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream f(fs::path(cfg.out_dir) / "config.json");
    LCAUNET_CHECK_CONFIG(f.good(), "cannot write to out_dir ", cfg.out_dir);
    f << config_to_json(cfg).dump(2) << '\n';
  }

  detail::SplitSets sets = detail::build_datasets(cfg);
  const bool overfit = cfg.overfit > 0;
  if (overfit) {
    LCAUNET_CHECK_CONFIG(static_cast<std::size_t>(cfg.overfit) <= sets.train.size(),
                         "overfit=", cfg.overfit, " exceeds train set size ",
                         sets.train.size());
    sets.train.resize(static_cast<std::size_t>(cfg.overfit));
    sets.val.clear();
    sets.test.clear();
  }

  LCAUnet<T> model(cfg.model_config(), cfg.seed);
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW<T> opt(model.params, ocfg);
  PlateauConfig pcfg;
  pcfg.factor = cfg.plateau_factor;
  pcfg.patience = cfg.plateau_patience;
  ReduceLROnPlateau sched(pcfg);
  const BodyLossWeights weights = cfg.loss_weights();

  TrainOutcome outcome;
  outcome.log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  outcome.best_ckpt = (fs::path(cfg.out_dir) / "best.ckpt").string();
  outcome.last_ckpt = (fs::path(cfg.out_dir) / "last.ckpt").string();
  std::ofstream log(outcome.log_path);
  LCAUNET_CHECK_CONFIG(log.good(), "cannot open ", outcome.log_path);
  auto emit = [&](const nlohmann::json& j) {
    log << j.dump() << '\n';
    log.flush();
    if (!quiet) std::cout << j.dump() << '\n';
    outcome.epoch_logs.push_back(j);
  };

  auto run_batch = [&](const Batch& b, std::int64_t step_id) {
    auto out = model.forward(ag::Var<T>::constant(b.images));
    auto rep = total_loss(out.logits, out.edge_maps,
                          ag::Var<T>::constant(b.masks),
                          ag::Var<T>::constant(b.edges), weights);
    const double total = static_cast<double>(rep.total.item());
    if (!std::isfinite(total))
      fail<std::runtime_error>("non-finite loss at step ", step_id,
                               "; batch ids: ", detail::join_ids(b.ids));
    opt.zero_grad();
    ag::backward(rep.total);
    opt.step();
    return rep;
  };

  if (overfit) {
    // One fixed batch, no augmentation: pure capacity check.
    std::vector<std::size_t> idx(sets.train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Batch b = make_batch(sets.train, idx, false, 0);
    const int steps = cfg.max_steps > 0 ? cfg.max_steps : 200;
    for (int s = 1; s <= steps; ++s) {
      auto rep = run_batch(b, s);
      if (s % 10 == 0 || s == 1 || s == steps) {
        const double dice = detail::mean_dice(model, sets.train, cfg.batch_size);
        emit({{"step", s},
              {"total", static_cast<double>(rep.total.item())},
              {"bce", rep.bce},
              {"dice_loss", rep.dice},
              {"edge", rep.edge},
              {"train_dice", dice},
              {"lr", opt.lr()}});
      }
    }
    outcome.final_train_dice = detail::mean_dice(model, sets.train, cfg.batch_size);
    emit({{"final_train_dice", outcome.final_train_dice}});
    save_checkpoint(outcome.last_ckpt, snapshot(cfg, model.params, &opt));
    save_checkpoint(outcome.best_ckpt, snapshot(cfg, model.params));
    return outcome;
  }

  std::vector<std::size_t> order(sets.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t gstep = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    const std::uint64_t epoch_seed =
        mix_seed(mix_seed(cfg.seed, 0xe90c), static_cast<std::uint64_t>(epoch));
    Rng shuffle_rng(mix_seed(epoch_seed, 0x5f));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sum_total = 0, sum_bce = 0, sum_dice = 0, sum_edge = 0;
    std::int64_t seen = 0;
    for (std::size_t start = 0; start < order.size() && !stop;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() +
              static_cast<std::ptrdiff_t>(std::min(
                  order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      Batch b = make_batch(sets.train, idx, cfg.augment, epoch_seed);
      auto rep = run_batch(b, gstep + 1);
      ++gstep;
      const auto bs = static_cast<double>(idx.size());
      sum_total += static_cast<double>(rep.total.item()) * bs;
      sum_bce += rep.bce * bs;
      sum_dice += rep.dice * bs;
      sum_edge += rep.edge * bs;
      seen += static_cast<std::int64_t>(idx.size());
      if (cfg.max_steps > 0 && gstep >= cfg.max_steps) stop = true;
    }

    nlohmann::json j{{"epoch", epoch},
                     {"train_total", sum_total / static_cast<double>(seen)},
                     {"train_bce", sum_bce / static_cast<double>(seen)},
                     {"train_dice_loss", sum_dice / static_cast<double>(seen)},
                     {"train_edge", sum_edge / static_cast<double>(seen)},
                     {"lr", opt.lr()}};
    if (!sets.val.empty()) {
      auto rows = evaluate_model(model, sets.val, cfg.batch_size);
      const Metrics m = aggregate_metrics(rows);
      j["val_acc"] = m.acc;
      j["val_dice"] = m.dice;
      j["val_iou"] = m.iou;
      j["val_se"] = m.se;
      j["val_sp"] = m.sp;
      if (m.dice > outcome.best_val_dice) {
        outcome.best_val_dice = m.dice;
        auto ck = snapshot(cfg, model.params);
        ck.epoch = epoch;
        ck.best_val_dice = m.dice;
        save_checkpoint(outcome.best_ckpt, ck);
      }
      opt.set_lr(sched.step(m.dice, opt.lr()));
    }
    emit(j);

    auto ck = snapshot(cfg, model.params, &opt);
    ck.epoch = epoch;
    ck.best_val_dice = outcome.best_val_dice;
    ck.sched_best = sched.best();
    ck.sched_bad = sched.bad_epochs();
    save_checkpoint(outcome.last_ckpt, ck);
  }
  if (sets.val.empty()) {
    // No validation stream: keep the final weights as "best" too.
    save_checkpoint(outcome.best_ckpt, snapshot(cfg, model.params));
  }
  return outcome;
}

// Score a checkpoint on one split of its configured dataset and write the
// CSV/JSONL reports.
template <typename T = float>
Metrics evaluate_checkpoint(const std::string& ckpt_path, const std::string& split,
                            const std::string& out_dir,
                            const std::string& dataset_override = "",
                            bool quiet = false) {
  namespace fs = std::filesystem;
  Checkpoint<T> ck = load_checkpoint<T>(ckpt_path);
  if (!dataset_override.empty()) ck.config.dataset = dataset_override;
  LCAUnet<T> model(ck.config.model_config(), ck.config.seed);
  apply_params(model.params, ck);

  detail::SplitSets sets = detail::build_datasets(ck.config);
  const std::vector<data::Sample>* set = nullptr;
  if (split == "train") set = &sets.train;
  else if (split == "val") set = &sets.val;
  else if (split == "test") set = &sets.test;
  else fail<ConfigError>("unknown split '", split, "' (train|val|test)");
  LCAUNET_CHECK_CONFIG(!set->empty(), "split '", split, "' is empty");

  auto rows = evaluate_model(model, *set, ck.config.batch_size);
  fs::create_directories(out_dir);
  write_metrics_csv((fs::path(out_dir) / ("metrics_" + split + ".csv")).string(), rows);
  write_metrics_jsonl((fs::path(out_dir) / ("metrics_" + split + ".jsonl")).string(),
                      rows);
  const Metrics agg = aggregate_metrics(rows);
  if (!quiet) {
    nlohmann::json j = metrics_json(agg);
    j["split"] = split;
    j["images"] = rows.size();
    std::cout << j.dump() << '\n';
  }
  return agg;
}

// Segment arbitrary PNGs: resize to the model resolution, forward, threshold,
// resize back to the source size (nearest), save `<stem>_mask.png` plus the
// four edge maps when requested. Unreadable inputs are reported and skipped.
template <typename T = float>
int predict_images(const std::string& ckpt_path,
                   const std::vector<std::string>& images,
                   const std::string& out_dir, bool save_edges = false) {
  namespace fs = std::filesystem;
  Checkpoint<T> ck = load_checkpoint<T>(ckpt_path);
  LCAUnet<T> model(ck.config.model_config(), ck.config.seed);
  apply_params(model.params, ck);
  fs::create_directories(out_dir);
  const std::int64_t res = ck.config.img_size;

  ag::NoGradGuard freeze;
  int failures = 0;
  for (const auto& path : images) {
    Array<float> img;
    try {
      img = io::load_image(path);
    } catch (const std::exception& e) {
      std::cerr << "predict: skipping " << path << ": " << e.what() << '\n';
      ++failures;
      continue;
    }
    const std::int64_t oh = img.dim(1), ow = img.dim(2);
    Array<float> in = data::resize_bilinear(img, res, res);
    Array<T> x(Shape{1, 3, res, res});
    std::copy(in.data.begin(), in.data.end(), x.data.begin());
    auto out = model.forward(ag::Var<T>::constant(std::move(x)));
    Array<float> prob(Shape{res, res});
    const T* lp = out.logits.value().data.data();
    for (std::int64_t i = 0; i < res * res; ++i)
      prob[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(lp[i]))));
    Array<float> mask = data::binarize_mask(data::resize_nearest(prob, oh, ow));
    const std::string stem = fs::path(path).stem().string();
    io::write_png_gray((fs::path(out_dir) / (stem + "_mask.png")).string(), mask);
    if (save_edges)
      for (std::size_t s = 0; s < out.edge_maps.size(); ++s) {
        const Array<T>& em = out.edge_maps[s].value();
        Array<float> plane(Shape{em.dim(2), em.dim(3)});
        for (std::int64_t i = 0; i < plane.size(); ++i)
          plane[i] = static_cast<float>(em[i]);
        io::write_png_gray(
            (fs::path(out_dir) / (stem + "_edge" + std::to_string(s) + ".png"))
                .string(),
            data::resize_bilinear(plane, oh, ow));
      }
  }
  return failures;
}

}  // namespace lcaunet
