#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "tfpose/checkpoint.hpp"
#include "tfpose/ops.hpp"
#include "tfpose/rng.hpp"
#include "tfpose/runner.hpp"

namespace tfpose {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSaltBatch = 0xb47c;
constexpr std::uint64_t kSaltAugment = 0xa06;
constexpr std::uint64_t kSaltDropout = 0xd0;

struct SlotResult {
  Gradients<float> grads;
  double l_reg = 0;
  double l_aux = 0;
  bool supervised = false;
};

}  // namespace

TrainResult train_run(const Config& cfg_in, const std::string& out_dir,
                      std::optional<std::uint64_t> seed_override) {
  Config cfg = cfg_in;
  if (seed_override) cfg.run.seed = *seed_override;
  cfg.validate();
  fs::create_directories(out_dir);

  const std::uint64_t seed = cfg.run.seed;
  auto dataset = build_dataset(cfg);
  if (dataset.empty()) throw std::runtime_error("train: dataset is empty");
  const SkeletonSpec skel = resolve_skeleton(cfg.data);

  auto bundle = build_model(cfg, mix_seed(seed, 0xa11));
  AdamW<float> adam(bundle.params, cfg.optim);

  std::int64_t start_step = 0;
  if (!cfg.run.resume_from.empty()) {
    const CheckpointData ckpt = load_checkpoint(cfg.run.resume_from);
    apply_checkpoint_params(ckpt, bundle.params);
    if (ckpt.has_optimizer) apply_checkpoint_optimizer(ckpt, bundle.params, adam);
    start_step = ckpt.step;
  }

  TrainResult result;
  result.log_path = out_dir + "/loss_log.csv";
  result.checkpoint_path = out_dir + "/checkpoint.tfpz";
  const std::string config_json = cfg.to_json();

  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("train: cannot write " + result.log_path);
  log << "step,lr,l_reg,l_aux,total\n";
  log << std::setprecision(10);

  const int batch = cfg.run.batch_size;
  int threads = cfg.run.threads > 0 ? cfg.run.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, batch));

  bool wrote_checkpoint = false;
  auto save = [&](std::int64_t completed, bool tagged) {
    save_checkpoint(result.checkpoint_path, bundle.params, &adam, completed, config_json);
    if (tagged) {
      std::ostringstream name;
      name << out_dir << "/checkpoint_step" << std::setw(6) << std::setfill('0') << completed
           << ".tfpz";
      save_checkpoint(name.str(), bundle.params, &adam, completed, config_json);
    }
    wrote_checkpoint = true;
  };

  const int hm_h = cfg.model.input_h / 4, hm_w = cfg.model.input_w / 4;
  std::int64_t step = start_step;
  for (; step < cfg.optim.total_steps; ++step) {
    // deterministic batch draw and augmentation, independent of worker count
    std::mt19937_64 batch_rng(mix_seed(seed, static_cast<std::uint64_t>(step) * 2 + kSaltBatch));
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::vector<PoseInstance> slots;
    slots.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      PoseInstance inst = dataset[pick(batch_rng)];
      if (cfg.data.augment_enabled) {
        std::mt19937_64 aug_rng(
            mix_seed(seed, (static_cast<std::uint64_t>(step) * batch + b) * 3 + kSaltAugment));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        AugmentParams ap;
        ap.rotation_deg = (2.0 * unit(aug_rng) - 1.0) * cfg.data.rotation_deg;
        ap.scale = cfg.data.scale_min + unit(aug_rng) * (cfg.data.scale_max - cfg.data.scale_min);
        ap.hflip = cfg.data.hflip && unit(aug_rng) < 0.5;
        ap.validate();
        inst = augment(inst, ap, skel);
      }
      slots.push_back(std::move(inst));
    }
    int supervised_count = 0;
    for (const auto& s : slots) supervised_count += s.keypoints.labeled_count() > 0 ? 1 : 0;
    const double reg_norm = supervised_count > 0 ? 1.0 / supervised_count : 0.0;
    const double aux_norm = cfg.loss.lambda_aux > 0 ? cfg.loss.lambda_aux / batch : 0.0;

    std::vector<SlotResult> results(static_cast<std::size_t>(batch));
    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        const int b = next.fetch_add(1);
        if (b >= batch) break;
        const auto& inst = slots[static_cast<std::size_t>(b)];
        std::mt19937_64 drop_rng(
            mix_seed(seed, (static_cast<std::uint64_t>(step) * batch + b) * 5 + kSaltDropout));
        auto image = image_to_tensor<float>(inst.image);
        auto pred = bundle.model->forward(image, RunMode::kTrain, {}, &drop_rng);

        SlotResult& slot = results[static_cast<std::size_t>(b)];
        slot.supervised = inst.keypoints.labeled_count() > 0;
        auto l_reg = regression_loss(pred, inst.keypoints, cfg.loss);
        slot.l_reg = l_reg->scalar();
        TensorPtr<float> contrib = scale(l_reg, reg_norm);
        if (bundle.aux) {
          auto gt = make_gt_heatmap<float>(inst.keypoints, hm_h, hm_w, cfg.loss.sigma);
          auto pred_hm = (*bundle.aux)(pred.memory_c5);
          auto l_aux = heatmap_mse(pred_hm, gt);
          slot.l_aux = l_aux->scalar();
          contrib = add(contrib, scale(l_aux, aux_norm));
        }
        backward(contrib, slot.grads);
      }
    };
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    // Instance-order reduction over parameter buffers only: slot graphs are
    // already freed, so intermediate-node addresses may have been recycled,
    // but the registry keeps every parameter node alive and unique.
    Gradients<float> grads;
    double l_reg_sum = 0, l_aux_sum = 0;
    for (auto& slot : results) {
      for (const auto& [name, t] : bundle.params.items()) {
        const auto* buf = slot.grads.find(t.get());
        if (!buf) continue;
        auto& dst = grads.of(t.get());
        for (std::size_t i = 0; i < buf->size(); ++i) dst[i] += (*buf)[i];
      }
      l_reg_sum += slot.l_reg;
      l_aux_sum += slot.l_aux;
    }
    const double l_reg_batch = supervised_count > 0 ? l_reg_sum / supervised_count : 0.0;
    const double l_aux_batch = bundle.aux ? l_aux_sum / batch : 0.0;
    const double total = l_reg_batch + cfg.loss.lambda_aux * l_aux_batch;
    const double lr = cfg.optim.base_lr * cosine_lr_factor(step, cfg.optim);

    if (!std::isfinite(total)) {
      result.aborted_non_finite = true;
      break;
    }
    try {
      adam.step(grads, step);
    } catch (const std::runtime_error&) {
      result.aborted_non_finite = true;
      break;
    }

    log << step << "," << lr << "," << l_reg_batch << "," << l_aux_batch << "," << total << "\n";
    result.final_l_reg = l_reg_batch;
    result.final_total = total;

    if ((step + 1) % cfg.run.checkpoint_every == 0) save(step + 1, /*tagged=*/true);
    if (cfg.run.early_stop_l_reg > 0 && l_reg_batch <= cfg.run.early_stop_l_reg) {
      ++step;
      break;
    }
  }
  result.steps_run = step - start_step;
  log.flush();

  if (!result.aborted_non_finite) {
    save(step, /*tagged=*/false);
  } else if (!wrote_checkpoint && start_step == 0) {
    // abort before any periodic checkpoint: nothing to retain, remove stale files
    std::error_code ec;
    fs::remove(result.checkpoint_path, ec);
  }
  return result;
}

std::vector<LossLogRow> read_loss_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open loss log: " + path);
  std::vector<LossLogRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossLogRow row{};
    std::istringstream ss(line);
    char comma;
    ss >> row.step >> comma >> row.lr >> comma >> row.l_reg >> comma >> row.l_aux >> comma >> row.total;
    if (!ss.fail()) rows.push_back(row);
  }
  return rows;
}

}  // namespace tfpose
