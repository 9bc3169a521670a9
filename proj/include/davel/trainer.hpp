#pragma once

#include <string>
#include <vector>

#include "davel/annotations.hpp"
#include "davel/decode.hpp"
#include "davel/features.hpp"
#include "davel/losses.hpp"
#include "davel/model_config.hpp"
#include "davel/param_store.hpp"

namespace davel::train {

struct TrainConfig {
    int epochs = 40;
    int warmup_epochs = 5;
    double base_lr = 1e-4;
    int batch_size = 16;
    double weight_decay = 1e-4;
    double lambda_reg = 1.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double clip_grad_norm = 1.0;  // <= 0 disables
    bool cls_norm_by_positives = false;
    bool random_crop = false;
    uint64_t seed = 1;
    int val_every = 1;

    void validate() const;
    LossParams loss_params() const {
        return {lambda_reg, focal_alpha, focal_gamma, cls_norm_by_positives};
    }
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

// Linear warmup to base_lr over warmup_epochs, then cosine decay to 0.
double lr_at_step(const TrainConfig& cfg, int step, int steps_per_epoch, int total_steps);

// Adam with L2-style weight decay folded into the gradient.
class Adam {
  public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(num::ParamStore<float>& store, double lr, double weight_decay);

  private:
    double beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, num::Tensor<float>> m_, v_;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double cls = 0;  // classification term (normalized), batch mean
    double reg = 0;  // weighted regression term, batch mean
    double val_avg_map = -1;  // -1 when not evaluated this epoch
};

struct FitResult {
    num::ParamStore<float> params;  // best on validation
    int best_epoch = 0;
    double best_val_map = 0;
    std::vector<EpochMetrics> metrics;
};

// Deterministic single-threaded training loop; per-video gradients
// accumulate across the batch, one optimizer step per batch. The best
// validation checkpoint is retained. metrics_path, when non-empty, receives
// one JSON line per epoch.
FitResult fit(const data::DatasetIndex& index, const data::FeatureSource& features,
              const model::ModelConfig& mcfg, const TrainConfig& tcfg,
              const infer::DecodeConfig& dcfg, const std::string& metrics_path = "");

}  // namespace davel::train
