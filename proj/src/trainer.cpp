#include "davel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "davel/metrics.hpp"
#include "davel/model.hpp"

namespace davel::train {

void TrainConfig::validate() const {
    if (epochs < 1) throw model::ConfigError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
        throw model::ConfigError("warmup_epochs must be in [0, epochs]");
    if (base_lr <= 0) throw model::ConfigError("base_lr must be positive");
    if (batch_size < 1) throw model::ConfigError("batch_size must be >= 1");
    if (weight_decay < 0) throw model::ConfigError("weight_decay must be >= 0");
    if (lambda_reg < 0) throw model::ConfigError("lambda_reg must be >= 0");
    if (focal_alpha <= 0 || focal_alpha >= 1) throw model::ConfigError("focal_alpha must be in (0,1)");
    if (focal_gamma < 0) throw model::ConfigError("focal_gamma must be >= 0");
    if (val_every < 1) throw model::ConfigError("val_every must be >= 1");
}

namespace {

using nlohmann::ordered_json;

const std::set<std::string> kTrainKeys = {
    "epochs",     "warmup_epochs", "base_lr",     "batch_size",
    "weight_decay", "lambda_reg",  "focal_alpha", "focal_gamma", "clip_grad_norm",
    "cls_norm_by_positives", "random_crop", "seed", "val_every"};

}  // namespace

TrainConfig train_config_from_json(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw model::ConfigError(std::string("train config: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!kTrainKeys.count(key)) throw model::ConfigError("train config: unknown key '" + key + "'");
    }
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
    c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
    c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
    c.clip_grad_norm = j.value("clip_grad_norm", c.clip_grad_norm);
    c.cls_norm_by_positives = j.value("cls_norm_by_positives", c.cls_norm_by_positives);
    c.random_crop = j.value("random_crop", c.random_crop);
    c.seed = j.value("seed", c.seed);
    c.val_every = j.value("val_every", c.val_every);
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    ordered_json j;
    j["epochs"] = c.epochs;
    j["warmup_epochs"] = c.warmup_epochs;
    j["base_lr"] = c.base_lr;
    j["batch_size"] = c.batch_size;
    j["weight_decay"] = c.weight_decay;
    j["lambda_reg"] = c.lambda_reg;
    j["focal_alpha"] = c.focal_alpha;
    j["focal_gamma"] = c.focal_gamma;
    j["clip_grad_norm"] = c.clip_grad_norm;
    j["cls_norm_by_positives"] = c.cls_norm_by_positives;
    j["random_crop"] = c.random_crop;
    j["seed"] = c.seed;
    j["val_every"] = c.val_every;
    return j.dump(2);
}

double lr_at_step(const TrainConfig& cfg, int step, int steps_per_epoch, int total_steps) {
    const int warmup = cfg.warmup_epochs * steps_per_epoch;
    if (warmup > 0 && step < warmup)
        return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const int decay_steps = std::max(1, total_steps - warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(decay_steps);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

void Adam::step(num::ParamStore<float>& store, double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : store) {
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, num::Tensor<float>(p.value.shape)).first;
            v_.emplace(name, num::Tensor<float>(p.value.shape));
        }
        num::Tensor<float>& m = mit->second;
        num::Tensor<float>& v = v_.at(name);
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const double g = static_cast<double>(p.grad.data[i]) +
                             weight_decay * static_cast<double>(p.value.data[i]);
            const double mi = beta1_ * m.data[i] + (1.0 - beta1_) * g;
            const double vi = beta2_ * v.data[i] + (1.0 - beta2_) * g * g;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            p.value.data[i] -=
                static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
        }
    }
}

namespace {

struct TrainVideo {
    const data::AnnotatedVideo* video = nullptr;
    data::FeatureStreams padded;
    TargetAssignment targets;
};

TargetAssignment assign_for(const data::AnnotatedVideo& v, const data::FeatureStreams& padded,
                            const model::ModelConfig& mcfg) {
    return assign_targets(v, padded.hop_s, level_grid(mcfg, padded.valid_len),
                          mcfg.resolved_edges());
}

// Random-crop augmentation: keep a window of the valid region, shift events.
TrainVideo crop_window(const TrainVideo& tv, int start, int len, const model::ModelConfig& mcfg) {
    TrainVideo out;
    out.video = tv.video;
    const data::FeatureStreams& s = tv.padded;
    data::FeatureStreams c;
    c.video_id = s.video_id;
    c.hop_s = s.hop_s;
    c.offset_s = s.offset_s;
    c.valid_len = len;
    const int64_t da = s.audio.dim(1), dv = s.visual.dim(1);
    c.audio = num::Tensor<float>({s.audio.dim(0), da});
    c.visual = num::Tensor<float>({s.visual.dim(0), dv});
    std::copy(s.audio.ptr() + start * da, s.audio.ptr() + (start + len) * da, c.audio.ptr());
    std::copy(s.visual.ptr() + start * dv, s.visual.ptr() + (start + len) * dv, c.visual.ptr());
    c.mask.assign(s.mask.size(), 0);
    std::fill(c.mask.begin(), c.mask.begin() + len, 1);
    out.padded = std::move(c);

    data::AnnotatedVideo cropped;
    cropped.id = tv.video->id;
    cropped.subset = tv.video->subset;
    const double t0 = start * s.hop_s;
    const double t1 = (start + len) * s.hop_s;
    cropped.duration_s = t1 - t0;
    for (const data::EventInstance& e : tv.video->events) {
        const double cs = std::max(e.start_s, t0) - t0;
        const double ce = std::min(e.end_s, t1) - t0;
        if (ce - cs <= 0) continue;
        cropped.events.push_back({cs, ce, e.label_id});
    }
    out.targets = assign_for(cropped, out.padded, mcfg);
    return out;
}

}  // namespace

FitResult fit(const data::DatasetIndex& index, const data::FeatureSource& features,
              const model::ModelConfig& mcfg, const TrainConfig& tcfg,
              const infer::DecodeConfig& dcfg, const std::string& metrics_path) {
    mcfg.validate();
    tcfg.validate();

    std::vector<TrainVideo> train, val;
    int dropped = 0, skipped = 0;
    for (const data::AnnotatedVideo& v : index.videos) {
        if (v.subset != "train" && v.subset != "val") continue;
        TrainVideo tv;
        tv.video = &v;
        tv.padded = data::pad_and_mask(features.load(v.id), mcfg.t_max);
        tv.padded.video_id = v.id;
        tv.targets = assign_for(v, tv.padded, mcfg);
        dropped += tv.targets.dropped_events;
        skipped += tv.targets.skipped_events;
        (v.subset == "train" ? train : val).push_back(std::move(tv));
    }
    if (train.empty()) throw model::ConfigError("fit: train subset is empty");
    if (dropped > 0)
        std::cerr << "warning: " << dropped
                  << " events beyond the padded window were dropped from training targets\n";
    if (skipped > 0)
        std::cerr << "note: " << skipped << " events produced no positive step\n";

    SeededRng rng(tcfg.seed);
    num::ParamStore<float> params;
    init_params(mcfg, params, rng);
    Adam adam;

    const int n = static_cast<int>(train.size());
    const int steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
    const int total_steps = steps_per_epoch * tcfg.epochs;

    std::ofstream metrics_os;
    if (!metrics_path.empty()) {
        metrics_os.open(metrics_path);
        if (!metrics_os) throw model::ConfigError("cannot write metrics log: " + metrics_path);
    }

    FitResult result;
    result.best_val_map = -1.0;
    int step = 0;
    std::vector<int> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double sum_total = 0, sum_cls = 0, sum_reg = 0;
        double last_lr = 0;
        for (int b0 = 0; b0 < n; b0 += tcfg.batch_size) {
            const int bsz = std::min(tcfg.batch_size, n - b0);
            for (int k = 0; k < bsz; ++k) {
                const TrainVideo& base = train[static_cast<size_t>(order[static_cast<size_t>(b0 + k)])];
                TrainVideo cropped;
                const TrainVideo* tv = &base;
                if (tcfg.random_crop && base.padded.valid_len >= 8) {
                    const int valid = base.padded.valid_len;
                    const int len = valid * 3 / 4 +
                                    static_cast<int>(rng.uniform_int(valid - valid * 3 / 4 + 1));
                    const int start = static_cast<int>(rng.uniform_int(valid - len + 1));
                    cropped = crop_window(base, start, len, mcfg);
                    tv = &cropped;
                }
                num::Tape<float> tape;
                num::BoundParams<float> bp(tape, params);
                auto fwd = model::forward(bp, mcfg, tv->padded.audio, tv->padded.visual,
                                          tv->padded.mask, tv->padded.valid_len);
                auto loss = total_loss(tape, fwd, tv->targets, mcfg, tcfg.loss_params());
                if (!std::isfinite(loss.values.total)) {
                    std::ostringstream msg;
                    msg << "non-finite loss at epoch " << epoch << ", batch " << b0 / tcfg.batch_size
                        << ", video " << tv->video->id << " (cls=" << loss.values.cls
                        << ", reg=" << loss.values.reg << ")";
                    throw NumericError(msg.str());
                }
                tape.backward(tape.scale(loss.total, 1.0f / static_cast<float>(bsz)));
                sum_total += loss.values.total;
                const double cls_norm = tcfg.cls_norm_by_positives
                                            ? std::max(loss.values.positives, 1)
                                            : std::max(loss.values.total_steps, 1);
                sum_cls += loss.values.cls / cls_norm;
                sum_reg += loss.values.positives > 0
                               ? tcfg.lambda_reg * loss.values.reg / loss.values.positives
                               : 0.0;
            }
            if (tcfg.clip_grad_norm > 0) {
                double norm_sq = 0;
                for (const auto& [name, p] : params)
                    for (float gv : p.grad.data) norm_sq += static_cast<double>(gv) * gv;
                const double norm = std::sqrt(norm_sq);
                if (norm > tcfg.clip_grad_norm) {
                    const float s = static_cast<float>(tcfg.clip_grad_norm / norm);
                    for (auto& [name, p] : params)
                        for (float& gv : p.grad.data) gv *= s;
                }
            }
            last_lr = lr_at_step(tcfg, step, steps_per_epoch, total_steps);
            adam.step(params, last_lr, tcfg.weight_decay);
            params.zero_grads();
            ++step;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = last_lr;
        em.train_loss = sum_total / n;
        em.cls = sum_cls / n;
        em.reg = sum_reg / n;

        const bool eval_now = !val.empty() && (epoch % tcfg.val_every == 0 || epoch == tcfg.epochs);
        if (eval_now) {
            std::map<std::string, std::vector<infer::Candidate>> preds;
            for (const TrainVideo& tv : val)
                preds[tv.video->id] =
                    infer::localize_video(tv.padded, mcfg, params, tv.video->duration_s, dcfg);
            eval::APReport report = eval::mean_ap(preds, index, "val");
            em.val_avg_map = report.avg_map;
            if (report.avg_map > result.best_val_map) {
                result.best_val_map = report.avg_map;
                result.best_epoch = epoch;
                result.params = params;
            }
        }
        result.metrics.push_back(em);
        if (metrics_os) {
            ordered_json j;
            j["epoch"] = em.epoch;
            j["lr"] = em.lr;
            j["train_loss"] = em.train_loss;
            j["cls"] = em.cls;
            j["reg"] = em.reg;
            if (em.val_avg_map >= 0) j["val_avg_mAP"] = em.val_avg_map;
            metrics_os << j.dump() << "\n";
            metrics_os.flush();
        }
    }
    if (result.best_val_map < 0) {
        result.params = params;
        result.best_epoch = tcfg.epochs;
    }
    return result;
}

}  // namespace davel::train
