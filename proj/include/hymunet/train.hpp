#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "hymunet/data.hpp"
#include "hymunet/losses.hpp"
#include "hymunet/model.hpp"

namespace hym {

// --- optimizer -------------------------------------------------------------------

// Decoupled weight decay: the decay term uses the pre-step parameter value,
// so applying it before the moment update is exactly the combined formula.
class AdamW {
public:
    AdamW(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999,
          double weight_decay = 0.0, double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {
        check(beta1_ >= 0 && beta1_ < 1 && beta2_ >= 0 && beta2_ < 1,
              "adamw: betas must lie in [0,1)");
        for (Tensor* p : params_) {
            check(p != nullptr, "adamw: null parameter");
            p->ensure_grad();
            m_.emplace_back(p->numel(), 0.0);
            v_.emplace_back(p->numel(), 0.0);
        }
    }

    long steps() const { return t_; }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = *params_[k];
            const double* g = p.gptr();
            double* w = p.ptr();
            double* m = m_[k].data();
            double* v = v_[k].data();
            for (long i = 0; i < p.numel(); ++i) {
                check(std::isfinite(g[i]), "adamw: non-finite gradient");
                w[i] -= lr * wd_ * w[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

private:
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, wd_, eps_;
    long t_ = 0;
};

// Scales all gradients so the global norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_gradients(const std::vector<Tensor*>& params, double max_norm) {
    double ss = 0.0;
    for (Tensor* p : params) {
        const double* g = p->gptr();
        for (long i = 0; i < p->numel(); ++i) ss += g[i] * g[i];
    }
    const double norm = std::sqrt(ss);
    if (max_norm > 0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (Tensor* p : params) {
            double* g = p->gptr();
            for (long i = 0; i < p->numel(); ++i) g[i] *= scale;
        }
    }
    return norm;
}

// Cosine annealing from lr0 (t = 0) to lr_min (t = total).
inline double cosine_lr(long t, long total, double lr0, double lr_min) {
    check(total > 0, "cosine_lr: total must be positive");
    check(t >= 0 && t <= total, "cosine_lr: t out of range");
    const double phase = kPi * static_cast<double>(t) / static_cast<double>(total);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

// --- evaluation ------------------------------------------------------------------

// forward maps [B,3,H,W] -> probability maps [B,1,H,W]
inline MetricReport evaluate_with(const std::function<Tensor(const Tensor&)>& forward,
                                  const Dataset& data, double threshold = 0.5,
                                  long batch_size = 8) {
    check(batch_size >= 1, "evaluate: batch_size must be >= 1");
    std::vector<ImageMetrics> per_image;
    per_image.reserve(data.size());
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::vector<long> idx;
        for (std::size_t i = start; i < std::min(start + batch_size, data.size()); ++i)
            idx.push_back(static_cast<long>(i));
        const Tensor pred = forward(stack_images(data, idx));
        const std::vector<Mask> masks = binarize(pred, threshold);
        for (std::size_t b = 0; b < idx.size(); ++b)
            per_image.push_back(compute_metrics(masks[b], data[idx[b]].mask));
    }
    return aggregate_metrics(std::move(per_image));
}

inline MetricReport evaluate(Model& model, const Dataset& data, double threshold = 0.5,
                             long batch_size = 8) {
    return evaluate_with([&](const Tensor& x) { return model.forward(x, false); }, data,
                         threshold, batch_size);
}

// --- training loop ---------------------------------------------------------------

struct TrainConfig {
    double lr0 = 1e-4, lr_min = 1e-6;
    double weight_decay = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    long epochs = 10;
    long batch_size = 8;
    std::uint64_t seed = 0;
    LossWeights loss;
    bool augment = true;
    double clip_norm = 0.0;  // 0 disables
    long eval_every = 1;     // validate every k epochs (the last epoch always)
    bool verbose = false;
};

struct EpochRecord {
    long epoch = 0;
    double lr = 0;
    double train_total = 0, train_dice = 0, train_bce = 0, train_edge = 0;
    bool evaluated = false;
    double val_dsc = 0, val_iou = 0, val_pre = 0;
    double val_hd95 = 0;       // mean over defined images; 0 when none defined
    long hd95_undefined = 0;
    double wall_sec = 0;       // excluded from serialization (not reproducible)
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    long best_epoch = -1;
    double best_val_dsc = 0;
    bool halted = false;
    std::string halt_reason;
};

// Deterministic textual form, wall time excluded.
inline std::string log_to_string(const TrainLog& log) {
    std::string out;
    char buf[512];
    for (const EpochRecord& e : log.epochs) {
        std::snprintf(buf, sizeof(buf),
                      "epoch=%ld lr=%.17g train_total=%.17g train_dice=%.17g "
                      "train_bce=%.17g train_edge=%.17g",
                      e.epoch, e.lr, e.train_total, e.train_dice, e.train_bce, e.train_edge);
        out += buf;
        if (e.evaluated) {
            std::snprintf(buf, sizeof(buf),
                          " val_dsc=%.17g val_iou=%.17g val_pre=%.17g val_hd95=%.17g "
                          "hd95_undefined=%ld",
                          e.val_dsc, e.val_iou, e.val_pre, e.val_hd95, e.hd95_undefined);
            out += buf;
        }
        out += '\n';
    }
    std::snprintf(buf, sizeof(buf), "best_epoch=%ld best_val_dsc=%.17g halted=%d\n",
                  log.best_epoch, log.best_val_dsc, log.halted ? 1 : 0);
    out += buf;
    return out;
}

namespace detail {

inline std::vector<Tensor> snapshot_state(Model& model) {
    std::vector<Tensor> snap;
    for (auto& [name, t] : model.state_tensors()) snap.push_back(t->clone_data());
    return snap;
}

inline void restore_state(Model& model, const std::vector<Tensor>& snap) {
    auto tensors = model.state_tensors();
    check(tensors.size() == snap.size(), "restore: state size mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i)
        std::copy(snap[i].ptr(), snap[i].ptr() + snap[i].numel(), tensors[i].second->ptr());
}

}  // namespace detail

// Trains in place. Model selection: highest validation DSC, earlier epoch on
// ties; the best weights are restored before returning. With an empty val
// set the final weights are kept.
inline TrainLog train(Model& model, const Dataset& train_set, const Dataset& val_set,
                      const TrainConfig& cfg) {
    check(!train_set.empty(), "train: empty training set");
    check(cfg.epochs >= 0, "train: epochs must be >= 0");
    check(cfg.batch_size >= 1, "train: batch_size must be >= 1");
    check(cfg.lr_min > 0 && cfg.lr_min <= cfg.lr0, "train: need 0 < lr_min <= lr0");
    for (const Sample& s : train_set) check_sample(s, "train");

    std::vector<Tensor*> params;
    for (auto& [name, t] : model.parameters()) {
        t->set_requires_grad(true);
        params.push_back(t);
    }
    AdamW opt(params, cfg.beta1, cfg.beta2, cfg.weight_decay);

    TrainLog log;
    std::vector<Tensor> best_state = detail::snapshot_state(model);
    bool have_best = false;
    const long n = static_cast<long>(train_set.size());

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min);

        Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(epoch)));
        const std::vector<long> perm = rng.permutation(n);

        double sum_total = 0, sum_dice = 0, sum_bce = 0, sum_edge = 0;
        for (long start = 0; start < n; start += cfg.batch_size) {
            const long stop = std::min(start + cfg.batch_size, n);
            Dataset batch;
            for (long i = start; i < stop; ++i) {
                const Sample& s = train_set[perm[i]];
                batch.push_back(cfg.augment ? augment(s, rng) : s);
            }
            std::vector<long> idx(batch.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<long>(i);
            const Tensor xs = stack_images(batch, idx);
            const Tensor ys = stack_masks(batch, idx);

            for (Tensor* p : params) p->zero_grad();
            double btotal = 0, bdice = 0, bbce = 0, bedge = 0;
            // divergence shows up either as a non-finite loss value or as one
            // of the layer-level finite guards firing mid-forward
            try {
                Graph g;
                {
                    Recording recording(g);
                    LossParts parts = total_loss(model.forward(xs, true), ys, cfg.loss);
                    btotal = parts.total.at(0);
                    bdice = parts.dice.at(0);
                    bbce = parts.bce.at(0);
                    bedge = parts.edge.at(0);
                    check(std::isfinite(btotal), "loss: non-finite value");
                    g.backward(parts.total);
                }
                if (cfg.clip_norm > 0) clip_gradients(params, cfg.clip_norm);
                opt.step(rec.lr);
            } catch (const std::runtime_error& e) {
                if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
                log.halted = true;
                log.halt_reason =
                    std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")";
                if (have_best) detail::restore_state(model, best_state);
                return log;
            }

            const double w = static_cast<double>(stop - start);
            sum_total += w * btotal;
            sum_dice += w * bdice;
            sum_bce += w * bbce;
            sum_edge += w * bedge;
        }
        rec.train_total = sum_total / static_cast<double>(n);
        rec.train_dice = sum_dice / static_cast<double>(n);
        rec.train_bce = sum_bce / static_cast<double>(n);
        rec.train_edge = sum_edge / static_cast<double>(n);

        const bool eval_now = !val_set.empty() && cfg.eval_every > 0 &&
                              (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1);
        if (eval_now) {
            const MetricReport r = evaluate(model, val_set, 0.5, cfg.batch_size);
            rec.evaluated = true;
            rec.val_dsc = r.dsc.mean;
            rec.val_iou = r.iou.mean;
            rec.val_pre = r.precision.mean;
            rec.val_hd95 = r.hd95.mean;
            rec.hd95_undefined = r.hd95_undefined;
            if (!have_best || rec.val_dsc > log.best_val_dsc) {
                have_best = true;
                log.best_epoch = epoch;
                log.best_val_dsc = rec.val_dsc;
                best_state = detail::snapshot_state(model);
            }
        }
        rec.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cfg.verbose) {
            std::fprintf(stderr, "epoch %ld/%ld lr %.3g loss %.5f", epoch + 1, cfg.epochs,
                         rec.lr, rec.train_total);
            if (rec.evaluated) std::fprintf(stderr, " val_dsc %.4f", rec.val_dsc);
            std::fprintf(stderr, " (%.1fs)\n", rec.wall_sec);
        }
        log.epochs.push_back(rec);
    }

    if (have_best) detail::restore_state(model, best_state);
    return log;
}

}  // namespace hym
