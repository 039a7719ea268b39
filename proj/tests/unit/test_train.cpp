#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hymunet/train.hpp"

using namespace hym;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.stage_widths = {8, 8, 8, 8};
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.state_dim = 4;
    cfg.input_size = 32;
    return cfg;
}

bool same_states(Model& a, Model& b) {
    auto ta = a.state_tensors(), tb = b.state_tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].first != tb[i].first) return false;
        const Tensor *x = ta[i].second, *y = tb[i].second;
        if (x->shape != y->shape) return false;
        for (long k = 0; k < x->numel(); ++k)
            if (x->at(k) != y->at(k)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adamw with zero gradients and no decay is a no-op", "[train]") {
    Rng rng(1);
    Tensor p({3, 4});
    for (long i = 0; i < p.numel(); ++i) p.at(i) = rng.uniform(-1, 1);
    const Tensor before = p.clone_data();
    p.set_requires_grad(true);
    AdamW opt({&p}, 0.9, 0.999, 0.0);
    for (int i = 0; i < 3; ++i) opt.step(1e-3);
    for (long i = 0; i < p.numel(); ++i) REQUIRE(p.at(i) == before.at(i));
    REQUIRE(opt.steps() == 3);
}

TEST_CASE("first adamw step matches the closed form", "[train]") {
    // unit gradient: mhat = 1, vhat = 1, so the update is lr/(1+eps) plus decay
    const double lr = 0.01, wd = 0.1;
    Tensor p({1}, 1.0);
    p.set_requires_grad(true);
    p.gptr()[0] = 1.0;
    AdamW opt({&p}, 0.9, 0.999, wd);
    opt.step(lr);
    double expected = 1.0;
    expected -= lr * wd * expected;
    expected -= lr * 1.0 / (1.0 + 1e-8);
    REQUIRE(p.at(0) == expected);
}

TEST_CASE("adamw tracks an independent scalar reference on a quadratic", "[train]") {
    const double lr = 0.05, wd = 0.01;
    for (double decay : {0.0, wd}) {
        Tensor p({1}, 1.7);
        p.set_requires_grad(true);
        AdamW opt({&p}, 0.9, 0.999, decay);

        double w_ref = 1.7, m = 0, v = 0;
        for (int t = 1; t <= 10; ++t) {
            p.zero_grad();
            p.gptr()[0] = 2.0 * p.at(0);
            opt.step(lr);

            const double g = 2.0 * w_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            const double mh = m / (1.0 - std::pow(0.9, t));
            const double vh = v / (1.0 - std::pow(0.999, t));
            w_ref -= lr * (mh / (std::sqrt(vh) + 1e-8) + decay * w_ref);

            REQUIRE_THAT(p.at(0), WithinAbs(w_ref, 1e-12));
        }
        REQUIRE(std::abs(p.at(0)) < 1.7);  // it actually descended
    }
}

TEST_CASE("adamw rejects non-finite gradients", "[train]") {
    Tensor p({2}, 0.5);
    p.set_requires_grad(true);
    p.gptr()[1] = std::numeric_limits<double>::quiet_NaN();
    AdamW opt({&p});
    REQUIRE_THROWS_WITH(opt.step(1e-3), ContainsSubstring("non-finite"));
}

TEST_CASE("cosine schedule hits endpoints and decays monotonically", "[train]") {
    const double lr0 = 1e-4, lr_min = 1e-6;
    REQUIRE_THAT(cosine_lr(0, 50, lr0, lr_min), WithinRel(lr0, 1e-15));
    REQUIRE(cosine_lr(50, 50, lr0, lr_min) == lr_min);
    REQUIRE_THAT(cosine_lr(25, 50, lr0, lr_min), WithinRel(0.5 * (lr0 + lr_min), 1e-12));
    for (long t = 1; t <= 50; ++t)
        REQUIRE(cosine_lr(t, 50, lr0, lr_min) < cosine_lr(t - 1, 50, lr0, lr_min));
    REQUIRE_THROWS(cosine_lr(-1, 50, lr0, lr_min));
    REQUIRE_THROWS(cosine_lr(51, 50, lr0, lr_min));
    REQUIRE_THROWS(cosine_lr(0, 0, lr0, lr_min));
}

TEST_CASE("gradient clipping rescales to the target norm", "[train]") {
    Tensor a({2}), b({1});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a.gptr()[0] = 3.0;
    a.gptr()[1] = 0.0;
    b.gptr()[0] = 4.0;  // global norm sqrt(9+16) = 5
    SECTION("above the limit") {
        REQUIRE(clip_gradients({&a, &b}, 1.0) == 5.0);
        const double after =
            std::sqrt(a.gptr()[0] * a.gptr()[0] + a.gptr()[1] * a.gptr()[1] +
                      b.gptr()[0] * b.gptr()[0]);
        REQUIRE_THAT(after, WithinRel(1.0, 1e-12));
        REQUIRE_THAT(a.gptr()[0], WithinRel(0.6, 1e-12));
    }
    SECTION("below the limit leaves gradients untouched") {
        REQUIRE(clip_gradients({&a, &b}, 10.0) == 5.0);
        REQUIRE(a.gptr()[0] == 3.0);
        REQUIRE(b.gptr()[0] == 4.0);
    }
    SECTION("zero disables clipping") {
        REQUIRE(clip_gradients({&a, &b}, 0.0) == 5.0);
        REQUIRE(b.gptr()[0] == 4.0);
    }
}

TEST_CASE("evaluate_with scores a perfect predictor perfectly", "[train]") {
    const Dataset data = generate_synthetic(31, 5, 32);
    long k = 0;
    const MetricReport r = evaluate_with(
        [&](const Tensor&) { return stack_masks(data, {k++}); }, data, 0.5, 1);
    REQUIRE(r.per_image.size() == 5);
    REQUIRE(r.dsc.mean == 1.0);
    REQUIRE(r.iou.mean == 1.0);
    REQUIRE(r.precision.mean == 1.0);
    REQUIRE(r.hd95.mean == 0.0);
    REQUIRE(r.hd95.count == 5);
    REQUIRE(r.hd95_undefined == 0);
}

TEST_CASE("evaluate_with scores an all-background predictor", "[train]") {
    const Dataset data = generate_synthetic(32, 5, 32);
    const MetricReport r = evaluate_with(
        [&](const Tensor& x) { return Tensor::zeros({x.dim(0), 1, x.dim(2), x.dim(3)}); },
        data, 0.5, 2);
    REQUIRE(r.per_image.size() == 5);  // batches of 2,2,1
    REQUIRE(r.dsc.mean == 0.0);
    REQUIRE(r.precision.mean == 0.0);  // ground truth is never empty
    REQUIRE(r.hd95.count == 0);
    REQUIRE(r.hd95_undefined == 5);
}

TEST_CASE("evaluate_with equals a hand-composed metric loop", "[train]") {
    const Dataset data = generate_synthetic(33, 7, 32);
    // deterministic pixelwise stub: fractional part of 37x as probability
    auto stub = [](const Tensor& x) {
        Tensor out({x.dim(0), 1, x.dim(2), x.dim(3)});
        const long hw = x.dim(2) * x.dim(3);
        for (long b = 0; b < x.dim(0); ++b)
            for (long i = 0; i < hw; ++i) {
                const double v = 37.0 * x.at(b * 3 * hw + i);
                out.at(b * hw + i) = v - std::floor(v);
            }
        return out;
    };
    const MetricReport got = evaluate_with(stub, data, 0.5, 3);

    std::vector<ImageMetrics> per;
    for (const Sample& s : data) {
        Tensor x({1, 3, 32, 32});
        std::copy(s.image.ptr(), s.image.ptr() + s.image.numel(), x.ptr());
        per.push_back(compute_metrics(binarize(stub(x), 0.5)[0], s.mask));
    }
    const MetricReport want = aggregate_metrics(per);
    REQUIRE(got.dsc.mean == want.dsc.mean);
    REQUIRE(got.dsc.stdev == want.dsc.stdev);
    REQUIRE(got.iou.mean == want.iou.mean);
    REQUIRE(got.precision.mean == want.precision.mean);
    REQUIRE(got.hd95.mean == want.hd95.mean);
    REQUIRE(got.hd95_undefined == want.hd95_undefined);
}

TEST_CASE("zero epochs returns an empty log and leaves the model alone", "[train]") {
    Model m(tiny_config(), 3);
    Model ref(tiny_config(), 3);
    const Dataset data = generate_synthetic(34, 2, 32);
    TrainConfig cfg;
    cfg.epochs = 0;
    const TrainLog log = train(m, data, data, cfg);
    REQUIRE(log.epochs.empty());
    REQUIRE(log.best_epoch == -1);
    REQUIRE_FALSE(log.halted);
    REQUIRE(same_states(m, ref));
}

TEST_CASE("train rejects bad configs", "[train]") {
    Model m(tiny_config(), 3);
    const Dataset data = generate_synthetic(34, 2, 32);
    TrainConfig cfg;
    cfg.batch_size = 0;
    REQUIRE_THROWS(train(m, data, data, cfg));
    cfg.batch_size = 1;
    REQUIRE_THROWS_WITH(train(m, {}, data, cfg), ContainsSubstring("empty"));
}

TEST_CASE("training halts cleanly on non-finite loss", "[train]") {
    Model m(tiny_config(), 3);
    m.parameters()[0].second->at(0) = std::numeric_limits<double>::quiet_NaN();
    const Dataset data = generate_synthetic(35, 2, 32);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    const TrainLog log = train(m, data, data, cfg);
    REQUIRE(log.halted);
    REQUIRE_THAT(log.halt_reason, ContainsSubstring("non-finite"));
    REQUIRE_THAT(log.halt_reason, ContainsSubstring("epoch 0"));
    REQUIRE(log.epochs.empty());
    REQUIRE_THAT(log_to_string(log), ContainsSubstring("halted=1"));
}

TEST_CASE("training is bitwise deterministic in seed", "[train]") {
    const Dataset tr = generate_synthetic(36, 4, 32);
    const Dataset va = generate_synthetic(37, 2, 32);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.lr0 = 1e-3;
    cfg.seed = 9;

    Model m1(tiny_config(), 11);
    Model m2(tiny_config(), 11);
    const TrainLog l1 = train(m1, tr, va, cfg);
    const TrainLog l2 = train(m2, tr, va, cfg);
    REQUIRE(log_to_string(l1) == log_to_string(l2));
    REQUIRE(same_states(m1, m2));

    // a different data order changes the trajectory
    Model m3(tiny_config(), 11);
    TrainConfig other = cfg;
    other.seed = 10;
    const TrainLog l3 = train(m3, tr, va, other);
    REQUIRE(log_to_string(l3) != log_to_string(l1));
}

TEST_CASE("the best validation checkpoint is restored", "[train]") {
    const Dataset tr = generate_synthetic(38, 4, 32);
    const Dataset va = generate_synthetic(39, 2, 32);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.lr0 = 1e-3;
    cfg.seed = 4;

    Model m(tiny_config(), 12);
    const TrainLog log = train(m, tr, va, cfg);
    REQUIRE(log.epochs.size() == 4);

    // first argmax over the recorded curve
    long best = -1;
    double best_dsc = -1;
    for (const EpochRecord& e : log.epochs) {
        REQUIRE(e.evaluated);
        REQUIRE(e.lr == cosine_lr(e.epoch, cfg.epochs, cfg.lr0, cfg.lr_min));
        REQUIRE(std::isfinite(e.train_total));
        if (e.val_dsc > best_dsc) {
            best_dsc = e.val_dsc;
            best = e.epoch;
        }
    }
    REQUIRE(log.best_epoch == best);
    REQUIRE(log.best_val_dsc == best_dsc);

    // restored weights reproduce the logged best DSC bit for bit
    const MetricReport r = evaluate(m, va, 0.5, cfg.batch_size);
    REQUIRE(r.dsc.mean == log.best_val_dsc);
}

TEST_CASE("eval_every skips epochs but always scores the last", "[train]") {
    const Dataset tr = generate_synthetic(40, 2, 32);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.eval_every = 2;
    Model m(tiny_config(), 13);
    const TrainLog log = train(m, tr, tr, cfg);
    REQUIRE(log.epochs[0].evaluated);
    REQUIRE_FALSE(log.epochs[1].evaluated);
    REQUIRE(log.epochs[2].evaluated);
    // the skipped epoch's line carries no validation columns
    const std::string text = log_to_string(log);
    const std::size_t line1 = text.find("epoch=1 ");
    REQUIRE(line1 != std::string::npos);
    const std::string line = text.substr(line1, text.find('\n', line1) - line1);
    REQUIRE(line.find("val_dsc") == std::string::npos);

    // no validation set: nothing evaluated, final weights kept
    Model m2(tiny_config(), 13);
    const TrainLog log2 = train(m2, tr, {}, cfg);
    REQUIRE(log2.best_epoch == -1);
    for (const EpochRecord& e : log2.epochs) REQUIRE_FALSE(e.evaluated);
}

TEST_CASE("a tiny model overfits a single sample", "[train]") {
    const Dataset one = generate_synthetic(41, 1, 32, {false, 0.0});
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 1;
    cfg.lr0 = 1e-2;
    cfg.lr_min = 1e-3;
    cfg.weight_decay = 0.0;
    cfg.augment = false;
    cfg.seed = 5;
    cfg.eval_every = 5;

    Model m(tiny_config(), 21);
    const TrainLog log = train(m, one, one, cfg);
    REQUIRE_FALSE(log.halted);
    REQUIRE(log.epochs.size() == 60);
    REQUIRE(log.epochs.back().train_total < 0.5 * log.epochs.front().train_total);
    REQUIRE(log.best_val_dsc >= 0.95);
    REQUIRE(evaluate(m, one).dsc.mean >= 0.95);
}
