#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hymunet/ablate.hpp"
#include "hymunet/bench.hpp"
#include "hymunet/gradcheck.hpp"
#include "hymunet/runconfig.hpp"

namespace fs = std::filesystem;
using namespace hym;

namespace {

std::vector<long> parse_longs(const std::string& csv, const char* what) {
    std::vector<long> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ','))
        out.push_back(detail::parse_long(what, detail::trim(item)));
    check(!out.empty(), std::string(what) + ": empty list");
    return out;
}

std::vector<std::string> parse_names(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(detail::trim(item));
    return out;
}

void print_report(const char* split, const MetricReport& r) {
    std::printf("split=%s count=%zu\n", split, r.per_image.size());
    std::printf("dsc_mean=%.6f dsc_std=%.6f\n", r.dsc.mean, r.dsc.stdev);
    std::printf("iou_mean=%.6f iou_std=%.6f\n", r.iou.mean, r.iou.stdev);
    std::printf("pre_mean=%.6f pre_std=%.6f\n", r.precision.mean, r.precision.stdev);
    std::printf("hd95_mean=%.6f hd95_std=%.6f hd95_count=%ld hd95_undefined=%ld\n",
                r.hd95.mean, r.hd95.stdev, r.hd95.count, r.hd95_undefined);
}

struct DataArgs {
    std::string data_dir;
    long synth_count = 0;
    long size = 0;  // 0: keep --data native, use the model input size for --synth
    std::uint64_t seed = 0;
};

// Either a saved dataset directory (manifest splits) or an in-memory
// synthetic dataset split 0.8/0.1/0.1.
void resolve_datasets(const DataArgs& a, Dataset& tr, Dataset& va, Dataset& te) {
    if (!a.data_dir.empty()) {
        auto groups = load_dataset(a.data_dir, a.size);
        check(groups.count("train") && groups.count("val"),
              "dataset in " + a.data_dir + " has no train/val manifest splits");
        tr = std::move(groups["train"]);
        va = std::move(groups["val"]);
        if (groups.count("test")) te = std::move(groups["test"]);
        return;
    }
    check(a.synth_count > 0, "provide --data DIR or --synth COUNT");
    check(a.size > 0, "synthetic data needs a positive size");
    const Dataset all = generate_synthetic(a.seed, a.synth_count, a.size);
    const SplitIndices idx = split_indices(a.synth_count, {0.8, 0.1, 0.1, a.seed});
    tr = select(all, idx.train);
    va = select(all, idx.val);
    te = select(all, idx.test);
}

int run_gen_data(const std::string& out_dir, std::uint64_t seed, long count, long size,
                 bool no_artifacts, double density, const std::string& ratios_csv) {
    SynthOptions opts;
    opts.artifacts = !no_artifacts;
    opts.artifact_density = density;
    const Dataset data = generate_synthetic(seed, count, size, opts);

    const auto ratios = parse_names(ratios_csv);
    check(ratios.size() == 3, "gen-data: --ratios needs train,val,test");
    SplitSpec spec;
    spec.train = detail::parse_double("ratios", ratios[0]);
    spec.val = detail::parse_double("ratios", ratios[1]);
    spec.test = detail::parse_double("ratios", ratios[2]);
    spec.seed = seed;
    const SplitIndices idx = split_indices(count, spec);

    save_dataset(out_dir, data, &idx);
    std::printf("wrote %ld samples (%zu/%zu/%zu train/val/test) to %s\n", count,
                idx.train.size(), idx.val.size(), idx.test.size(), out_dir.c_str());
    return 0;
}

int run_train(const DataArgs& data_args, const std::string& config_path,
              const std::string& out_ckpt, const std::string& log_path, long epochs_override,
              long batch_override, long seed_override, double lr0_override, bool no_augment,
              bool quiet) {
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    if (epochs_override >= 0) rc.train.epochs = epochs_override;
    if (batch_override > 0) rc.train.batch_size = batch_override;
    if (seed_override >= 0) rc.train.seed = static_cast<std::uint64_t>(seed_override);
    if (lr0_override > 0) rc.train.lr0 = lr0_override;
    if (no_augment) rc.train.augment = false;
    rc.train.verbose = !quiet;

    DataArgs da = data_args;
    da.seed = rc.train.seed;
    // Train at the dataset's stored resolution unless --size asks for a
    // resize; eval and predict default to native size the same way, so a
    // checkpoint scores identically in both places.
    if (da.size <= 0 && da.data_dir.empty()) da.size = rc.model.input_size;
    Dataset tr, va, te;
    resolve_datasets(da, tr, va, te);
    std::printf("train %zu / val %zu / test %zu samples\n", tr.size(), va.size(), te.size());

    Model model(rc.model, rc.train.seed);
    std::printf("model: %ld parameters\n", model.count_params());
    const TrainLog log = train(model, tr, va, rc.train);
    if (log.halted) {
        std::fprintf(stderr, "training halted: %s\n", log.halt_reason.c_str());
        return 1;
    }

    if (!log_path.empty()) {
        std::ofstream out(log_path);
        check(static_cast<bool>(out), "cannot write " + log_path);
        out << log_to_string(log);
    }
    save_checkpoint(model, out_ckpt);
    std::printf("best val dsc %.6f at epoch %ld; checkpoint %s\n", log.best_val_dsc,
                log.best_epoch, out_ckpt.c_str());
    if (!te.empty()) print_report("test", evaluate(model, te, 0.5, rc.train.batch_size));
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split,
             const std::string& images_dir, const std::string& masks_dir, long size,
             double threshold, long batch) {
    Model model = load_checkpoint(ckpt);
    Dataset data;
    if (!images_dir.empty()) {
        check(!masks_dir.empty(), "eval: --images requires --masks");
        data = ingest_isic(images_dir, masks_dir, size);
    } else {
        check(!data_dir.empty(), "eval: provide --data DIR or --images/--masks");
        auto groups = load_dataset(data_dir, size);
        check(groups.count(split),
              "eval: no '" + split + "' split in " + data_dir + "/manifest.txt");
        data = std::move(groups[split]);
    }
    check(!data.empty(), "eval: no samples to evaluate");
    print_report(split.c_str(), evaluate(model, data, threshold, batch));
    return 0;
}

int run_predict(const std::string& ckpt, const std::string& images_dir,
                const std::string& out_dir, long size, double threshold) {
    Model model = load_checkpoint(ckpt);
    check(fs::is_directory(images_dir), "predict: " + images_dir + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir)) {
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    check(!files.empty(), "predict: no images in " + images_dir);
    fs::create_directories(out_dir);

    for (const fs::path& p : files) {
        Tensor chw = image_to_chw(detail::to_rgb(read_image(p.string())));
        if (size > 0) chw = resize_bilinear_chw(chw, size, size);
        Tensor x({1, chw.dim(0), chw.dim(1), chw.dim(2)});
        std::copy(chw.ptr(), chw.ptr() + chw.numel(), x.ptr());
        const Mask mask = binarize(model.forward(x, false), threshold)[0];
        const std::string out = (fs::path(out_dir) / (p.stem().string() + ".png")).string();
        write_png(out, mask_to_image(mask));
        std::printf("%s: %ld foreground pixels -> %s\n", p.stem().string().c_str(),
                    mask.count(), out.c_str());
    }
    return 0;
}

int run_gradcheck(std::uint64_t seed, long entries) {
    Rng rng(seed);
    auto fill = [&](Tensor& t, double lo, double hi) {
        for (long i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(lo, hi);
    };
    int failures = 0;
    auto report = [&](const char* name, double err, double tol) {
        const bool ok = err < tol;
        std::printf("%-22s max rel err %.3e (tol %.0e) %s\n", name, err, tol,
                    ok ? "ok" : "FAIL");
        if (!ok) ++failures;
    };

    {
        Tensor x({2, 3, 8, 8});
        fill(x, -1, 1);
        Tensor w({4, 3, 3, 3}), b({4});
        fill(w, -0.3, 0.3);
        fill(b, -0.1, 0.1);
        report("conv2d", grad_check([&] { return sum(conv2d(x, w, b, 1, 1)); }, {&x, &w, &b},
                                    1e-5, entries),
               1e-6);
    }
    {
        Tensor x({2, 4, 6, 6});
        fill(x, -1, 1);
        report("sigmoid+mean", grad_check([&] { return mean(sigmoid(x)); }, {&x}, 1e-5, entries),
               1e-6);
    }
    {
        VssBlock blk = VssBlock::make(8, 2, 4, 3, rng);
        Tensor x({1, 8, 8, 8});
        fill(x, -0.5, 0.5);
        ForwardCtx ctx{true, NormMode::kInstance, ScanMode::kRowMirror};
        report("vss block", grad_check([&] { return sum(blk.forward(x, ctx)); }, {&x}, 1e-5,
                                       entries),
               1e-4);
    }
    {
        ModelConfig cfg;
        cfg.stage_widths = {8, 8, 16, 16};
        cfg.blocks_per_stage = {1, 1, 1, 1};
        cfg.state_dim = 4;
        cfg.input_size = 32;
        Model m(cfg, seed);
        Tensor x({1, 3, 32, 32});
        fill(x, 0.05, 0.95);
        Tensor target({1, 1, 32, 32});
        for (long i = 0; i < target.numel(); ++i) target.at(i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
        report("model end-to-end",
               grad_check([&] { return total_loss(m.forward(x, true), target).total; }, {&x},
                          1e-5, entries),
               1e-4);
    }
    std::printf(failures ? "gradcheck FAILED\n" : "gradcheck passed\n");
    return failures ? 1 : 0;
}

int run_bench(const std::string& lengths_csv, long dim, long state, long reps,
              std::uint64_t seed, const std::string& out_path) {
    const std::vector<long> lengths = parse_longs(lengths_csv, "lengths");
    const BenchResult scan = bench_scan(lengths, dim, state, seed, reps);
    const BenchResult attn = bench_attention(lengths, dim, seed, reps);

    std::string text = "method length min_sec mean_sec reps bytes_est\n";
    char buf[160];
    for (const BenchRecord& r : scan.records) {
        std::snprintf(buf, sizeof(buf), "scan %ld %.9f %.9f %ld %.0f\n", r.length, r.min_sec,
                      r.mean_sec, r.reps, r.bytes_est);
        text += buf;
    }
    for (const BenchRecord& r : attn.records) {
        std::snprintf(buf, sizeof(buf), "attention %ld %.9f %.9f %ld %.0f\n", r.length,
                      r.min_sec, r.mean_sec, r.reps, r.bytes_est);
        text += buf;
    }
    std::snprintf(buf, sizeof(buf), "scan_slope=%.4f\nattention_slope=%.4f\n", scan.slope,
                  attn.slope);
    text += buf;

    std::fputs(text.c_str(), stdout);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        check(static_cast<bool>(out), "cannot write " + out_path);
        out << text;
    }
    return 0;
}

int run_ablate(const DataArgs& data_args, const std::string& config_path,
               const std::string& variants_csv, const std::string& seeds_csv, long epochs,
               double density, bool quiet) {
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    if (epochs >= 0) rc.train.epochs = epochs;
    rc.train.verbose = false;

    check(data_args.synth_count > 0, "ablate: provide --synth COUNT");
    SynthOptions opts;
    opts.artifact_density = density;
    const long side = data_args.size > 0 ? data_args.size : rc.model.input_size;
    const Dataset all =
        generate_synthetic(data_args.seed, data_args.synth_count, side, opts);
    const SplitIndices idx = split_indices(data_args.synth_count, {0.8, 0.1, 0.1, data_args.seed});
    const Dataset tr = select(all, idx.train), va = select(all, idx.val),
                  te = select(all, idx.test);

    std::vector<std::uint64_t> seeds;
    for (long s : parse_longs(seeds_csv, "seeds")) seeds.push_back(static_cast<std::uint64_t>(s));
    const auto rows = ablate(rc.model, parse_names(variants_csv), tr, va, te, rc.train, seeds,
                             !quiet);
    std::fputs(ablation_table(rows).c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hym (hybrid CNN + state-space segmentation)"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic lesion dataset");
    std::string gen_out;
    std::uint64_t gen_seed = 0;
    long gen_count = 100, gen_size = 64;
    bool gen_no_artifacts = false;
    double gen_density = 1.0;
    std::string gen_ratios = "0.8,0.1,0.1";
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--size", gen_size, "image side (multiple of 32)");
    gen->add_flag("--no-artifacts", gen_no_artifacts, "disable hair/dot/ruler clutter");
    gen->add_option("--artifact-density", gen_density, "clutter amount multiplier");
    gen->add_option("--ratios", gen_ratios, "train,val,test split ratios");

    auto* tr = app.add_subcommand("train", "train a model");
    DataArgs tr_data;
    std::string tr_config, tr_out = "model.ckpt", tr_log;
    long tr_epochs = -1, tr_batch = 0, tr_seed = -1;
    double tr_lr0 = 0;
    bool tr_no_augment = false, tr_quiet = false;
    tr->add_option("--data", tr_data.data_dir, "dataset directory (from gen-data)");
    tr->add_option("--synth", tr_data.synth_count, "generate N synthetic samples instead");
    tr->add_option("--size", tr_data.size,
                   "resize --data images (0 keeps native size) or side for --synth "
                   "(0 uses the model input size)");
    tr->add_option("--config", tr_config, "run config file (key = value)");
    tr->add_option("--out", tr_out, "checkpoint output path");
    tr->add_option("--log", tr_log, "write the training log here");
    tr->add_option("--epochs", tr_epochs, "override train.epochs");
    tr->add_option("--batch", tr_batch, "override train.batch_size");
    tr->add_option("--seed", tr_seed, "override train.seed");
    tr->add_option("--lr0", tr_lr0, "override train.lr0");
    tr->add_flag("--no-augment", tr_no_augment, "disable geometric augmentation");
    tr->add_flag("--quiet", tr_quiet, "suppress per-epoch progress");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_images, ev_masks;
    long ev_size = 0, ev_batch = 8;
    double ev_threshold = 0.5;
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset directory (from gen-data)");
    ev->add_option("--split", ev_split, "manifest split to score");
    ev->add_option("--images", ev_images, "raw image directory");
    ev->add_option("--masks", ev_masks, "ground-truth mask directory");
    ev->add_option("--size", ev_size, "resize to this side; 0 keeps native size");
    ev->add_option("--threshold", ev_threshold, "binarization threshold");
    ev->add_option("--batch", ev_batch, "evaluation batch size");

    auto* pr = app.add_subcommand("predict", "write predicted masks for a directory of images");
    std::string pr_ckpt, pr_images, pr_out;
    long pr_size = 0;
    double pr_threshold = 0.5;
    pr->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    pr->add_option("--images", pr_images, "input image directory")->required();
    pr->add_option("--out", pr_out, "output mask directory")->required();
    pr->add_option("--size", pr_size, "resize to this side; 0 keeps native size");
    pr->add_option("--threshold", pr_threshold, "binarization threshold");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::uint64_t gc_seed = 0;
    long gc_entries = 20;
    gc->add_option("--seed", gc_seed, "rng seed");
    gc->add_option("--entries", gc_entries, "checked entries per tensor");

    auto* be = app.add_subcommand("bench", "scan vs attention scaling benchmark");
    std::string be_lengths = "256,512,1024,2048,4096", be_out;
    long be_dim = 64, be_state = 8, be_reps = 5;
    std::uint64_t be_seed = 42;
    be->add_option("--lengths", be_lengths, "comma-separated sequence lengths");
    be->add_option("--dim", be_dim, "channel width");
    be->add_option("--state", be_state, "state dimension for the scan");
    be->add_option("--reps", be_reps, "measured repetitions per length");
    be->add_option("--seed", be_seed, "input seed");
    be->add_option("--out", be_out, "also write records to this file");

    auto* ab = app.add_subcommand("ablate", "train architecture variants and compare");
    DataArgs ab_data;
    ab_data.synth_count = 120;
    std::string ab_config, ab_variants = "full,concat,cnn,mamba", ab_seeds = "1,2,3";
    long ab_epochs = -1;
    double ab_density = 2.0;
    bool ab_quiet = false;
    ab->add_option("--synth", ab_data.synth_count, "synthetic sample count");
    ab->add_option("--size", ab_data.size, "image side (0 uses the model input size)");
    ab->add_option("--seed", ab_data.seed, "data seed");
    ab->add_option("--config", ab_config, "base run config file");
    ab->add_option("--variants", ab_variants, "full,concat,cnn,mamba subset");
    ab->add_option("--seeds", ab_seeds, "training seeds (one run per variant per seed)");
    ab->add_option("--epochs", ab_epochs, "override train.epochs");
    ab->add_option("--artifact-density", ab_density, "clutter amount (ablations default heavy)");
    ab->add_flag("--quiet", ab_quiet, "suppress per-run progress");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(gen))
            return run_gen_data(gen_out, gen_seed, gen_count, gen_size, gen_no_artifacts,
                                gen_density, gen_ratios);
        if (app.got_subcommand(tr))
            return run_train(tr_data, tr_config, tr_out, tr_log, tr_epochs, tr_batch, tr_seed,
                             tr_lr0, tr_no_augment, tr_quiet);
        if (app.got_subcommand(ev))
            return run_eval(ev_ckpt, ev_data, ev_split, ev_images, ev_masks, ev_size,
                            ev_threshold, ev_batch);
        if (app.got_subcommand(pr))
            return run_predict(pr_ckpt, pr_images, pr_out, pr_size, pr_threshold);
        if (app.got_subcommand(gc)) return run_gradcheck(gc_seed, gc_entries);
        if (app.got_subcommand(be))
            return run_bench(be_lengths, be_dim, be_state, be_reps, be_seed, be_out);
        if (app.got_subcommand(ab))
            return run_ablate(ab_data, ab_config, ab_variants, ab_seeds, ab_epochs, ab_density,
                              ab_quiet);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
