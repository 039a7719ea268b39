#pragma once

#include <string>
#include <vector>

#include "hymunet/train.hpp"

namespace hym {

// Architecture variants for the fusion/backbone comparison:
//   full   - the base config as given
//   concat - gated skip fusion replaced by plain concatenation
//   cnn    - every stage a residual conv block
//   mamba  - every stage a state-space block
inline ModelConfig variant_config(ModelConfig base, const std::string& variant) {
    if (variant == "full") return base;
    if (variant == "concat") {
        base.skip_mode = SkipMode::kConcat;
        return base;
    }
    if (variant == "cnn") {
        base.stage_kinds = {BlockKind::kRcb, BlockKind::kRcb, BlockKind::kRcb, BlockKind::kRcb};
        return base;
    }
    if (variant == "mamba") {
        base.stage_kinds = {BlockKind::kVss, BlockKind::kVss, BlockKind::kVss, BlockKind::kVss};
        return base;
    }
    fail("ablate: unknown variant '" + variant + "'");
}

struct AblationRow {
    std::string variant;
    Aggregate dsc, iou, precision, hd95;  // across seeds (per-seed test means)
    long hd95_undefined = 0;              // summed across seeds
    std::vector<double> dsc_per_seed;
};

// Trains every variant under an identical budget (same data, same TrainConfig
// apart from the seed) and scores each on the shared test set.
inline std::vector<AblationRow> ablate(const ModelConfig& base,
                                       const std::vector<std::string>& variants,
                                       const Dataset& train_set, const Dataset& val_set,
                                       const Dataset& test_set, const TrainConfig& cfg,
                                       const std::vector<std::uint64_t>& seeds,
                                       bool verbose = false) {
    check(!variants.empty(), "ablate: no variants");
    check(!seeds.empty(), "ablate: no seeds");
    std::vector<AblationRow> rows;
    for (const std::string& v : variants) {
        const ModelConfig mc = variant_config(base, v);
        AblationRow row;
        row.variant = v;
        std::vector<double> ds, is, ps, hs;
        for (std::uint64_t seed : seeds) {
            Model model(mc, seed);
            TrainConfig run = cfg;
            run.seed = seed;
            const TrainLog log = train(model, train_set, val_set, run);
            check(!log.halted, "ablate: run halted (" + v + ", seed " +
                                   std::to_string(seed) + "): " + log.halt_reason);
            const MetricReport r = evaluate(model, test_set, 0.5, run.batch_size);
            ds.push_back(r.dsc.mean);
            is.push_back(r.iou.mean);
            ps.push_back(r.precision.mean);
            if (r.hd95.count > 0) hs.push_back(r.hd95.mean);
            row.hd95_undefined += r.hd95_undefined;
            row.dsc_per_seed.push_back(r.dsc.mean);
            if (verbose)
                std::fprintf(stderr, "ablate %s seed %llu: test dsc %.4f\n", v.c_str(),
                             static_cast<unsigned long long>(seed), r.dsc.mean);
        }
        row.dsc = detail::aggregate_of(ds);
        row.iou = detail::aggregate_of(is);
        row.precision = detail::aggregate_of(ps);
        row.hd95 = detail::aggregate_of(hs);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::string out =
        "variant   dsc            iou            precision      hd95\n";
    char buf[160];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof(buf),
                      "%-9s %.4f±%.4f %.4f±%.4f %.4f±%.4f %.3f±%.3f\n", r.variant.c_str(),
                      r.dsc.mean, r.dsc.stdev, r.iou.mean, r.iou.stdev, r.precision.mean,
                      r.precision.stdev, r.hd95.mean, r.hd95.stdev);
        out += buf;
    }
    return out;
}

}  // namespace hym
