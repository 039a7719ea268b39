#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hymunet/blocks.hpp"

namespace hym {

enum class BlockKind { kRcb, kVss };
enum class SkipMode { kMgf, kConcat };

struct ModelConfig {
    std::array<long, 4> stage_widths{32, 64, 128, 256};
    std::array<long, 4> blocks_per_stage{2, 2, 2, 2};
    std::array<BlockKind, 4> stage_kinds{BlockKind::kRcb, BlockKind::kRcb, BlockKind::kVss,
                                         BlockKind::kVss};
    long state_dim = 8;
    long expansion = 2;
    long conv1d_k = 3;
    ScanMode scan_mode = ScanMode::kRowMirror;
    NormMode norm_mode = NormMode::kBatch;
    SkipMode skip_mode = SkipMode::kMgf;
    Selectivity selectivity = Selectivity::kInputDependent;
    long input_size = 64;
    long in_channels = 3;

    void validate() const {
        for (long w : stage_widths) check(w >= 1, "config: stage widths must be positive");
        for (int i = 1; i < 4; ++i)
            check(stage_widths[i] >= stage_widths[i - 1],
                  "config: stage widths must be nondecreasing");
        for (long b : blocks_per_stage) check(b >= 0, "config: blocks_per_stage must be >= 0");
        check(state_dim >= 1 && expansion >= 1, "config: state_dim and expansion must be >= 1");
        check(conv1d_k % 2 == 1, "config: conv1d_k must be odd");
        check(input_size >= 32 && input_size % 32 == 0,
              "config: input_size must be a positive multiple of 32");
        check(in_channels >= 1, "config: in_channels must be positive");
    }
};

namespace detail {
inline std::string join4(const std::array<long, 4>& a) {
    std::ostringstream os;
    for (int i = 0; i < 4; ++i) os << (i ? "," : "") << a[i];
    return os.str();
}
inline std::array<long, 4> parse4(const std::string& s) {
    std::array<long, 4> out{};
    std::istringstream is(s);
    std::string item;
    for (int i = 0; i < 4; ++i) {
        check(static_cast<bool>(std::getline(is, item, ',')), "config: expected 4 entries in " + s);
        out[i] = std::stol(item);
    }
    return out;
}
}  // namespace detail

inline std::string config_to_string(const ModelConfig& c) {
    std::ostringstream os;
    os << "widths=" << detail::join4(c.stage_widths) << "\n";
    os << "blocks=" << detail::join4(c.blocks_per_stage) << "\n";
    os << "kinds=";
    for (int i = 0; i < 4; ++i)
        os << (i ? "," : "") << (c.stage_kinds[i] == BlockKind::kRcb ? "rcb" : "vss");
    os << "\n";
    os << "state_dim=" << c.state_dim << "\n";
    os << "expansion=" << c.expansion << "\n";
    os << "conv1d_k=" << c.conv1d_k << "\n";
    os << "scan_mode=" << (c.scan_mode == ScanMode::kRowMirror ? "rowmirror" : "rowcol") << "\n";
    os << "norm_mode=" << (c.norm_mode == NormMode::kBatch ? "batch" : "instance") << "\n";
    os << "skip_mode=" << (c.skip_mode == SkipMode::kMgf ? "mgf" : "concat") << "\n";
    os << "selectivity="
       << (c.selectivity == Selectivity::kInputDependent ? "input" : "fixed") << "\n";
    os << "input_size=" << c.input_size << "\n";
    os << "in_channels=" << c.in_channels << "\n";
    return os.str();
}

inline ModelConfig config_from_string(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        check(eq != std::string::npos, "config: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "widths") {
            c.stage_widths = detail::parse4(val);
        } else if (key == "blocks") {
            c.blocks_per_stage = detail::parse4(val);
        } else if (key == "kinds") {
            std::istringstream ks(val);
            std::string k;
            for (int i = 0; i < 4; ++i) {
                check(static_cast<bool>(std::getline(ks, k, ',')), "config: kinds needs 4 entries");
                check(k == "rcb" || k == "vss", "config: unknown block kind '" + k + "'");
                c.stage_kinds[i] = k == "rcb" ? BlockKind::kRcb : BlockKind::kVss;
            }
        } else if (key == "state_dim") {
            c.state_dim = std::stol(val);
        } else if (key == "expansion") {
            c.expansion = std::stol(val);
        } else if (key == "conv1d_k") {
            c.conv1d_k = std::stol(val);
        } else if (key == "scan_mode") {
            check(val == "rowmirror" || val == "rowcol", "config: unknown scan_mode '" + val + "'");
            c.scan_mode = val == "rowmirror" ? ScanMode::kRowMirror : ScanMode::kRowCol;
        } else if (key == "norm_mode") {
            check(val == "batch" || val == "instance", "config: unknown norm_mode '" + val + "'");
            c.norm_mode = val == "batch" ? NormMode::kBatch : NormMode::kInstance;
        } else if (key == "skip_mode") {
            check(val == "mgf" || val == "concat", "config: unknown skip_mode '" + val + "'");
            c.skip_mode = val == "mgf" ? SkipMode::kMgf : SkipMode::kConcat;
        } else if (key == "selectivity") {
            check(val == "input" || val == "fixed", "config: unknown selectivity '" + val + "'");
            c.selectivity = val == "input" ? Selectivity::kInputDependent : Selectivity::kFixed;
        } else if (key == "input_size") {
            c.input_size = std::stol(val);
        } else if (key == "in_channels") {
            c.in_channels = std::stol(val);
        } else {
            fail("config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

// Hybrid U-Net: patch embed -> 4 encoder stages (RCB shallow, VSS deep) ->
// decoder with gated skip fusion at stages 3,2,1 -> x4 upsample head.
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(Rng::derive(seed, 0xC0DEC0DEULL));
        embed_ = PatchEmbed::make(cfg_.in_channels, cfg_.stage_widths[0], rng);
        for (int s = 0; s < 4; ++s) {
            Stage& st = stages_[s];
            const long w = cfg_.stage_widths[s];
            if (s > 0)
                st.down = ConvBnRelu::make(cfg_.stage_widths[s - 1], w, 3, 2, 1, rng);
            for (long b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
                if (cfg_.stage_kinds[s] == BlockKind::kRcb)
                    st.rcb.push_back(RcbBlock::make(w, w, rng));
                else
                    st.vss.push_back(VssBlock::make(w, cfg_.expansion, cfg_.state_dim,
                                                    cfg_.conv1d_k, rng, cfg_.selectivity));
            }
        }
        for (int i = 0; i < 3; ++i) {
            // decoder stage i refines encoder level i (0-based; levels 0..2)
            const long we = cfg_.stage_widths[i], wd = cfg_.stage_widths[i + 1];
            dec_[i].gate = GateNet::make(wd, rng);
            dec_[i].block = DecoderBlock::make(we + wd, we, rng);
        }
        head_ = OutputHead::make(cfg_.stage_widths[0], rng);
    }

    const ModelConfig& config() const { return cfg_; }
    bool train_mode() const { return train_mode_; }
    void set_train_mode(bool m) { train_mode_ = m; }

    Tensor forward(const Tensor& x) { return forward(x, train_mode_); }

    Tensor forward(const Tensor& x, bool training) {
        check(x.rank() == 4 && x.dim(1) == cfg_.in_channels,
              "model: input must be [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                  shape_str(x.shape));
        check(x.dim(2) % 32 == 0 && x.dim(3) % 32 == 0,
              "model: input size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                  " must be a multiple of 32");
        check(x.all_finite(), "model: non-finite input");
        ForwardCtx ctx{training, cfg_.norm_mode, cfg_.scan_mode};

        Tensor f = embed_.forward(x, ctx);
        std::array<Tensor, 4> enc;
        for (int s = 0; s < 4; ++s) {
            Stage& st = stages_[s];
            if (st.down) f = st.down->forward(f, ctx);
            for (auto& blk : st.rcb) f = blk.forward(f, ctx);
            for (auto& blk : st.vss) f = blk.forward(f, ctx);
            enc[s] = f;
        }
        Tensor d = enc[3];
        for (int i = 2; i >= 0; --i) {
            Tensor skip;
            if (cfg_.skip_mode == SkipMode::kMgf) {
                skip = mgf_skip(enc[i], d, dec_[i].gate);
            } else {
                skip = concat_channels(enc[i], upsample_bilinear2x(d));
            }
            d = dec_[i].block.forward(skip, ctx);
        }
        return head_.forward(d);
    }

    template <class Fn>
    void visit(Fn&& fn) {
        embed_.visit("embed", fn);
        for (int s = 0; s < 4; ++s) {
            const std::string p = "enc" + std::to_string(s + 1);
            Stage& st = stages_[s];
            if (st.down) st.down->visit(p + ".down", fn);
            for (std::size_t b = 0; b < st.rcb.size(); ++b)
                st.rcb[b].visit(p + ".b" + std::to_string(b), fn);
            for (std::size_t b = 0; b < st.vss.size(); ++b)
                st.vss[b].visit(p + ".b" + std::to_string(b), fn);
        }
        for (int i = 0; i < 3; ++i) {
            const std::string p = "dec" + std::to_string(i + 1);
            if (cfg_.skip_mode == SkipMode::kMgf) dec_[i].gate.visit(p + ".gate", fn);
            dec_[i].block.visit(p + ".block", fn);
        }
        head_.visit("head", fn);
    }

    std::vector<std::pair<std::string, Tensor*>> parameters() {
        std::vector<std::pair<std::string, Tensor*>> out;
        visit([&](const std::string& name, Tensor& t, bool trainable) {
            if (trainable) out.emplace_back(name, &t);
        });
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> state_tensors() {
        std::vector<std::pair<std::string, Tensor*>> out;
        visit([&](const std::string& name, Tensor& t, bool) { out.emplace_back(name, &t); });
        return out;
    }

    long count_params() {
        long n = 0;
        for (auto& [name, t] : parameters()) n += t->numel();
        return n;
    }

private:
    struct Stage {
        std::optional<ConvBnRelu> down;
        std::vector<RcbBlock> rcb;
        std::vector<VssBlock> vss;
    };
    struct DecStage {
        GateNet gate;
        DecoderBlock block;
    };

    ModelConfig cfg_;
    PatchEmbed embed_;
    std::array<Stage, 4> stages_;
    std::array<DecStage, 3> dec_;
    OutputHead head_;
    bool train_mode_ = false;
};

// --- checkpointing -------------------------------------------------------------
// Layout: magic "HYMC", version u32, u8 train-mode flag, config text block,
// then the model tensors keyed by canonical path, sorted by key.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    check(static_cast<bool>(os), "checkpoint save: cannot open " + path);
    os.write("HYMC", 4);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    detail::write_pod<std::uint8_t>(os, model.train_mode() ? 1 : 0);
    const std::string cfg = config_to_string(model.config());
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    auto tensors = model.state_tensors();
    std::sort(tensors.begin(), tensors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    detail::write_pod<std::uint64_t>(os, tensors.size());
    for (auto& [name, t] : tensors) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        save_tensor(os, *t);
    }
    check(static_cast<bool>(os), "checkpoint save: write failed for " + path);
}

// Rebuild a model from the config stored in the file and fill every tensor.
// When `expected` is given, the stored config must match it exactly; the
// error names each differing key.
inline Model load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
    std::ifstream is(path, std::ios::binary);
    check(static_cast<bool>(is), "checkpoint load: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    check(static_cast<bool>(is) && std::memcmp(magic, "HYMC", 4) == 0,
          "checkpoint load: bad magic, not a checkpoint file");
    const auto version = detail::read_pod<std::uint32_t>(is);
    check(version == kCheckpointVersion,
          "checkpoint load: unsupported version " + std::to_string(version));
    const bool train_mode = detail::read_pod<std::uint8_t>(is) != 0;
    const auto cfg_len = detail::read_pod<std::uint32_t>(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    check(static_cast<bool>(is), "checkpoint load: truncated config block");
    ModelConfig cfg = config_from_string(cfg_text);

    if (expected) {
        std::string diffs;
        const std::string a = config_to_string(cfg), b = config_to_string(*expected);
        std::istringstream ia(a), ib(b);
        std::string la, lb;
        while (std::getline(ia, la) && std::getline(ib, lb))
            if (la != lb) diffs += "  stored '" + la + "' vs expected '" + lb + "'\n";
        check(diffs.empty(), "checkpoint load: config mismatch\n" + diffs);
    }

    Model model(cfg, /*seed=*/0);
    model.set_train_mode(train_mode);
    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : model.state_tensors()) by_name[name] = t;

    const auto count = detail::read_pod<std::uint64_t>(is);
    std::map<std::string, bool> filled;
    for (auto& [name, t] : by_name) filled[name] = false;
    std::string unknown;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        check(static_cast<bool>(is), "checkpoint load: truncated key name");
        Tensor loaded = load_tensor(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            unknown += " " + name;
            continue;
        }
        check(it->second->shape == loaded.shape,
              "checkpoint load: shape mismatch for key " + name + ": stored " +
                  shape_str(loaded.shape) + " vs model " + shape_str(it->second->shape));
        *it->second->data = *loaded.data;
        filled[name] = true;
    }
    std::string missing;
    for (auto& [name, ok] : filled)
        if (!ok) missing += " " + name;
    check(unknown.empty() && missing.empty(),
          "checkpoint load: key mismatch;" +
              (unknown.empty() ? std::string() : " unknown keys:" + unknown) +
              (missing.empty() ? std::string() : " missing keys:" + missing));
    return model;
}

}  // namespace hym
