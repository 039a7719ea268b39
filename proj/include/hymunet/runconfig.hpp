#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "hymunet/model.hpp"
#include "hymunet/train.hpp"

namespace hym {

// Flat key = value run configuration with section prefixes (model.*, train.*,
// loss.*). Unknown keys are rejected by name; omitted keys keep their
// defaults. '#' starts a comment line.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(val, &used);
    } catch (const std::exception&) {
        fail("config: bad number '" + val + "' for " + key);
    }
    check(used == val.size(), "config: bad number '" + val + "' for " + key);
    return v;
}

inline long parse_long(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(val, &used);
    } catch (const std::exception&) {
        fail("config: bad integer '" + val + "' for " + key);
    }
    check(used == val.size(), "config: bad integer '" + val + "' for " + key);
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    fail("config: bad boolean '" + val + "' for " + key);
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    std::string model_text;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        check(eq != std::string::npos, "config: malformed line '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        TrainConfig& t = rc.train;
        if (key.starts_with("model.")) {
            model_text += key.substr(6) + "=" + val + "\n";
        } else if (key == "train.lr0") {
            t.lr0 = detail::parse_double(key, val);
        } else if (key == "train.lr_min") {
            t.lr_min = detail::parse_double(key, val);
        } else if (key == "train.weight_decay") {
            t.weight_decay = detail::parse_double(key, val);
        } else if (key == "train.beta1") {
            t.beta1 = detail::parse_double(key, val);
        } else if (key == "train.beta2") {
            t.beta2 = detail::parse_double(key, val);
        } else if (key == "train.epochs") {
            t.epochs = detail::parse_long(key, val);
        } else if (key == "train.batch_size") {
            t.batch_size = detail::parse_long(key, val);
        } else if (key == "train.seed") {
            t.seed = static_cast<std::uint64_t>(detail::parse_long(key, val));
        } else if (key == "train.augment") {
            t.augment = detail::parse_bool(key, val);
        } else if (key == "train.clip_norm") {
            t.clip_norm = detail::parse_double(key, val);
        } else if (key == "train.eval_every") {
            t.eval_every = detail::parse_long(key, val);
        } else if (key == "loss.dice") {
            t.loss.dice = detail::parse_double(key, val);
        } else if (key == "loss.bce") {
            t.loss.bce = detail::parse_double(key, val);
        } else if (key == "loss.edge") {
            t.loss.edge = detail::parse_double(key, val);
        } else if (key == "loss.eps") {
            t.loss.eps = detail::parse_double(key, val);
        } else if (key == "loss.edge_radius") {
            t.loss.edge_radius = detail::parse_long(key, val);
        } else if (key == "loss.edge_weight") {
            t.loss.edge_weight = detail::parse_double(key, val);
        } else {
            fail("config: unknown key '" + key + "'");
        }
    }
    rc.model = config_from_string(model_text);  // validates; unknown keys named
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    check(static_cast<bool>(in), "config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

inline std::string run_config_to_string(const RunConfig& rc) {
    std::ostringstream os;
    {
        std::istringstream ms(config_to_string(rc.model));
        std::string line;
        while (std::getline(ms, line)) os << "model." << line << "\n";
    }
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    const TrainConfig& t = rc.train;
    os << "train.lr0=" << num(t.lr0) << "\n";
    os << "train.lr_min=" << num(t.lr_min) << "\n";
    os << "train.weight_decay=" << num(t.weight_decay) << "\n";
    os << "train.beta1=" << num(t.beta1) << "\n";
    os << "train.beta2=" << num(t.beta2) << "\n";
    os << "train.epochs=" << t.epochs << "\n";
    os << "train.batch_size=" << t.batch_size << "\n";
    os << "train.seed=" << t.seed << "\n";
    os << "train.augment=" << (t.augment ? "true" : "false") << "\n";
    os << "train.clip_norm=" << num(t.clip_norm) << "\n";
    os << "train.eval_every=" << t.eval_every << "\n";
    os << "loss.dice=" << num(t.loss.dice) << "\n";
    os << "loss.bce=" << num(t.loss.bce) << "\n";
    os << "loss.edge=" << num(t.loss.edge) << "\n";
    os << "loss.eps=" << num(t.loss.eps) << "\n";
    os << "loss.edge_radius=" << t.loss.edge_radius << "\n";
    os << "loss.edge_weight=" << num(t.loss.edge_weight) << "\n";
    return os.str();
}

}  // namespace hym
