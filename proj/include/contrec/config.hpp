#pragma once

// JSON run configuration: defaults, strict validation, resolved echo.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contrec/model.hpp"
#include "contrec/saliency.hpp"
#include "contrec/shapes.hpp"
#include "contrec/trainer.hpp"
#include "contrec/util.hpp"

namespace contrec {

struct MeshConfig {
    double tau = kIouThreshold;
    std::size_t r0 = 8;
    std::size_t r_final = 32;

    friend bool operator==(const MeshConfig&, const MeshConfig&) = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    ReplayConfig replay;
    std::string prior_combination = "blend";
    MeshConfig mesh;
    std::string output_dir = "out";

    RunOptions run_options() const { return {model, train, replay, 0}; }
};

inline bool operator==(const DataConfig& a, const DataConfig& b) {
    return a.classes == b.classes && a.session_sizes == b.session_sizes && a.shuffle == b.shuffle && a.res == b.res &&
           a.image_size == b.image_size && a.instances_per_class == b.instances_per_class && a.points_per_object == b.points_per_object;
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.epochs == b.epochs && a.first_session_epochs == b.first_session_epochs && a.batch == b.batch && a.lr == b.lr &&
           a.drop_factor == b.drop_factor && a.drops == b.drops && a.momentum == b.momentum && a.clip_norm == b.clip_norm &&
           a.kl_weight == b.kl_weight && a.replay_ratio == b.replay_ratio && a.points_per_step == b.points_per_step &&
           a.summary_dropout == b.summary_dropout && a.sample_eval_latent == b.sample_eval_latent;
}

inline bool operator==(const ReplayConfig& a, const ReplayConfig& b) {
    return a.strategy == b.strategy && a.k_maps == b.k_maps && a.tau == b.tau && a.m_priors == b.m_priors &&
           a.objects_per_class == b.objects_per_class && a.saliency == b.saliency && a.attention_steps == b.attention_steps &&
           a.attention_step_size == b.attention_step_size;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.seed == b.seed && a.data == b.data && a.model == b.model && a.train == b.train && a.replay == b.replay &&
           a.prior_combination == b.prior_combination && a.mesh == b.mesh && a.output_dir == b.output_dir;
}

namespace detail {

using Json = nlohmann::json;

class Section {
public:
    Section(const Json& js, std::string path) : js_(js), path_(std::move(path)) {
        if (!js_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    // Rejects keys that were never read.
    void finish() const {
        for (auto it = js_.begin(); it != js_.end(); ++it)
            if (!read_.count(it.key())) throw ConfigError(key(it.key()) + ": unknown key");
    }

    bool has(const std::string& k) {
        read_.insert(k);
        return js_.contains(k);
    }

    const Json& at(const std::string& k) { return js_.at(k); }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    template <class T>
    void get(const std::string& k, T& out) {
        if (!has(k)) return;
        try {
            out = js_.at(k).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(key(k) + ": wrong type");
        }
    }

    void get_size(const std::string& k, std::size_t& out, std::size_t min = 0) {
        if (!has(k)) return;
        const Json& v = js_.at(k);
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
            throw ConfigError(key(k) + ": expected a non-negative integer");
        }
        out = v.get<std::size_t>();
        if (out < min) throw ConfigError(key(k) + ": must be >= " + std::to_string(min));
    }

    void get_double(const std::string& k, double& out) {
        if (!has(k)) return;
        const Json& v = js_.at(k);
        if (!v.is_number()) throw ConfigError(key(k) + ": expected a number");
        out = v.get<double>();
        if (!std::isfinite(out)) throw ConfigError(key(k) + ": must be finite");
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }
    const Json& js_;
    std::string path_;
    std::set<std::string> read_;
};

inline void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
    using detail::require;
    require(c.data.res >= 4, "data.res", "must be >= 4");
    require(c.data.image_size >= 16, "data.image_size", "must be >= 16");
    require(c.data.instances_per_class >= 2, "data.instances_per_class", "must be >= 2");
    require(c.data.points_per_object >= 1, "data.points_per_object", "must be >= 1");
    require(!c.data.classes.empty(), "data.classes", "must not be empty");
    require(!c.data.session_sizes.empty(), "data.sessions", "must not be empty");
    std::size_t total = 0;
    for (auto s : c.data.session_sizes) {
        require(s > 0, "data.sessions", "sessions must be non-empty");
        total += s;
    }
    require(total == c.data.classes.size(), "data.sessions",
            "sizes sum to " + std::to_string(total) + " but " + std::to_string(c.data.classes.size()) + " classes configured");
    std::set<ShapeClass> seen(c.data.classes.begin(), c.data.classes.end());
    require(seen.size() == c.data.classes.size(), "data.classes", "duplicate class");
    require(c.model.latent_dim >= 1, "model.latent_dim", "must be >= 1");
    require(c.model.decoder_width >= 1, "model.decoder_width", "must be >= 1");
    require(c.model.decoder_depth >= 1, "model.decoder_depth", "must be >= 1");
    require(c.train.epochs >= 1, "train.epochs", "must be >= 1");
    require(c.train.batch >= 1, "train.batch", "must be >= 1");
    require(c.train.lr > 0.0, "train.lr", "must be positive");
    require(c.train.drop_factor > 0.0 && c.train.drop_factor <= 1.0, "train.drop_factor", "must lie in (0, 1]");
    for (std::size_t i = 0; i < c.train.drops.size(); ++i) {
        require(c.train.drops[i] > 0.0 && c.train.drops[i] < 1.0 && (i == 0 || c.train.drops[i] > c.train.drops[i - 1]), "train.drops",
                "must be strictly increasing in (0, 1)");
    }
    require(c.train.momentum >= 0.0 && c.train.momentum < 1.0, "train.momentum", "must lie in [0, 1)");
    require(c.train.clip_norm >= 0.0, "train.clip_norm", "must be >= 0");
    require(c.train.kl_weight >= 0.0, "train.kl_weight", "must be >= 0");
    require(c.train.replay_ratio >= 0.0, "train.replay_ratio", "must be >= 0");
    require(c.train.summary_dropout >= 0.0 && c.train.summary_dropout <= 1.0, "train.summary_dropout", "must lie in [0, 1]");
    require(c.replay.k_maps >= 1, "replay.k_maps", "must be >= 1");
    require(c.replay.tau > 0.0 && c.replay.tau < 1.0, "replay.tau", "must lie in (0, 1)");
    require(c.replay.m_priors >= 1, "replay.m_priors", "must be >= 1");
    require(c.replay.attention_step_size > 0.0, "replay.attention_step_size", "must be positive");
    require(c.mesh.tau > 0.0 && c.mesh.tau < 1.0, "mesh.tau", "must lie in (0, 1)");
    auto pow2 = [](std::size_t v) { return v && !(v & (v - 1)); };
    require(pow2(c.mesh.r0), "mesh.r0", "must be a power of two");
    require(pow2(c.mesh.r_final), "mesh.r_final", "must be a power of two");
    require(c.mesh.r0 < c.mesh.r_final, "mesh.r_final", "must exceed mesh.r0");
    require(!c.output_dir.empty(), "output_dir", "must not be empty");
    if (c.replay.strategy == ReplayStrategy::CompAndInt) require(c.data.image_size % 2 == 0, "data.image_size", "must be even for COMP_AND_INT");
    if (c.replay.strategy == ReplayStrategy::Compressed) require(c.data.image_size % 4 == 0, "data.image_size", "must be a multiple of 4 for COMPRESSED");
}

inline RunConfig parse_config_json(const nlohmann::json& js) {
    using detail::Section;
    RunConfig c;
    Section root(js, "");
    if (root.has("seed")) {
        const auto& v = root.at("seed");
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw ConfigError("seed: expected a non-negative integer");
        c.seed = v.get<std::uint64_t>();
    }
    if (root.has("data")) {
        Section s(root.at("data"), "data");
        if (s.has("classes")) {
            const auto& arr = s.at("classes");
            if (!arr.is_array()) throw ConfigError("data.classes: expected an array of class names");
            c.data.classes.clear();
            for (const auto& v : arr) {
                if (!v.is_string()) throw ConfigError("data.classes: expected an array of class names");
                try {
                    c.data.classes.push_back(parse_class(v.get<std::string>()));
                } catch (const ConfigError& e) {
                    throw ConfigError(std::string("data.classes: ") + e.what());
                }
            }
        }
        if (s.has("sessions")) {
            const auto& arr = s.at("sessions");
            if (!arr.is_array()) throw ConfigError("data.sessions: expected an array of session sizes");
            c.data.session_sizes.clear();
            for (const auto& v : arr) {
                if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError("data.sessions: sizes must be positive integers");
                c.data.session_sizes.push_back(v.get<std::size_t>());
            }
        }
        s.get("shuffle", c.data.shuffle);
        s.get_size("res", c.data.res);
        s.get_size("image_size", c.data.image_size);
        s.get_size("instances_per_class", c.data.instances_per_class);
        s.get_size("points_per_object", c.data.points_per_object);
        s.finish();
    }
    if (root.has("model")) {
        Section s(root.at("model"), "model");
        s.get_size("latent_dim", c.model.latent_dim);
        s.get_size("feature_dim", c.model.feature_dim, 1);
        s.get_size("decoder_width", c.model.decoder_width);
        s.get_size("decoder_depth", c.model.decoder_depth);
        s.get_size("point_embed", c.model.point_embed, 1);
        s.get_size("latent_hidden", c.model.latent_hidden, 1);
        s.finish();
    }
    c.model.image_size = c.data.image_size;
    if (root.has("train")) {
        Section s(root.at("train"), "train");
        s.get_size("epochs", c.train.epochs);
        s.get_size("first_session_epochs", c.train.first_session_epochs);
        s.get_size("batch", c.train.batch);
        s.get_double("lr", c.train.lr);
        s.get_double("drop_factor", c.train.drop_factor);
        s.get("drops", c.train.drops);
        s.get_double("momentum", c.train.momentum);
        s.get_double("clip_norm", c.train.clip_norm);
        s.get_double("kl_weight", c.train.kl_weight);
        s.get_double("replay_ratio", c.train.replay_ratio);
        s.get_size("points_per_step", c.train.points_per_step);
        s.get_double("summary_dropout", c.train.summary_dropout);
        s.get("sample_eval_latent", c.train.sample_eval_latent);
        s.finish();
    }
    if (root.has("replay")) {
        Section s(root.at("replay"), "replay");
        if (s.has("strategy")) {
            std::string v;
            s.get("strategy", v);
            c.replay.strategy = parse_strategy(v);
        }
        s.get_size("k_maps", c.replay.k_maps);
        s.get_double("tau", c.replay.tau);
        s.get_size("m_priors", c.replay.m_priors);
        s.get_size("objects_per_class", c.replay.objects_per_class);
        if (s.has("saliency")) {
            std::string v;
            s.get("saliency", v);
            try {
                c.replay.saliency = parse_compat(v);
            } catch (const ConfigError&) {
                throw ConfigError("replay.saliency: unknown mode '" + v + "'");
            }
        }
        if (s.has("prior_combination")) {
            s.get("prior_combination", c.prior_combination);
            parse_combination(c.prior_combination);
        }
        s.get_size("attention_steps", c.replay.attention_steps);
        s.get_double("attention_step_size", c.replay.attention_step_size);
        s.finish();
    }
    if (root.has("mesh")) {
        Section s(root.at("mesh"), "mesh");
        s.get_double("tau", c.mesh.tau);
        s.get_size("r0", c.mesh.r0);
        s.get_size("r_final", c.mesh.r_final);
        s.finish();
    }
    root.get("output_dir", c.output_dir);
    root.finish();
    validate(c);
    return c;
}

inline RunConfig parse_config_text(const std::string& text) {
    nlohmann::json js;
    try {
        js = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    return parse_config_json(js);
}

inline RunConfig parse_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError&) {
        throw ConfigError("config file not found: " + path);
    }
    return parse_config_text(text);
}

inline std::string encode_config(const RunConfig& c) {
    nlohmann::ordered_json js;
    js["seed"] = c.seed;
    auto& d = js["data"];
    d["classes"] = nlohmann::ordered_json::array();
    for (auto cls : c.data.classes) d["classes"].push_back(class_name(cls));
    d["sessions"] = c.data.session_sizes;
    d["shuffle"] = c.data.shuffle;
    d["res"] = c.data.res;
    d["image_size"] = c.data.image_size;
    d["instances_per_class"] = c.data.instances_per_class;
    d["points_per_object"] = c.data.points_per_object;
    auto& m = js["model"];
    m["latent_dim"] = c.model.latent_dim;
    m["feature_dim"] = c.model.feature_dim;
    m["decoder_width"] = c.model.decoder_width;
    m["decoder_depth"] = c.model.decoder_depth;
    m["point_embed"] = c.model.point_embed;
    m["latent_hidden"] = c.model.latent_hidden;
    auto& t = js["train"];
    t["epochs"] = c.train.epochs;
    t["first_session_epochs"] = c.train.first_session_epochs;
    t["batch"] = c.train.batch;
    t["lr"] = c.train.lr;
    t["drop_factor"] = c.train.drop_factor;
    t["drops"] = c.train.drops;
    t["momentum"] = c.train.momentum;
    t["clip_norm"] = c.train.clip_norm;
    t["kl_weight"] = c.train.kl_weight;
    t["replay_ratio"] = c.train.replay_ratio;
    t["points_per_step"] = c.train.points_per_step;
    t["summary_dropout"] = c.train.summary_dropout;
    t["sample_eval_latent"] = c.train.sample_eval_latent;
    auto& r = js["replay"];
    r["strategy"] = strategy_name(c.replay.strategy);
    r["k_maps"] = c.replay.k_maps;
    r["tau"] = c.replay.tau;
    r["m_priors"] = c.replay.m_priors;
    r["objects_per_class"] = c.replay.objects_per_class;
    r["saliency"] = c.replay.saliency == CompatMode::Dot ? "dot" : "additive";
    r["prior_combination"] = c.prior_combination;
    r["attention_steps"] = c.replay.attention_steps;
    r["attention_step_size"] = c.replay.attention_step_size;
    auto& me = js["mesh"];
    me["tau"] = c.mesh.tau;
    me["r0"] = c.mesh.r0;
    me["r_final"] = c.mesh.r_final;
    js["output_dir"] = c.output_dir;
    return js.dump(2) + "\n";
}

}  // namespace contrec
