#pragma once

// Image encoder E, variational latent encoder G and occupancy decoder phi,
// the BCE data term, and the CREC checkpoint format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "contrec/autodiff.hpp"
#include "contrec/image.hpp"
#include "contrec/shapes.hpp"
#include "contrec/util.hpp"

namespace contrec {

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t feature_dim = 64;
    std::size_t latent_dim = 64;
    std::size_t decoder_width = 64;
    std::size_t decoder_depth = 4;
    std::size_t point_embed = 32;
    std::size_t latent_hidden = 64;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::array<std::size_t, 3> kEncoderChannels = {8, 16, 32};
inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 2.0;
inline constexpr double kBceEps = 1e-7;
inline constexpr double kInitLogSigma = -3.0;

struct GaussianLatent {
    std::vector<double> mu;
    std::vector<double> sigma;

    std::size_t dim() const { return mu.size(); }

    friend bool operator==(const GaussianLatent&, const GaussianLatent&) = default;
};

inline void validate(const GaussianLatent& q) {
    if (q.mu.size() != q.sigma.size()) throw ad::ContractError("GaussianLatent: mu/sigma length mismatch");
    for (std::size_t i = 0; i < q.sigma.size(); ++i) {
        if (!(q.sigma[i] > 0.0) || !std::isfinite(q.sigma[i]) || !std::isfinite(q.mu[i])) {
            throw ad::ContractError("GaussianLatent: invalid parameter at index " + std::to_string(i));
        }
    }
}

// Ordered, named parameter tensors of one network.
class ParamSet {
public:
    ad::Tensor& add(const std::string& name, ad::Tensor t) {
        if (index_.count(name)) throw ad::ContractError("duplicate parameter " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    ad::Tensor& operator[](const std::string& name) { return tensors_.at(position(name)); }
    const ad::Tensor& operator[](const std::string& name) const { return tensors_.at(position(name)); }
    std::size_t position(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ad::ContractError("unknown parameter " + name);
        return it->second;
    }

    std::size_t size() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    ad::Tensor& at(std::size_t i) { return tensors_.at(i); }
    const ad::Tensor& at(std::size_t i) const { return tensors_.at(i); }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.names_ == b.names_ && a.tensors_ == b.tensors_; }

private:
    std::vector<std::string> names_;
    std::vector<ad::Tensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct ReconModel {
    ModelConfig config;
    ParamSet encoder;  // E, plus the per-layer projections of e used for saliency
    ParamSet latent;   // G
    ParamSet decoder;  // phi

    std::array<ParamSet*, 3> sets() { return {&encoder, &latent, &decoder}; }
    std::array<const ParamSet*, 3> sets() const { return {&encoder, &latent, &decoder}; }

    std::size_t parameter_count() const { return encoder.count() + latent.count() + decoder.count(); }

    friend bool operator==(const ReconModel&, const ReconModel&) = default;
};

inline std::size_t encoder_spatial(std::size_t image_size) {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < kEncoderChannels.size(); ++i) s = ad::conv_out_dim(s, 3, 2, 1);
    return s;
}

namespace detail {

inline ad::Tensor he_normal(ad::Shape shape, std::size_t fan_in, Rng& rng, double gain = 2.0) {
    ad::Tensor t(std::move(shape));
    std::normal_distribution<double> nd(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = nd(rng);
    return t;
}

}  // namespace detail

inline ReconModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.image_size < 16) throw ConfigError("model.image_size must be >= 16");
    if (cfg.decoder_depth < 1) throw ConfigError("model.decoder_depth must be >= 1");
    ReconModel m;
    m.config = cfg;
    Rng rng(seed);
    using detail::he_normal;

    std::size_t in_ch = 1;
    for (std::size_t s = 0; s < kEncoderChannels.size(); ++s) {
        const std::size_t out_ch = kEncoderChannels[s];
        const std::string p = "enc.conv" + std::to_string(s + 1);
        m.encoder.add(p + ".w", he_normal({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
        m.encoder.add(p + ".b", ad::Tensor({out_ch}));
        in_ch = out_ch;
    }
    const std::size_t sp = encoder_spatial(cfg.image_size);
    const std::size_t flat = kEncoderChannels.back() * sp * sp;
    m.encoder.add("enc.fc.w", he_normal({flat, cfg.feature_dim}, flat, rng, 1.0));
    m.encoder.add("enc.fc.b", ad::Tensor({cfg.feature_dim}));
    for (std::size_t s = 0; s < kEncoderChannels.size(); ++s) {
        m.encoder.add("enc.att" + std::to_string(s + 1) + ".proj",
                      he_normal({kEncoderChannels[s], cfg.feature_dim}, cfg.feature_dim, rng, 1.0));
    }

    m.latent.add("lat.pt.w", he_normal({4, cfg.point_embed}, 4, rng));
    m.latent.add("lat.pt.b", ad::Tensor({cfg.point_embed}));
    m.latent.add("lat.he.w", he_normal({cfg.feature_dim, cfg.latent_hidden}, cfg.feature_dim + cfg.point_embed, rng));
    m.latent.add("lat.hs.w", he_normal({cfg.point_embed, cfg.latent_hidden}, cfg.feature_dim + cfg.point_embed, rng));
    m.latent.add("lat.h.b", ad::Tensor({cfg.latent_hidden}));
    m.latent.add("lat.mu.w", he_normal({cfg.latent_hidden, cfg.latent_dim}, cfg.latent_hidden, rng, 1.0));
    m.latent.add("lat.mu.b", ad::Tensor({cfg.latent_dim}));
    m.latent.add("lat.ls.w", he_normal({cfg.latent_hidden, cfg.latent_dim}, cfg.latent_hidden, rng, 0.1));
    m.latent.add("lat.ls.b", ad::Tensor({cfg.latent_dim}, kInitLogSigma));

    const std::size_t w = cfg.decoder_width;
    const std::size_t fan0 = 3 + cfg.feature_dim + cfg.latent_dim;
    m.decoder.add("dec.l0.wp", he_normal({3, w}, 3, rng));
    m.decoder.add("dec.l0.we", he_normal({cfg.feature_dim, w}, fan0, rng));
    m.decoder.add("dec.l0.wz", he_normal({cfg.latent_dim, w}, fan0, rng));
    m.decoder.add("dec.l0.b", ad::Tensor({w}));
    for (std::size_t l = 1; l < cfg.decoder_depth; ++l) {
        m.decoder.add("dec.l" + std::to_string(l) + ".w", he_normal({w, w}, w, rng));
        m.decoder.add("dec.l" + std::to_string(l) + ".b", ad::Tensor({w}));
    }
    m.decoder.add("dec.out.w", he_normal({w, 1}, w, rng, 0.1));
    m.decoder.add("dec.out.b", ad::Tensor({1}));
    return m;
}

// Tape handles for every parameter of a model.
class BoundModel {
public:
    BoundModel(ad::Tape& tape, ReconModel& model, bool trainable) : tape_(&tape), config_(model.config) {
        for (auto* set : model.sets()) {
            for (std::size_t i = 0; i < set->size(); ++i) {
                set->at(i).set_requires_grad(trainable);
                vars_[set->name(i)] = trainable ? tape.param(set->at(i)) : tape.frozen(set->at(i));
            }
        }
    }

    BoundModel(ad::Tape& tape, const ReconModel& model) : tape_(&tape), config_(model.config) {
        for (const auto* set : model.sets())
            for (std::size_t i = 0; i < set->size(); ++i) vars_[set->name(i)] = tape.frozen(set->at(i));
    }

    // Handles supplied by the caller, in parameter_names() order.
    BoundModel(ad::Tape& tape, const ModelConfig& config, const std::vector<std::string>& names, std::span<const ad::Var> vars)
        : tape_(&tape), config_(config) {
        if (names.size() != vars.size()) throw ad::ContractError("BoundModel: names/vars length mismatch");
        for (std::size_t i = 0; i < names.size(); ++i) vars_[names[i]] = vars[i];
    }

    ad::Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw ad::ContractError("unbound parameter " + name);
        return it->second;
    }
    ad::Tape& tape() const { return *tape_; }
    const ModelConfig& config() const { return config_; }

private:
    ad::Tape* tape_;
    ModelConfig config_;
    std::unordered_map<std::string, ad::Var> vars_;
};

inline std::vector<std::string> parameter_names(const ReconModel& m) {
    std::vector<std::string> out;
    for (const auto* s : m.sets())
        for (std::size_t i = 0; i < s->size(); ++i) out.push_back(s->name(i));
    return out;
}

inline std::vector<ad::Tensor> parameter_tensors(const ReconModel& m) {
    std::vector<ad::Tensor> out;
    for (const auto* s : m.sets())
        for (std::size_t i = 0; i < s->size(); ++i) out.push_back(s->at(i));
    return out;
}

struct EncodedImage {
    ad::Var feature;                // 1 x feature_dim
    std::array<ad::Var, 3> maps{};  // relu outputs of the three conv stages, C x h x w
};

inline EncodedImage encode_image(const BoundModel& m, const Image& img) {
    const std::size_t s = m.config().image_size;
    if (img.width != s || img.height != s) {
        throw ConfigError("encode_image: expected " + std::to_string(s) + "x" + std::to_string(s) + " image, got " +
                          std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    ad::Tape& tape = m.tape();
    EncodedImage out;
    ad::Var x = tape.constant(ad::Tensor({1, img.height, img.width}, img.pixels));
    for (std::size_t l = 0; l < kEncoderChannels.size(); ++l) {
        const std::string p = "enc.conv" + std::to_string(l + 1);
        x = ad::relu(ad::add_bias(ad::conv2d(x, m[p + ".w"], 2, 1), m[p + ".b"]));
        out.maps[l] = x;
    }
    const std::size_t n = tape.value(x).size();
    ad::Var flat = ad::reshape(x, {1, n});
    out.feature = ad::add_bias(ad::matmul(flat, m["enc.fc.w"]), m["enc.fc.b"]);
    return out;
}

struct LatentVars {
    ad::Var mu;         // 1 x D
    ad::Var log_sigma;  // 1 x D, clamped
};

// Rows sorted lexicographically by (x, y, z, occ) so the pooled summary is
// bit-identical under any permutation of the sample.
inline ad::Tensor canonical_point_rows(const PointSample& sample) {
    const std::size_t n = sample.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto key = [&](std::size_t i) {
        return std::array<double, 4>{sample.points[3 * i], sample.points[3 * i + 1], sample.points[3 * i + 2],
                                     static_cast<double>(sample.occupancy[i])};
    };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    ad::Tensor rows({n, 4});
    for (std::size_t r = 0; r < n; ++r) {
        const auto k = key(order[r]);
        for (std::size_t c = 0; c < 4; ++c) rows[r * 4 + c] = k[c];
    }
    return rows;
}

// With no sample the shape summary is the zero vector (inference path).
inline LatentVars encode_latent(const BoundModel& m, ad::Var feature, const PointSample* sample) {
    ad::Tape& tape = m.tape();
    ad::Var summary;
    if (sample) {
        if (sample->size() == 0) throw ad::ContractError("encode_latent: empty point sample");
        ad::Var rows = tape.constant(canonical_point_rows(*sample));
        ad::Var emb = ad::relu(ad::add_bias(ad::matmul(rows, m["lat.pt.w"]), m["lat.pt.b"]));
        summary = ad::mean_rows(emb);
    } else {
        summary = tape.constant(ad::Tensor({1, m.config().point_embed}));
    }
    ad::Var h = ad::add(ad::matmul(feature, m["lat.he.w"]), ad::matmul(summary, m["lat.hs.w"]));
    h = ad::relu(ad::add_bias(h, m["lat.h.b"]));
    LatentVars out;
    out.mu = ad::add_bias(ad::matmul(h, m["lat.mu.w"]), m["lat.mu.b"]);
    out.log_sigma = ad::clamp(ad::add_bias(ad::matmul(h, m["lat.ls.w"]), m["lat.ls.b"]), kLogSigmaMin, kLogSigmaMax);
    return out;
}

// Reparameterised draw z = mu + sigma * eps.
inline ad::Var sample_latent(ad::Var mu, ad::Var log_sigma, const std::vector<double>& eps) {
    ad::Tape& tape = *mu.tape;
    ad::Var e = tape.constant(ad::Tensor(tape.value(mu).shape(), eps));
    return ad::add(mu, ad::mul(ad::exp(log_sigma), e));
}

inline std::vector<double> standard_normal(std::size_t n, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& v : out) v = nd(rng);
    return out;
}

// Occupancy logits, N x 1. The per-object conditioning (e, z) enters the
// first layer as a bias row.
inline ad::Var decode_logits(const BoundModel& m, ad::Var feature, ad::Var z, const ad::Tensor& points) {
    ad::Tape& tape = m.tape();
    if (points.rank() != 2 || points.dim(1) != 3) throw ad::DimensionError("decode: points must be N x 3");
    ad::Var p = tape.constant(points);
    ad::Var cond = ad::add(ad::matmul(feature, m["dec.l0.we"]), ad::matmul(z, m["dec.l0.wz"]));
    cond = ad::add_bias(cond, m["dec.l0.b"]);
    ad::Var h = ad::relu(ad::add_bias(ad::matmul(p, m["dec.l0.wp"]), cond));
    for (std::size_t l = 1; l < m.config().decoder_depth; ++l) {
        const std::string name = "dec.l" + std::to_string(l);
        h = ad::relu(ad::add_bias(ad::matmul(h, m[name + ".w"]), m[name + ".b"]));
    }
    return ad::add_bias(ad::matmul(h, m["dec.out.w"]), m["dec.out.b"]);
}

inline ad::Var decode_occupancy(const BoundModel& m, ad::Var feature, ad::Var z, const ad::Tensor& points) {
    return ad::sigmoid(decode_logits(m, feature, z, points));
}

// -(1/N) sum [Y log O + (1 - Y) log(1 - O)], O clamped to [eps, 1 - eps].
inline ad::Var bce_loss(ad::Var probs, const std::vector<std::uint8_t>& targets) {
    ad::Tape& tape = *probs.tape;
    const ad::Tensor& o = tape.value(probs);
    if (targets.empty()) throw ad::ContractError("bce_loss: empty batch");
    if (o.size() != targets.size()) throw ad::DimensionError("bce_loss: prediction/target length mismatch");
    ad::Tensor y(o.shape()), not_y(o.shape());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        y[i] = targets[i] ? 1.0 : 0.0;
        not_y[i] = 1.0 - y[i];
    }
    ad::Var oc = ad::clamp(probs, kBceEps, 1.0 - kBceEps);
    ad::Var pos = ad::mul(tape.constant(std::move(y)), ad::log(oc));
    ad::Var neg = ad::mul(tape.constant(std::move(not_y)), ad::log(ad::add_scalar(ad::neg(oc), 1.0)));
    return ad::neg(ad::mean(ad::add(pos, neg)));
}

inline ad::Tensor points_tensor(const PointSample& s) { return ad::Tensor({s.size(), 3}, s.points); }

inline ad::Tensor points_tensor(const PointSample& s, const std::vector<std::size_t>& rows) {
    ad::Tensor t({rows.size(), 3});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < 3; ++c) t[r * 3 + c] = s.points[rows[r] * 3 + c];
    return t;
}

inline GaussianLatent to_gaussian(const ad::Tape& tape, const LatentVars& v) {
    GaussianLatent q;
    const auto mu = tape.value(v.mu).data();
    const auto ls = tape.value(v.log_sigma).data();
    q.mu.assign(mu.begin(), mu.end());
    q.sigma.resize(ls.size());
    for (std::size_t i = 0; i < ls.size(); ++i) q.sigma[i] = std::exp(ls[i]);
    return q;
}

// ---- value-level entry points (frozen parameters) ------------------------

struct ImageFeatures {
    std::vector<double> feature;
    std::array<ad::Tensor, 3> maps;
};

inline ImageFeatures encode_image(const ReconModel& model, const Image& img) {
    ad::Tape tape;
    BoundModel m(tape, model);
    auto enc = encode_image(m, img);
    ImageFeatures out;
    const auto f = tape.value(enc.feature).data();
    out.feature.assign(f.begin(), f.end());
    for (std::size_t i = 0; i < 3; ++i) out.maps[i] = tape.value(enc.maps[i]);
    return out;
}

inline GaussianLatent encode_latent(const ReconModel& model, const std::vector<double>& feature, const PointSample* sample) {
    ad::Tape tape;
    BoundModel m(tape, model);
    ad::Var e = tape.constant(ad::Tensor({1, feature.size()}, feature));
    return to_gaussian(tape, encode_latent(m, e, sample));
}

inline std::vector<double> sample_latent(const GaussianLatent& q, std::uint64_t seed) {
    validate(q);
    Rng rng(seed);
    const auto eps = standard_normal(q.dim(), rng);
    std::vector<double> z(q.dim());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = q.mu[i] + q.sigma[i] * eps[i];
    return z;
}

inline std::vector<double> decode_occupancy(const ReconModel& model, const std::vector<double>& feature,
                                            const std::vector<double>& z, const ad::Tensor& points) {
    ad::Tape tape;
    BoundModel m(tape, model);
    ad::Var e = tape.constant(ad::Tensor({1, feature.size()}, feature));
    ad::Var zv = tape.constant(ad::Tensor({1, z.size()}, z));
    const auto o = tape.value(decode_occupancy(m, e, zv, points)).data();
    return {o.begin(), o.end()};
}

inline double bce_loss(const std::vector<double>& probs, const std::vector<std::uint8_t>& targets) {
    ad::Tape tape;
    ad::Var o = tape.constant(ad::Tensor({probs.size()}, probs));
    return tape.value(bce_loss(o, targets)).item();
}

// Reconstruction from the image alone. z is the posterior mean, or a draw
// mu + sigma * eps when `eps` is given. Returns probabilities at `points`.
inline std::vector<double> predict_occupancy(const ReconModel& model, const Image& img, const ad::Tensor& points,
                                             const std::vector<double>* eps = nullptr) {
    ad::Tape tape;
    BoundModel m(tape, model);
    auto enc = encode_image(m, img);
    auto lat = encode_latent(m, enc.feature, nullptr);
    ad::Var z = eps ? sample_latent(lat.mu, lat.log_sigma, *eps) : lat.mu;
    const auto o = tape.value(decode_occupancy(m, enc.feature, z, points)).data();
    return {o.begin(), o.end()};
}

// ---- CREC checkpoints -----------------------------------------------------
//
// "CREC" | u16 version | u32 D | u32 x 6 model config | u32 layer count |
// per layer: u16 name length, name, u8 rank, u32 dims... | raw f64 blocks in
// table order | u32 blob length | blob. Little-endian.

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw IoError("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const ReconModel& model, const std::string& blob = {}) {
    using detail::put;
    std::string out = "CREC";
    put<std::uint16_t>(out, kCheckpointVersion);
    const auto& c = model.config;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.latent_dim));
    for (std::size_t v : {c.image_size, c.feature_dim, c.decoder_width, c.decoder_depth, c.point_embed, c.latent_hidden})
        put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    std::uint32_t layers = 0;
    for (const auto* s : model.sets()) layers += static_cast<std::uint32_t>(s->size());
    put<std::uint32_t>(out, layers);
    for (const auto* s : model.sets())
        for (std::size_t i = 0; i < s->size(); ++i) {
            const auto& name = s->name(i);
            put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
            out += name;
            const auto& shape = s->at(i).shape();
            put<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
            for (auto d : shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
    for (const auto* s : model.sets())
        for (std::size_t i = 0; i < s->size(); ++i)
            for (double v : s->at(i).data()) put<double>(out, v);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
    out += blob;
    return out;
}

struct Checkpoint {
    ReconModel model;
    std::string blob;
};

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    using detail::take;
    if (bytes.size() < 4 || bytes.compare(0, 4, "CREC") != 0) throw IoError("not a CREC checkpoint");
    std::size_t pos = 4;
    const auto version = take<std::uint16_t>(bytes, pos);
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    ModelConfig c;
    c.latent_dim = take<std::uint32_t>(bytes, pos);
    c.image_size = take<std::uint32_t>(bytes, pos);
    c.feature_dim = take<std::uint32_t>(bytes, pos);
    c.decoder_width = take<std::uint32_t>(bytes, pos);
    c.decoder_depth = take<std::uint32_t>(bytes, pos);
    c.point_embed = take<std::uint32_t>(bytes, pos);
    c.latent_hidden = take<std::uint32_t>(bytes, pos);
    Checkpoint ck{init_model(c, 0), {}};
    const auto layers = take<std::uint32_t>(bytes, pos);
    std::vector<std::pair<std::string, ad::Shape>> table;
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto len = take<std::uint16_t>(bytes, pos);
        if (pos + len > bytes.size()) throw IoError("checkpoint truncated");
        std::string name = bytes.substr(pos, len);
        pos += len;
        const auto rank = take<std::uint8_t>(bytes, pos);
        ad::Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(take<std::uint32_t>(bytes, pos));
        table.emplace_back(std::move(name), std::move(shape));
    }
    std::size_t expected = 0;
    for (const auto* s : ck.model.sets()) expected += s->size();
    if (table.size() != expected) throw IoError("checkpoint layer table does not match model config");
    std::size_t k = 0;
    for (auto* s : ck.model.sets())
        for (std::size_t i = 0; i < s->size(); ++i, ++k) {
            if (table[k].first != s->name(i) || table[k].second != s->at(i).shape()) {
                throw IoError("checkpoint layer " + table[k].first + " does not match model layout");
            }
        }
    for (auto* s : ck.model.sets())
        for (std::size_t i = 0; i < s->size(); ++i)
            for (auto& v : s->at(i).data()) v = take<double>(bytes, pos);
    const auto blob_len = take<std::uint32_t>(bytes, pos);
    if (pos + blob_len != bytes.size()) throw IoError("checkpoint trailing bytes");
    ck.blob = bytes.substr(pos, blob_len);
    return ck;
}

}  // namespace contrec
