#pragma once

// Attention saliency over the encoder's feature maps, patch harvesting,
// pseudo-image regeneration, and the replay buffer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contrec/autodiff.hpp"
#include "contrec/image.hpp"
#include "contrec/model.hpp"
#include "contrec/shapes.hpp"
#include "contrec/util.hpp"

namespace contrec {

enum class CompatMode { Dot, Additive };

inline CompatMode parse_compat(const std::string& s) {
    if (s == "dot") return CompatMode::Dot;
    if (s == "additive") return CompatMode::Additive;
    throw ConfigError("unknown saliency mode '" + s + "'");
}

struct SaliencyMap {
    std::size_t layer = 0;           // 1..3
    Image values;                    // source image size, max-normalised
    std::vector<double> attention;   // softmax over feature positions
    std::size_t fh = 0, fw = 0;      // feature map size
};

// Softmax attention over the positions of a C x h x w map given a global
// vector of length C.
inline std::vector<double> spatial_attention(const ad::Tensor& map, const std::vector<double>& g, CompatMode mode) {
    if (map.rank() != 3 || map.dim(0) != g.size()) throw ad::DimensionError("spatial_attention: map/global shape mismatch");
    const std::size_t c = map.dim(0), n = map.dim(1) * map.dim(2);
    std::vector<double> score(n, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < n; ++i) {
            const double l = map[ch * n + i];
            score[i] += mode == CompatMode::Dot ? l * g[ch] : l + g[ch];
        }
    return ad::softmax_values(score);
}

inline SaliencyMap attention_to_map(std::vector<double> attention, std::size_t fh, std::size_t fw, std::size_t layer,
                                    std::size_t height, std::size_t width) {
    SaliencyMap s{layer, Image(width, height), std::move(attention), fh, fw};
    double peak = 0.0;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t sy = std::min(y * fh / height, fh - 1), sx = std::min(x * fw / width, fw - 1);
            s.values.at(x, y) = s.attention[sy * fw + sx];
            peak = std::max(peak, s.values.at(x, y));
        }
    if (peak > 0.0)
        for (auto& v : s.values.pixels) v /= peak;
    return s;
}

// The global vector for layer s is the projection of e onto that layer's
// channel dimension.
inline std::array<SaliencyMap, 3> compute_saliency(const ReconModel& model, const Image& img, CompatMode mode) {
    const auto feats = encode_image(model, img);
    std::array<SaliencyMap, 3> out;
    for (std::size_t s = 0; s < 3; ++s) {
        const ad::Tensor& proj = model.encoder["enc.att" + std::to_string(s + 1) + ".proj"];
        const std::size_t c = proj.dim(0), d = proj.dim(1);
        std::vector<double> g(c, 0.0);
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t k = 0; k < d; ++k) g[i] += proj[i * d + k] * feats.feature[k];
        const auto& map = feats.maps[s];
        out[s] = attention_to_map(spatial_attention(map, g, mode), map.dim(1), map.dim(2), s + 1, img.height, img.width);
    }
    return out;
}

// Mean of the layer maps, renormalised to a peak of 1.
inline Image global_saliency(const std::array<SaliencyMap, 3>& maps) {
    Image g(maps[0].values.width, maps[0].values.height);
    for (const auto& m : maps)
        for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] += m.values.pixels[i] / 3.0;
    const double peak = *std::max_element(g.pixels.begin(), g.pixels.end());
    if (peak > 0.0)
        for (auto& v : g.pixels) v /= peak;
    return g;
}

using Mask = std::vector<std::uint8_t>;

inline Mask threshold_mask(const Image& map, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("replay.tau must lie in (0, 1)");
    Mask m(map.pixels.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = map.pixels[i] >= tau;
    return m;
}

// Half-open pixel box [x0, x1) x [y0, y1).
struct BBox {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    std::size_t width() const { return x1 - x0; }
    std::size_t height() const { return y1 - y0; }
    std::size_t area() const { return width() * height(); }
    friend bool operator==(const BBox&, const BBox&) = default;
};

struct Patch {
    Image pixels;
    BBox box;
    friend bool operator==(const Patch&, const Patch&) = default;
};

inline Image crop(const Image& img, const BBox& b) {
    Image out(b.width(), b.height());
    for (std::size_t y = 0; y < b.height(); ++y)
        for (std::size_t x = 0; x < b.width(); ++x) out.at(x, y) = img.at(b.x0 + x, b.y0 + y);
    return out;
}

// 4-connected components of the mask, ranked by summed saliency (ties by
// raster order of discovery), top `max_patches` cropped from the image.
inline std::vector<Patch> extract_local_patches(const Image& img, const Mask& mask, const Image& saliency, std::size_t max_patches) {
    if (mask.size() != img.pixels.size() || saliency.pixels.size() != img.pixels.size()) {
        throw ad::DimensionError("extract_local_patches: mask/saliency dims differ from image");
    }
    const std::size_t w = img.width, h = img.height;
    std::vector<int> label(mask.size(), -1);
    struct Component {
        BBox box;
        double score;
        std::size_t order;
    };
    std::vector<Component> comps;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || label[start] >= 0) continue;
        const int id = static_cast<int>(comps.size());
        Component c{{start % w, start / w, start % w + 1, start / w + 1}, 0.0, comps.size()};
        stack.assign(1, start);
        label[start] = id;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t x = p % w, y = p / w;
            c.score += saliency.pixels[p];
            c.box.x0 = std::min(c.box.x0, x);
            c.box.y0 = std::min(c.box.y0, y);
            c.box.x1 = std::max(c.box.x1, x + 1);
            c.box.y1 = std::max(c.box.y1, y + 1);
            auto visit = [&](std::size_t q) {
                if (mask[q] && label[q] < 0) {
                    label[q] = id;
                    stack.push_back(q);
                }
            };
            if (x > 0) visit(p - 1);
            if (x + 1 < w) visit(p + 1);
            if (y > 0) visit(p - w);
            if (y + 1 < h) visit(p + w);
        }
        comps.push_back(c);
    }
    std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) { return a.score > b.score; });
    if (comps.size() > max_patches) comps.resize(max_patches);
    std::vector<Patch> out;
    for (const auto& c : comps) out.push_back({crop(img, c.box), c.box});
    return out;
}

// ---- replay entries ---------------------------------------------------------

enum class ReplayStrategy { Exact, ZeroPad, CompAndInt, RandomPatch, Compressed };

inline constexpr std::array<std::string_view, 5> kStrategyNames = {"EXACT", "ZERO_PAD", "COMP_AND_INT", "RANDOM_PATCH", "COMPRESSED"};

inline std::string strategy_name(ReplayStrategy s) { return std::string(kStrategyNames.at(static_cast<std::size_t>(s))); }

inline ReplayStrategy parse_strategy(std::string_view s) {
    for (std::size_t i = 0; i < kStrategyNames.size(); ++i)
        if (kStrategyNames[i] == s) return static_cast<ReplayStrategy>(i);
    throw ConfigError("replay.strategy: unknown strategy '" + std::string(s) + "'");
}

// EXACT and ZERO_PAD read the same saliency patches.
inline int entry_layout(ReplayStrategy s) {
    switch (s) {
        case ReplayStrategy::Exact:
        case ReplayStrategy::ZeroPad: return 0;
        case ReplayStrategy::RandomPatch: return 1;
        case ReplayStrategy::CompAndInt: return 2;
        case ReplayStrategy::Compressed: return 3;
    }
    return -1;
}

struct ReplayEntry {
    std::string cls;
    ReplayStrategy strategy = ReplayStrategy::Exact;
    std::size_t k = 4;
    std::size_t width = 0, height = 0;
    Image global;                // full-size saliency map
    std::vector<Patch> patches;  // EXACT, ZERO_PAD, RANDOM_PATCH
    Image compact;               // COMP_AND_INT, COMPRESSED
    PointSample sample;

    std::size_t stored_pixels() const {
        std::size_t n = global.pixels.size() + compact.pixels.size();
        for (const auto& p : patches) n += p.pixels.pixels.size();
        return n;
    }

    friend bool operator==(const ReplayEntry&, const ReplayEntry&) = default;
};

inline std::size_t replay_budget(std::size_t k, std::size_t height, std::size_t width, std::size_t res) {
    return k * height * width + res * res * res;
}

struct EntryOptions {
    ReplayStrategy strategy = ReplayStrategy::Exact;
    std::size_t k = 4;
    double tau = 0.5;
};

inline ReplayEntry make_entry(const std::string& cls, const Image& img, const std::array<SaliencyMap, 3>& maps, const PointSample& sample,
                              const EntryOptions& opt, std::uint64_t seed) {
    if (opt.k < 1) throw ConfigError("replay.k_maps must be >= 1");
    ReplayEntry e;
    e.cls = cls;
    e.strategy = opt.strategy;
    e.k = opt.k;
    e.width = img.width;
    e.height = img.height;
    e.global = global_saliency(maps);
    e.sample = sample;
    const Image& drive = maps[2].values;
    const Mask mask = threshold_mask(drive, opt.tau);
    switch (opt.strategy) {
        case ReplayStrategy::Exact:
        case ReplayStrategy::ZeroPad: e.patches = extract_local_patches(img, mask, drive, opt.k - 1); break;
        case ReplayStrategy::RandomPatch: {
            Rng rng(seed);
            for (const auto& p : extract_local_patches(img, mask, drive, opt.k - 1)) {
                BBox b;
                b.x0 = std::uniform_int_distribution<std::size_t>(0, img.width - p.box.width())(rng);
                b.y0 = std::uniform_int_distribution<std::size_t>(0, img.height - p.box.height())(rng);
                b.x1 = b.x0 + p.box.width();
                b.y1 = b.y0 + p.box.height();
                e.patches.push_back({crop(img, b), b});
            }
            break;
        }
        case ReplayStrategy::CompAndInt: {
            Image masked = img;
            for (std::size_t i = 0; i < masked.pixels.size(); ++i)
                if (!mask[i]) masked.pixels[i] = 0.0;
            e.compact = downsample(masked, 2);
            break;
        }
        case ReplayStrategy::Compressed: e.compact = downsample(img, 4); break;
    }
    return e;
}

namespace detail {

// Patches on a canvas filled with the mean stored pixel; a band of radius 2
// around them is filled by iterated 3x3 averaging of determined neighbours.
inline Image place_with_band(const ReplayEntry& e) {
    const std::size_t w = e.width, h = e.height;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& p : e.patches)
        for (double v : p.pixels.pixels) {
            sum += v;
            ++count;
        }
    const double fill = count ? sum / static_cast<double>(count) : 0.0;
    Image out(w, h, fill);
    std::vector<std::uint8_t> placed(w * h, 0);
    for (const auto& p : e.patches)
        for (std::size_t y = 0; y < p.box.height(); ++y)
            for (std::size_t x = 0; x < p.box.width(); ++x) {
                out.at(p.box.x0 + x, p.box.y0 + y) = p.pixels.at(x, y);
                placed[(p.box.y0 + y) * w + p.box.x0 + x] = 1;
            }
    constexpr long kBand = 2;
    std::vector<std::uint8_t> band(w * h, 0), known(w * h, 1);
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
            if (placed[y * w + x]) continue;
            for (long dy = -kBand; dy <= kBand && !band[y * w + x]; ++dy)
                for (long dx = -kBand; dx <= kBand; ++dx) {
                    const long nx = x + dx, ny = y + dy;
                    if (nx >= 0 && ny >= 0 && nx < static_cast<long>(w) && ny < static_cast<long>(h) && placed[ny * w + nx]) {
                        band[y * w + x] = 1;
                        break;
                    }
                }
            if (band[y * w + x]) known[y * w + x] = 0;
        }
    for (int iter = 0; iter < 10000; ++iter) {
        Image next = out;
        std::vector<std::uint8_t> next_known = known;
        double delta = 0.0;
        for (long y = 0; y < static_cast<long>(h); ++y)
            for (long x = 0; x < static_cast<long>(w); ++x) {
                if (!band[y * w + x]) continue;
                double s = 0.0;
                int n = 0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long nx = x + dx, ny = y + dy;
                        if ((dx || dy) && nx >= 0 && ny >= 0 && nx < static_cast<long>(w) && ny < static_cast<long>(h) && known[ny * w + nx]) {
                            s += out.at(nx, ny);
                            ++n;
                        }
                    }
                if (!n) continue;
                const double v = s / n;
                delta = std::max(delta, known[y * w + x] ? std::abs(v - out.at(x, y)) : 1.0);
                next.at(x, y) = v;
                next_known[y * w + x] = 1;
            }
        out = std::move(next);
        known = std::move(next_known);
        if (delta < 1e-12) break;
    }
    return out;
}

}  // namespace detail

// All pseudo images an entry yields under `strategy` (ZERO_PAD: one per patch).
inline std::vector<Image> regenerate_all(const ReplayEntry& e, ReplayStrategy strategy) {
    if (entry_layout(strategy) != entry_layout(e.strategy)) {
        throw ad::ContractError("regenerate_pseudo: entry stored for " + strategy_name(e.strategy) + " cannot regenerate as " +
                                strategy_name(strategy));
    }
    switch (strategy) {
        case ReplayStrategy::Exact:
        case ReplayStrategy::RandomPatch: return {detail::place_with_band(e)};
        case ReplayStrategy::ZeroPad: {
            std::vector<Image> out;
            for (const auto& p : e.patches) {
                Image img(e.width, e.height);
                for (std::size_t y = 0; y < p.box.height(); ++y)
                    for (std::size_t x = 0; x < p.box.width(); ++x) img.at(p.box.x0 + x, p.box.y0 + y) = p.pixels.at(x, y);
                out.push_back(std::move(img));
            }
            if (out.empty()) out.emplace_back(e.width, e.height);
            return out;
        }
        case ReplayStrategy::CompAndInt:
        case ReplayStrategy::Compressed: return {upsample_bilinear(e.compact, e.width, e.height)};
    }
    return {};
}

inline Image regenerate_pseudo(const ReplayEntry& e, ReplayStrategy strategy, std::size_t variant = 0) {
    auto all = regenerate_all(e, strategy);
    return std::move(all.at(variant % all.size()));
}

inline Image regenerate_pseudo(const ReplayEntry& e) { return regenerate_pseudo(e, e.strategy); }

// ---- buffer -----------------------------------------------------------------

struct BufferConfig {
    ReplayStrategy strategy = ReplayStrategy::Exact;
    std::size_t k = 4;
    std::size_t height = 32, width = 32;
    std::size_t res = 16;
    std::size_t objects_per_class = 0;  // 0: unlimited

    std::size_t n_b() const { return replay_budget(k, height, width, res); }
};

struct BufferReport {
    std::size_t n_b = 0;
    std::size_t objects = 0;
    std::size_t total_units = 0;
    std::map<std::string, std::size_t> per_class_units;
};

struct ReplaySample {
    Image image;
    const PointSample* sample = nullptr;
    std::string cls;
};

class ReplayBuffer {
public:
    ReplayBuffer() = default;
    explicit ReplayBuffer(BufferConfig cfg) : cfg_(cfg) {}

    const BufferConfig& config() const { return cfg_; }
    const std::vector<ReplayEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t units() const { return units_; }

    void insert(ReplayEntry e) {
        const std::size_t n_b = cfg_.n_b();
        if (e.width != cfg_.width || e.height != cfg_.height) {
            throw ad::ContractError("buffer_insert: entry image size does not match buffer");
        }
        if (e.k != cfg_.k || entry_layout(e.strategy) != entry_layout(cfg_.strategy)) {
            throw ad::ContractError("buffer_insert: entry layout does not match buffer configuration");
        }
        if (e.stored_pixels() > cfg_.k * cfg_.height * cfg_.width) {
            throw CapacityError("buffer_insert: class '" + e.cls + "' entry needs " + std::to_string(e.stored_pixels()) +
                                " pixels, budget is " + std::to_string(cfg_.k * cfg_.height * cfg_.width));
        }
        if (cfg_.objects_per_class) {
            const auto it = per_class_.find(e.cls);
            const std::size_t have = it == per_class_.end() ? 0 : it->second.size();
            if (have + 1 > cfg_.objects_per_class) {
                throw CapacityError("buffer_insert: class '" + e.cls + "' requests " + std::to_string((have + 1) * n_b) +
                                    " units, budget is " + std::to_string(cfg_.objects_per_class * n_b));
            }
        }
        per_class_[e.cls].push_back(entries_.size());
        entries_.push_back(std::move(e));
        units_ += n_b;
    }

    BufferReport report() const {
        BufferReport r;
        r.n_b = cfg_.n_b();
        r.objects = entries_.size();
        for (const auto& e : entries_) {
            r.per_class_units[e.cls] += r.n_b;
            r.total_units += r.n_b;
        }
        return r;
    }

    // Class drawn uniformly, then an entry of that class uniformly.
    std::vector<ReplaySample> replay(std::size_t n, std::uint64_t seed) const {
        std::vector<ReplaySample> out;
        if (entries_.empty() || n == 0) return out;
        Rng rng(seed);
        std::vector<const std::vector<std::size_t>*> classes;
        for (const auto& [cls, idx] : per_class_) classes.push_back(&idx);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& idx = *classes[std::uniform_int_distribution<std::size_t>(0, classes.size() - 1)(rng)];
            const ReplayEntry& e = entries_[idx[std::uniform_int_distribution<std::size_t>(0, idx.size() - 1)(rng)]];
            auto images = regenerate_all(e, cfg_.strategy);
            const std::size_t v = std::uniform_int_distribution<std::size_t>(0, images.size() - 1)(rng);
            out.push_back({std::move(images[v]), &e.sample, e.cls});
        }
        return out;
    }

    friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) { return a.entries_ == b.entries_ && a.units_ == b.units_; }

private:
    BufferConfig cfg_;
    std::vector<ReplayEntry> entries_;
    std::map<std::string, std::vector<std::size_t>> per_class_;
    std::size_t units_ = 0;
};

inline BufferReport buffer_size(const ReplayBuffer& buf) { return buf.report(); }

// One directory per entry: global.pgm, patch_<i>.pgm or compact.pgm,
// points.csv and meta.json. Pixels come back quantised to 8 bits.
inline void write_buffer(const ReplayBuffer& buf, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto& entries = buf.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const std::string edir = dir + "/entry_" + std::to_string(i);
        fs::create_directories(edir);
        write_file(edir + "/global.pgm", encode_pgm(e.global));
        nlohmann::ordered_json meta;
        meta["class"] = e.cls;
        meta["k"] = e.k;
        meta["bboxes"] = nlohmann::ordered_json::array();
        for (std::size_t p = 0; p < e.patches.size(); ++p) {
            const auto& b = e.patches[p].box;
            meta["bboxes"].push_back({b.x0, b.y0, b.x1, b.y1});
            write_file(edir + "/patch_" + std::to_string(p) + ".pgm", encode_pgm(e.patches[p].pixels));
        }
        meta["n_b"] = buf.config().n_b();
        meta["strategy"] = strategy_name(e.strategy);
        meta["width"] = e.width;
        meta["height"] = e.height;
        if (!e.compact.pixels.empty()) write_file(edir + "/compact.pgm", encode_pgm(e.compact));
        write_file(edir + "/points.csv", encode_points_csv(e.sample));
        write_file(edir + "/meta.json", meta.dump(2) + "\n");
    }
}

inline ReplayBuffer read_buffer(const std::string& dir, const BufferConfig& cfg) {
    namespace fs = std::filesystem;
    ReplayBuffer buf(cfg);
    for (std::size_t i = 0;; ++i) {
        const std::string edir = dir + "/entry_" + std::to_string(i);
        if (!fs::exists(edir)) break;
        const auto meta = nlohmann::json::parse(read_file(edir + "/meta.json"));
        ReplayEntry e;
        e.cls = meta.at("class").get<std::string>();
        e.k = meta.at("k").get<std::size_t>();
        e.strategy = parse_strategy(meta.at("strategy").get<std::string>());
        e.width = meta.at("width").get<std::size_t>();
        e.height = meta.at("height").get<std::size_t>();
        if (meta.at("n_b").get<std::size_t>() != cfg.n_b()) throw IoError("buffer entry " + edir + ": n_b does not match configuration");
        e.global = decode_pgm(read_file(edir + "/global.pgm"));
        const auto& boxes = meta.at("bboxes");
        for (std::size_t p = 0; p < boxes.size(); ++p) {
            const auto b = boxes[p].get<std::array<std::size_t, 4>>();
            e.patches.push_back({decode_pgm(read_file(edir + "/patch_" + std::to_string(p) + ".pgm")), {b[0], b[1], b[2], b[3]}});
        }
        if (fs::exists(edir + "/compact.pgm")) e.compact = decode_pgm(read_file(edir + "/compact.pgm"));
        e.sample = decode_points_csv(read_file(edir + "/points.csv"));
        buf.insert(std::move(e));
    }
    return buf;
}

}  // namespace contrec
