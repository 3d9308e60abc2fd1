#pragma once

// Session-by-session training: current data plus replayed pseudo-images,
// BCE plus the prior KL, SGD with momentum and a step schedule; prior
// distillation and buffer filling at each session close; cumulative
// evaluation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "contrec/autodiff.hpp"
#include "contrec/metrics.hpp"
#include "contrec/model.hpp"
#include "contrec/priors.hpp"
#include "contrec/saliency.hpp"
#include "contrec/shapes.hpp"
#include "contrec/util.hpp"

namespace contrec {

struct Schedule {
    double base_lr = 1e-3;
    double drop_factor = 0.2;
    std::vector<double> drops = {0.3125, 0.4375, 0.5625, 0.6875};
    std::size_t epochs = 80;

    void validate() const {
        if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("train.lr must be positive");
        if (!(drop_factor > 0.0 && drop_factor <= 1.0)) throw ConfigError("train.drop_factor must lie in (0, 1]");
        for (std::size_t i = 0; i < drops.size(); ++i) {
            if (!(drops[i] > 0.0 && drops[i] < 1.0) || (i && drops[i] <= drops[i - 1])) {
                throw ConfigError("train.drops must be strictly increasing in (0, 1)");
            }
        }
    }
};

// base * factor^(drop points passed); a drop at fraction f takes effect from
// epoch round(f * epochs).
inline double lr_at(const Schedule& s, std::size_t epoch) {
    double lr = s.base_lr;
    for (double f : s.drops)
        if (static_cast<double>(epoch) >= std::round(f * static_cast<double>(s.epochs))) lr *= s.drop_factor;
    return lr;
}

struct TrainConfig {
    std::size_t epochs = 25;
    std::size_t first_session_epochs = 0;  // 0: same as epochs
    std::size_t batch = 8;
    double lr = 1e-3;
    double drop_factor = 0.2;
    std::vector<double> drops = {0.3125, 0.4375, 0.5625, 0.6875};
    double momentum = 0.9;
    double clip_norm = 0.0;  // global gradient norm cap, 0: off
    double kl_weight = 1.0;
    double replay_ratio = 0.5;
    std::size_t points_per_step = 256;
    double summary_dropout = 0.5;
    bool sample_eval_latent = false;

    Schedule schedule(std::size_t session) const {
        return {lr, drop_factor, drops, session == 0 && first_session_epochs ? first_session_epochs : epochs};
    }
};

struct ReplayConfig {
    ReplayStrategy strategy = ReplayStrategy::Exact;
    std::size_t k_maps = 4;
    double tau = 0.5;
    std::size_t m_priors = kDefaultPriorsPerClass;
    std::size_t objects_per_class = 0;  // 0: every training object
    CompatMode saliency = CompatMode::Dot;
    std::size_t attention_steps = 200;
    double attention_step_size = 0.05;
};

struct TrainState {
    std::size_t session = 0;  // next session to train
    ReconModel model;
    std::vector<std::vector<double>> velocity;
    std::size_t epoch = 0;  // epochs completed in the current session
    Rng rng;
};

inline TrainState init_state(const ModelConfig& cfg, std::uint64_t seed) {
    TrainState s;
    s.model = init_model(cfg, derive_seed(seed, tag("init")));
    s.rng.seed(derive_seed(seed, tag("train")));
    return s;
}

// Checkpoint blob: session counter and generator state.
inline std::string state_blob(const TrainState& s) { return "session " + std::to_string(s.session) + "\n" + rng_state(s.rng); }

inline std::string encode_state(const TrainState& s) { return encode_checkpoint(s.model, state_blob(s)); }

inline TrainState decode_state(const std::string& bytes) {
    Checkpoint ck = decode_checkpoint(bytes);
    TrainState s;
    s.model = std::move(ck.model);
    const auto nl = ck.blob.find('\n');
    if (ck.blob.rfind("session ", 0) != 0 || nl == std::string::npos) throw IoError("checkpoint state blob is malformed");
    s.session = std::stoul(ck.blob.substr(8, nl - 8));
    set_rng_state(s.rng, ck.blob.substr(nl + 1));
    return s;
}

// ---- per-object loss ------------------------------------------------------

struct TrainItem {
    const Image* image = nullptr;
    const PointSample* sample = nullptr;
};

struct ItemDraw {
    std::vector<std::size_t> rows;  // point subset
    std::vector<double> eps;        // latent noise
    bool use_summary = true;
};

inline ItemDraw draw_item(const TrainItem& item, const TrainConfig& cfg, std::size_t latent_dim, std::uint64_t seed) {
    Rng rng(seed);
    ItemDraw d;
    const std::size_t n = item.sample->size();
    const std::size_t m = std::min(cfg.points_per_step ? cfg.points_per_step : n, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[std::uniform_int_distribution<std::size_t>(i, n - 1)(rng)]);
    d.rows.assign(idx.begin(), idx.begin() + static_cast<long>(m));
    d.eps = standard_normal(latent_dim, rng);
    d.use_summary = std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= cfg.summary_dropout;
    return d;
}

struct ItemLoss {
    ad::Var bce;
    std::optional<ad::Var> kl;
};

// BCE on the drawn point subset, plus KL(q || prior) when a prior is given.
inline ItemLoss item_loss(const BoundModel& m, const TrainItem& item, const ItemDraw& d, const GaussianLatent* prior) {
    auto enc = encode_image(m, *item.image);
    auto lat = encode_latent(m, enc.feature, d.use_summary ? item.sample : nullptr);
    ad::Var z = sample_latent(lat.mu, lat.log_sigma, d.eps);
    std::vector<std::uint8_t> y(d.rows.size());
    for (std::size_t r = 0; r < d.rows.size(); ++r) y[r] = item.sample->occupancy[d.rows[r]];
    ItemLoss out{bce_loss(decode_occupancy(m, enc.feature, z, points_tensor(*item.sample, d.rows)), y), std::nullopt};
    if (prior) out.kl = kl_to_fixed(lat.mu, lat.log_sigma, *prior);
    return out;
}

// mean BCE + kl_weight * mean KL over the batch.
inline ad::Var batch_loss(const BoundModel& m, const std::vector<TrainItem>& items, const std::vector<ItemDraw>& draws,
                          const GaussianLatent* prior, double kl_weight) {
    if (items.empty()) throw ad::ContractError("batch_loss: empty batch");
    ad::Var bce, kl;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto l = item_loss(m, items[i], draws[i], prior);
        bce = i ? ad::add(bce, l.bce) : l.bce;
        if (l.kl) kl = i ? ad::add(kl, *l.kl) : *l.kl;
    }
    const double inv = 1.0 / static_cast<double>(items.size());
    ad::Var loss = ad::scale(bce, inv);
    if (prior) loss = ad::add(loss, ad::scale(kl, kl_weight * inv));
    return loss;
}

inline void sgd_step(ReconModel& model, std::vector<std::vector<double>>& velocity, double lr, double momentum, double clip_norm = 0.0) {
    std::size_t k = 0;
    std::vector<ad::Tensor*> params;
    for (auto* s : model.sets())
        for (std::size_t i = 0; i < s->size(); ++i) params.push_back(&s->at(i));
    double scale = 1.0;
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (auto* p : params)
            for (double g : p->grad()) sq += g * g;
        if (std::sqrt(sq) > clip_norm) scale = clip_norm / std::sqrt(sq);
    }
    if (velocity.size() != params.size()) {
        velocity.clear();
        for (auto* p : params) velocity.emplace_back(p->size(), 0.0);
    }
    for (auto* p : params) {
        auto& v = velocity[k++];
        const auto& g = p->grad();
        for (std::size_t i = 0; i < p->size(); ++i) {
            v[i] = momentum * v[i] + scale * g[i];
            (*p)[i] -= lr * v[i];
            if (!std::isfinite((*p)[i])) throw ad::NumericError("sgd_step: parameter became non-finite");
        }
    }
}

// Shuffled training order for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// ---- evaluation -------------------------------------------------------------

inline std::size_t eval_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CONTREC_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end || v < 1) throw ConfigError("CONTREC_THREADS must be a positive integer, got '" + std::string(env) + "'");
        n = std::min(n, static_cast<std::size_t>(v));
    }
    return n;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; !failed && (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline ad::Tensor voxel_centres(std::size_t res) {
    ad::Tensor pts({res * res * res, 3});
    VoxelGrid g(res);
    for (std::size_t z = 0; z < res; ++z)
        for (std::size_t y = 0; y < res; ++y)
            for (std::size_t x = 0; x < res; ++x) {
                const std::size_t i = (z * res + y) * res + x;
                pts[3 * i] = g.center(x);
                pts[3 * i + 1] = g.center(y);
                pts[3 * i + 2] = g.center(z);
            }
    return pts;
}

// Occupancy probabilities on the voxel centres of the instance's grid. With
// a sample seed the latent is drawn instead of taken at its mean.
inline std::vector<double> predict_grid(const ReconModel& model, const Instance& inst, std::optional<std::uint64_t> sample_seed = std::nullopt) {
    if (!sample_seed) return predict_occupancy(model, inst.view.image, voxel_centres(inst.grid.res));
    Rng rng(derive_seed(*sample_seed, inst.seed));
    const auto eps = standard_normal(model.config.latent_dim, rng);
    return predict_occupancy(model, inst.view.image, voxel_centres(inst.grid.res), &eps);
}

// Per session j <= last, class -> mean IOU over that class's test objects.
inline std::vector<IouMatrix::ClassIous> evaluate_cumulative(const ReconModel& model, const std::vector<SessionDataset>& sessions,
                                                             std::size_t last, std::size_t threads = eval_threads(),
                                                             std::optional<std::uint64_t> sample_seed = std::nullopt) {
    if (last >= sessions.size()) throw ad::ContractError("evaluate_cumulative: session out of range");
    std::vector<const Instance*> objects;
    for (std::size_t j = 0; j <= last; ++j)
        for (const auto& inst : sessions[j].test) objects.push_back(&inst);
    std::vector<double> iou(objects.size());
    parallel_for(objects.size(), threads,
                 [&](std::size_t i) { iou[i] = voxel_iou(predict_grid(model, *objects[i], sample_seed), objects[i]->grid.occ); });

    std::vector<IouMatrix::ClassIous> out(last + 1);
    std::size_t k = 0;
    for (std::size_t j = 0; j <= last; ++j) {
        std::map<std::string, std::pair<double, std::size_t>> acc;
        for (const auto& inst : sessions[j].test) {
            auto& a = acc[class_name(inst.cls)];
            a.first += iou[k++];
            ++a.second;
        }
        for (const auto& [cls, a] : acc) out[j][cls] = a.first / static_cast<double>(a.second);
    }
    return out;
}

// ---- sessions -----------------------------------------------------------------

struct SessionReport {
    std::size_t session = 0;
    std::size_t epochs = 0;
    double final_loss = 0.0;
    std::map<std::string, double> per_class_iou;
    std::size_t bank_size = 0;
    std::size_t buffer_units = 0;
    double attention_loss = 0.0;
    std::vector<double> epoch_losses;
};

inline std::string encode_session_report(const SessionReport& r) {
    nlohmann::ordered_json js;
    js["session"] = r.session;
    js["epochs"] = r.epochs;
    js["final_loss"] = r.final_loss;
    js["per_class_iou"] = nlohmann::ordered_json::object();
    for (const auto& [cls, v] : r.per_class_iou) js["per_class_iou"][cls] = v;
    js["bank_size"] = r.bank_size;
    js["buffer_units"] = r.buffer_units;
    return js.dump(2) + "\n";
}

struct ContinualState {
    TrainState train;
    PriorBank bank;
    AttentionWeights attention;
    ReplayBuffer buffer;
};

// Latents of training objects under the current model, with the point
// summary (the posterior G is trained to produce).
inline std::vector<GaussianLatent> training_latents(const ReconModel& model, const std::vector<const Instance*>& objects) {
    std::vector<GaussianLatent> out;
    for (const auto* inst : objects) {
        const auto f = encode_image(model, inst->view.image);
        out.push_back(encode_latent(model, f.feature, &inst->sample));
    }
    return out;
}

using StepObserver = std::function<void(std::size_t epoch, std::size_t step, double loss)>;

// Per-session randomness is drawn from the state's RNG.
inline SessionReport run_session(ContinualState& st, const SessionDataset& session, const TrainConfig& cfg, const ReplayConfig& rcfg,
                                 const StepObserver& observe = {}) {
    TrainState& ts = st.train;
    const std::size_t t = session.index;
    if (t != ts.session) {
        throw ad::ContractError("run_session: expected session " + std::to_string(ts.session) + ", got " + std::to_string(t));
    }
    if (session.train.empty()) throw ConfigError("run_session: session " + std::to_string(t) + " has no training objects");
    if (cfg.batch == 0) throw ConfigError("train.batch must be >= 1");
    const Schedule sched = cfg.schedule(t);
    sched.validate();
    const std::uint64_t sseed = ts.rng();
    SessionReport report;
    report.session = t;
    report.epochs = sched.epochs;

    std::vector<const Instance*> current;
    for (const auto& inst : session.train) current.push_back(&inst);

    // Attention over the stored priors is fitted to this session's latents
    // before training, so the KL target is fixed throughout the session.
    const bool use_prior = t > 0 && cfg.kl_weight > 0.0 && !st.bank.empty();
    std::optional<GaussianLatent> prior;
    if (use_prior) {
        AttentionFitOptions opt;
        opt.steps = rcfg.attention_steps;
        opt.step_size = rcfg.attention_step_size;
        auto fit = fit_attention(st.bank, training_latents(ts.model, current), opt);
        st.attention = fit.weights;
        report.attention_loss = fit.final_loss;
        prior = combine_priors(st.bank, st.attention);
    }
    const bool use_replay = t > 0 && cfg.replay_ratio > 0.0 && !st.buffer.empty();

    ts.velocity.clear();
    ts.epoch = 0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < sched.epochs; ++epoch) {
        const double lr = lr_at(sched, epoch);
        const auto order = epoch_order(current.size(), derive_seed(sseed, tag("epoch"), epoch));
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch, ++step) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
            std::vector<TrainItem> items;
            for (std::size_t i = b0; i < b1; ++i) items.push_back({&current[order[i]]->view.image, &current[order[i]]->sample});
            std::vector<ReplaySample> replayed;
            if (use_replay) {
                const auto n = static_cast<std::size_t>(std::ceil(cfg.replay_ratio * static_cast<double>(items.size())));
                replayed = st.buffer.replay(n, derive_seed(sseed, tag("replay"), step));
                for (const auto& r : replayed) items.push_back({&r.image, r.sample});
            }
            std::vector<ItemDraw> draws;
            for (std::size_t i = 0; i < items.size(); ++i)
                draws.push_back(draw_item(items[i], cfg, ts.model.config.latent_dim, derive_seed(sseed, tag("item"), step, i)));

            const std::string where = "session " + std::to_string(t) + " epoch " + std::to_string(epoch) + " batch " + std::to_string(batches);
            double value = 0.0;
            try {
                ad::Tape tape;
                BoundModel bound(tape, ts.model, true);
                ad::Var loss = batch_loss(bound, items, draws, prior ? &*prior : nullptr, cfg.kl_weight);
                value = tape.value(loss).item();
                if (!std::isfinite(value)) throw ad::NumericError("non-finite loss");
                tape.backward(loss);
                sgd_step(ts.model, ts.velocity, lr, cfg.momentum, cfg.clip_norm);
            } catch (const ad::NumericError& e) {
                throw ad::NumericError(std::string(e.what()) + " at " + where);
            }
            if (observe) observe(epoch, step, value);
            epoch_loss += value;
            ++batches;
        }
        report.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
        ts.epoch = epoch + 1;
    }
    report.final_loss = report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back();

    // Session close: class priors and saliency entries.
    for (auto c : session.classes) {
        std::vector<const Instance*> members;
        for (const auto* inst : current)
            if (inst->cls == c) members.push_back(inst);
        if (members.empty()) continue;
        const auto priors = distill_priors(training_latents(ts.model, members), rcfg.m_priors, derive_seed(sseed, tag("distill"), static_cast<std::uint64_t>(c)));
        append_class_priors(st.bank, t, class_name(c), priors);
        const std::size_t keep = rcfg.objects_per_class ? std::min(rcfg.objects_per_class, members.size()) : members.size();
        for (std::size_t i = 0; i < keep; ++i) {
            const auto* inst = members[i];
            const auto maps = compute_saliency(ts.model, inst->view.image, rcfg.saliency);
            EntryOptions eo{rcfg.strategy, rcfg.k_maps, rcfg.tau};
            st.buffer.insert(make_entry(class_name(c), inst->view.image, maps, inst->sample, eo, derive_seed(sseed, tag("entry"), i, static_cast<std::uint64_t>(c))));
        }
    }
    report.bank_size = st.bank.size();
    report.buffer_units = st.buffer.units();
    ++ts.session;
    return report;
}

struct RunOptions {
    ModelConfig model;
    TrainConfig train;
    ReplayConfig replay;
    std::size_t threads = 0;  // 0: eval_threads()
};

struct RunResult {
    ContinualState state;
    IouMatrix matrix;
    std::vector<SessionReport> reports;
};

using SessionObserver = std::function<void(const SessionReport&, const ContinualState&)>;

// All sessions in order, evaluating cumulatively after each.
inline RunResult train_all(const std::vector<SessionDataset>& sessions, const RunOptions& opt, std::uint64_t seed,
                           const SessionObserver& after_session = {}) {
    if (sessions.empty()) throw ConfigError("no sessions to train");
    RunResult r;
    r.state.train = init_state(opt.model, seed);
    const auto& d = sessions.front().train.front().view.image;
    BufferConfig bc;
    bc.strategy = opt.replay.strategy;
    bc.k = opt.replay.k_maps;
    bc.height = d.height;
    bc.width = d.width;
    bc.res = sessions.front().train.front().grid.res;
    bc.objects_per_class = opt.replay.objects_per_class;
    r.state.buffer = ReplayBuffer(bc);
    r.state.bank.m = opt.replay.m_priors;
    r.matrix = IouMatrix(sessions.size());
    const std::size_t threads = opt.threads ? opt.threads : eval_threads();
    for (const auto& s : sessions) {
        auto report = run_session(r.state, s, opt.train, opt.replay);
        std::optional<std::uint64_t> sample_seed;
        if (opt.train.sample_eval_latent) sample_seed = derive_seed(seed, tag("eval"), s.index);
        const auto per_session = evaluate_cumulative(r.state.train.model, sessions, s.index, threads, sample_seed);
        r.matrix.update(s.index, per_session);
        for (const auto& cls : per_session) report.per_class_iou.insert(cls.begin(), cls.end());
        if (after_session) after_session(report, r.state);
        r.reports.push_back(std::move(report));
    }
    return r;
}

}  // namespace contrec
