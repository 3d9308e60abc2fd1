// contrec gen-data|train|eval|export-mesh|report --config <path> [--seed N] [--out DIR]

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "contrec/config.hpp"
#include "contrec/isosurface.hpp"
#include "contrec/metrics.hpp"
#include "contrec/priors.hpp"
#include "contrec/report.hpp"
#include "contrec/saliency.hpp"
#include "contrec/shapes.hpp"
#include "contrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace contrec;

namespace {

struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> objects;
};

RunConfig load(const Args& a) {
    RunConfig c = parse_config(a.config);
    if (a.seed) c.seed = *a.seed;
    if (a.out) c.output_dir = *a.out;
    fs::create_directories(c.output_dir);
    write_file(c.output_dir + "/config.resolved.json", encode_config(c));
    return c;
}

std::string path(const RunConfig& c, const std::string& rel) { return c.output_dir + "/" + rel; }

std::string checkpoint_path(const RunConfig& c, std::size_t t) { return path(c, "checkpoints/session_" + std::to_string(t) + ".crec"); }

void gen_data(const RunConfig& c) {
    const auto sessions = build_sessions(c.data, c.seed);
    write_dataset(path(c, "data"), sessions, c.data, c.seed);
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.train.size() + s.val.size() + s.test.size();
    std::cerr << "wrote " << n << " objects in " << sessions.size() << " sessions to " << path(c, "data") << "\n";
}

void train(const RunConfig& c) {
    const auto sessions = build_sessions(c.data, c.seed);
    fs::create_directories(path(c, "checkpoints"));
    fs::create_directories(path(c, "sessions"));
    auto observer = [&](const SessionReport& r, const ContinualState& st) {
        write_file(checkpoint_path(c, r.session), encode_state(st.train));
        write_file(path(c, "sessions/session_" + std::to_string(r.session) + ".json"), encode_session_report(r));
        std::cerr << "session " << r.session << ": final loss " << fmt_double(r.final_loss) << ", bank " << r.bank_size << ", buffer units "
                  << r.buffer_units << "\n";
    };
    std::cerr << "model parameters: " << init_model(c.model, 0).parameter_count() << "\n";
    const auto result = train_all(sessions, c.run_options(), c.seed, observer);
    write_file(path(c, "model.crec"), encode_state(result.state.train));
    write_file(path(c, "bank.json"), encode_bank_json(result.state.bank));
    write_file(path(c, "iou_matrix.json"), encode_matrix_json(result.matrix));
    write_file(path(c, "buffer_report.json"), encode_buffer_report(result.state.buffer.report()));
    const std::string bdir = path(c, "buffer");
    fs::remove_all(bdir);
    write_buffer(result.state.buffer, bdir);
}

void eval(const RunConfig& c) {
    const auto sessions = build_sessions(c.data, c.seed);
    IouMatrix m(sessions.size());
    std::size_t done = 0;
    for (std::size_t t = 0; t < sessions.size(); ++t) {
        if (!fs::exists(checkpoint_path(c, t))) break;
        const TrainState st = decode_state(read_file(checkpoint_path(c, t)));
        std::optional<std::uint64_t> sample_seed;
        if (c.train.sample_eval_latent) sample_seed = derive_seed(c.seed, tag("eval"), t);
        m.update(t, evaluate_cumulative(st.model, sessions, t, eval_threads(), sample_seed));
        ++done;
    }
    if (!done) throw IoError("no checkpoints under " + path(c, "checkpoints"));
    write_file(path(c, "iou_matrix.json"), encode_matrix_json(m));
    std::cerr << "evaluated " << done << " session checkpoint(s)\n";
}

void export_mesh(const RunConfig& c, std::vector<std::string> names) {
    const auto sessions = build_sessions(c.data, c.seed);
    const TrainState st = decode_state(read_file(path(c, "model.crec")));
    if (names.empty()) names.push_back(sessions.front().test.front().name);
    fs::create_directories(path(c, "meshes"));
    for (const auto& name : names) {
        const Instance* inst = nullptr;
        for (const auto& s : sessions)
            for (const auto* split : {&s.train, &s.val, &s.test})
                for (const auto& i : *split)
                    if (i.name == name) inst = &i;
        if (!inst) throw ConfigError("--object: unknown object '" + name + "'");
        const FieldFn field = [&](const std::vector<Point3>& pts) {
            ad::Tensor t({pts.size(), 3});
            for (std::size_t i = 0; i < pts.size(); ++i)
                for (std::size_t d = 0; d < 3; ++d) t[3 * i + d] = pts[i][d];
            return predict_occupancy(st.model, inst->view.image, t);
        };
        const auto lattice = mise_refine(field, c.mesh.r0, c.mesh.r_final, c.mesh.tau);
        const TriMesh mesh = marching_cubes(lattice, c.mesh.tau);
        const std::string out = path(c, "meshes/" + name + ".obj");
        export_obj(mesh, out);
        std::cerr << out << ": " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " faces, " << lattice.evaluations
                  << " field evaluations\n";
    }
}

void report(const RunConfig& c) {
    const IouMatrix m = decode_matrix_json(read_file(path(c, "iou_matrix.json")));
    const PriorBank bank = decode_bank_json(read_file(path(c, "bank.json")), c.replay.m_priors);
    const BufferReport buf = decode_buffer_report(read_file(path(c, "buffer_report.json")));
    if (buf.total_units != buf.n_b * buf.objects) throw IoError("buffer report accounting is inconsistent");
    write_report(m, bank.size(), buf, c.output_dir);
    std::cout << read_file(path(c, "report.txt"));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual single-image 3D reconstruction with variational priors and saliency replay"};
    app.require_subcommand(1, 1);
    Args args;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config, "JSON run configuration")->required();
        sub->add_option("--seed", args.seed, "override the configured seed");
        sub->add_option("--out", args.out, "override the output directory");
    };
    auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
    auto* tr = app.add_subcommand("train", "train every session");
    auto* ev = app.add_subcommand("eval", "rebuild the IOU matrix from session checkpoints");
    auto* ex = app.add_subcommand("export-mesh", "reconstruct objects to OBJ");
    auto* rep = app.add_subcommand("report", "write metric files and the summary table");
    for (auto* sub : {gen, tr, ev, ex, rep}) add_common(sub);
    ex->add_option("--object", args.objects, "object name, e.g. sphere_test_0 (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig c = load(args);
        if (*gen) gen_data(c);
        if (*tr) train(c);
        if (*ev) eval(c);
        if (*ex) export_mesh(c, args.objects);
        if (*rep) report(c);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
