#include "hvx/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace hvx::pipeline {

using nlohmann::json;

namespace {

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double lap_ms() {
        const auto now = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - start_).count();
        start_ = now;
        return ms;
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void time_stage(StageTimings* t, const std::string& name, Stopwatch& sw) {
    if (t != nullptr) t->add(name, sw.lap_ms());
}

}  // namespace

void Config::validate() const {
    if (!(alpha > 0.0)) throw std::runtime_error("config: alpha must be > 0");
    if (!(gamma >= 0.0)) throw std::runtime_error("config: gamma must be >= 0");
    if (!(margin >= 0.0)) throw std::runtime_error("config: margin must be >= 0");
    if (!(k_abs > 0.0) || !std::isfinite(k_abs))
        throw std::runtime_error("config: k_abs must be a positive finite number");
    if (!(eps > 0.0 && eps < 1.0)) throw std::runtime_error("config: eps must be in (0, 1)");
    if (sigma_s < 1) throw std::runtime_error("config: sigma_s must be >= 1");
    if (top_k < 1) throw std::runtime_error("config: top_k must be >= 1");
    if (mlp.depth < 1) throw std::runtime_error("config: mlp.depth must be >= 1");
    if (mlp.hidden < 0) throw std::runtime_error("config: mlp.hidden must be >= 0");
    if (!(voxel_size > 0.0)) throw std::runtime_error("config: voxel_size must be > 0");
    if (strides.empty()) throw std::runtime_error("config: strides must not be empty");
    std::set<int> seen;
    for (int s : strides) {
        if (s < 1) throw std::runtime_error("config: strides must be >= 1");
        if (!seen.insert(s).second) throw std::runtime_error("config: strides must be distinct");
    }
    for (double e : eta)
        if (!std::isfinite(e)) throw std::runtime_error("config: eta must be finite");
    for (double v : {l_cls, l_het, l_reg})
        if (!std::isfinite(v)) throw std::runtime_error("config: external losses must be finite");
}

Config config_from_json(const json& j) {
    static const std::set<std::string> known{
        "eta",     "alpha", "gamma",   "margin",  "k_abs",          "eps",
        "sigma_s", "top_k", "mlp",     "seed",    "strides",        "voxel_size",
        "external", "detach_teacher",  "prune_stream"};
    if (!j.is_object()) throw std::runtime_error("config: top level must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.contains(key)) throw std::runtime_error("config: unknown key '" + key + "'");
    }

    Config cfg;
    try {
        if (j.contains("eta")) {
            const json& e = j.at("eta");
            if (e.is_string()) {
                const std::string name = e.get<std::string>();
                if (name == "training-setting")
                    cfg.eta = objective::kTrainingSettingEta;
                else if (name == "fig5-optimum")
                    cfg.eta = objective::kFig5OptimumEta;
                else
                    throw std::runtime_error("config: unknown eta preset '" + name + "'");
            } else if (e.is_array() && e.size() == 4) {
                for (std::size_t i = 0; i < 4; ++i) cfg.eta[i] = e[i].get<double>();
            } else {
                throw std::runtime_error("config: eta must be a 4-element array or preset name");
            }
        }
        if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
        if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
        if (j.contains("margin")) cfg.margin = j.at("margin").get<double>();
        if (j.contains("k_abs")) cfg.k_abs = j.at("k_abs").get<double>();
        if (j.contains("eps")) cfg.eps = j.at("eps").get<double>();
        if (j.contains("sigma_s")) cfg.sigma_s = j.at("sigma_s").get<int>();
        if (j.contains("top_k")) cfg.top_k = j.at("top_k").get<int>();
        if (j.contains("mlp")) {
            const json& m = j.at("mlp");
            for (const auto& [key, value] : m.items()) {
                (void)value;
                if (key != "hidden" && key != "depth")
                    throw std::runtime_error("config: unknown key 'mlp." + key + "'");
            }
            if (m.contains("hidden")) cfg.mlp.hidden = m.at("hidden").get<int>();
            if (m.contains("depth")) cfg.mlp.depth = m.at("depth").get<int>();
        }
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("strides")) cfg.strides = j.at("strides").get<std::vector<int>>();
        if (j.contains("voxel_size")) cfg.voxel_size = j.at("voxel_size").get<double>();
        if (j.contains("external")) {
            const json& x = j.at("external");
            for (const auto& [key, value] : x.items()) {
                (void)value;
                if (key != "l_cls" && key != "l_het" && key != "l_reg")
                    throw std::runtime_error("config: unknown key 'external." + key + "'");
            }
            if (x.contains("l_cls")) cfg.l_cls = x.at("l_cls").get<double>();
            if (x.contains("l_het")) cfg.l_het = x.at("l_het").get<double>();
            if (x.contains("l_reg")) cfg.l_reg = x.at("l_reg").get<double>();
        }
        if (j.contains("detach_teacher")) cfg.detach_teacher = j.at("detach_teacher").get<bool>();
        if (j.contains("prune_stream")) cfg.prune_stream = j.at("prune_stream").get<bool>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed config JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json config_to_json(const Config& cfg) {
    return json{{"eta", cfg.eta},
                {"alpha", cfg.alpha},
                {"gamma", cfg.gamma},
                {"margin", cfg.margin},
                {"k_abs", cfg.k_abs},
                {"eps", cfg.eps},
                {"sigma_s", cfg.sigma_s},
                {"top_k", cfg.top_k},
                {"mlp", {{"hidden", cfg.mlp.hidden}, {"depth", cfg.mlp.depth}}},
                {"seed", cfg.seed},
                {"strides", cfg.strides},
                {"voxel_size", cfg.voxel_size},
                {"external", {{"l_cls", cfg.l_cls}, {"l_het", cfg.l_het}, {"l_reg", cfg.l_reg}}},
                {"detach_teacher", cfg.detach_teacher},
                {"prune_stream", cfg.prune_stream}};
}

Eigen::Index Params::num_params() const {
    return fuse.num_params() + gate.num_params() + importance.num_params() + offset.num_params();
}

Eigen::VectorXd Params::pack() const {
    Eigen::VectorXd theta(num_params());
    Eigen::Index at = 0;
    for (const fusion::Mlp* m : {&fuse, &gate, &importance, &offset}) {
        theta.segment(at, m->num_params()) = m->pack();
        at += m->num_params();
    }
    return theta;
}

void Params::unpack(const Eigen::VectorXd& theta) {
    if (theta.size() != num_params())
        throw std::runtime_error("params unpack: wrong parameter vector length");
    Eigen::Index at = 0;
    for (fusion::Mlp* m : {&fuse, &gate, &importance, &offset}) {
        m->unpack(theta.segment(at, m->num_params()));
        at += m->num_params();
    }
}

Params init_params(const Config& cfg, int d_img, Rng& rng) {
    if (d_img < 1) throw std::runtime_error("init_params: d_img must be positive");
    const int hidden = cfg.mlp.hidden > 0 ? cfg.mlp.hidden : d_img;
    const std::vector<int> stack(static_cast<std::size_t>(cfg.mlp.depth - 1), hidden);
    Params p;
    p.fuse = fusion::make_mlp(2 * d_img, stack, d_img, fusion::Activation::None, rng);
    p.gate = fusion::make_mlp(d_img, stack, d_img, fusion::Activation::None, rng);
    p.importance = fusion::make_mlp(d_img, stack, 1, fusion::Activation::Sigmoid, rng);
    p.offset = fusion::make_mlp(d_img, stack, 3, fusion::Activation::None, rng);
    return p;
}

PreparedScene prepare_scene(const scenegen::SyntheticScene& scene, const Config& cfg,
                            StageTimings* timings) {
    cfg.validate();
    scene.feature_map.validate();
    if (scene.points.size() != scene.point_features.size())
        throw std::runtime_error("scene points and point_features disagree on length");
    const int d_img = scene.feature_map.dim;
    for (const auto& f : scene.point_features)
        if (f.size() != d_img)
            throw std::runtime_error(
                "point feature width differs from image feature width; distillation "
                "requires matching dims");

    PreparedScene ps;
    ps.boxes = scene.boxes;
    ps.d_img = d_img;
    const Eigen::Vector3d origin = Eigen::Vector3d::Zero();

    for (const int stride : cfg.strides) {
        StrideState st;
        st.stride = stride;
        Stopwatch sw;
        const std::string tag = "stride" + std::to_string(stride) + ".";

        // occupancy width d_img keeps a pointless scene shape-compatible with
        // the feature heads: every stage below then sees empty d_img matrices
        const vox::SparseVoxelGrid grid = vox::voxelize(
            scene.points, scene.point_features, cfg.voxel_size, origin, stride, d_img);
        time_stage(timings, tag + "voxelize", sw);

        auto [fg, bg] = vox::partition_fg_bg(grid, scene.mask, scene.camera);
        time_stage(timings, tag + "partition", sw);

        const vox::SparseVoxelGrid fg_dense = vox::densify_foreground(fg);
        time_stage(timings, tag + "densify", sw);

        const vox::SparseVoxelGrid bg_sparse = vox::sparsify_background(bg, cfg.sigma_s);
        time_stage(timings, tag + "sparsify", sw);

        st.merged = vox::merge(fg_dense, bg_sparse);
        time_stage(timings, tag + "merge", sw);

        fusion::GatherResult gathered =
            fusion::gather_image_features(st.merged, scene.feature_map, scene.camera);
        st.f2d = std::move(gathered.features);
        st.valid = std::move(gathered.valid);
        time_stage(timings, tag + "gather", sw);

        fago::LabelResult lr = fago::label_foreground(st.merged, ps.boxes);
        st.labels = std::move(lr.labels);
        st.box_index = std::move(lr.box_index);
        time_stage(timings, tag + "label", sw);

        st.counts.input = grid.size();
        st.counts.foreground = fg.size();
        st.counts.background = bg.size();
        st.counts.densified = fg_dense.size();
        st.counts.sparsified = bg_sparse.size();
        st.counts.merged = st.merged.size();
        st.counts.valid_projections = 0;
        for (const auto v : st.valid) st.counts.valid_projections += v;
        ps.strides.push_back(std::move(st));
    }
    return ps;
}

namespace {

fusion::MlpGrads zero_grads_like(const fusion::Mlp& mlp) {
    fusion::MlpGrads g;
    for (const auto& l : mlp.layers) {
        g.dw.push_back(Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()));
        g.db.push_back(Eigen::VectorXd::Zero(l.b.size()));
    }
    return g;
}

}  // namespace

Evaluation evaluate(const PreparedScene& ps, const Params& params, const Config& cfg,
                    bool with_grad, StageTimings* timings) {
    cfg.validate();
    const hyper::PoincareBall ball(-cfg.k_abs, cfg.eps);

    Evaluation ev;
    fusion::MlpGrads g_fuse = zero_grads_like(params.fuse);
    fusion::MlpGrads g_gate = zero_grads_like(params.gate);
    fusion::MlpGrads g_importance = zero_grads_like(params.importance);
    fusion::MlpGrads g_offset = zero_grads_like(params.offset);

    for (const StrideState& st : ps.strides) {
        StrideEval se;
        se.stride = st.stride;
        Stopwatch sw;
        const std::string tag = "stride" + std::to_string(st.stride) + ".";

        // fused teacher on rows with a valid image sample
        std::vector<Eigen::Index> valid_rows;
        for (std::size_t i = 0; i < st.valid.size(); ++i)
            if (st.valid[i]) valid_rows.push_back(static_cast<Eigen::Index>(i));
        const Eigen::Index nv = static_cast<Eigen::Index>(valid_rows.size());
        Eigen::MatrixXd f2d_v(nv, ps.d_img), fvox_v(nv, ps.d_img);
        for (Eigen::Index r = 0; r < nv; ++r) {
            f2d_v.row(r) = st.f2d.row(valid_rows[static_cast<std::size_t>(r)]);
            fvox_v.row(r) = st.merged.features.row(valid_rows[static_cast<std::size_t>(r)]);
        }
        if (nv > 0) {
            const fusion::FuseTrace tr =
                fusion::fuse_forward(f2d_v, fvox_v, params.fuse, params.gate);
            time_stage(timings, tag + "fuse", sw);

            const hyper::DistillResult dr =
                hyper::hyperbolic_distill_loss({tr.f_2d3d}, {fvox_v}, ball);
            se.l_h = dr.loss;
            ev.parts.l_h += dr.loss;
            if (with_grad && !cfg.detach_teacher) {
                const fusion::FuseGrads fg =
                    fusion::fuse_backward(params.fuse, params.gate, tr, dr.grad_teacher[0]);
                g_fuse.add_scaled(fg.fuse_mlp, 1.0);
                g_gate.add_scaled(fg.gate_mlp, 1.0);
            }
            time_stage(timings, tag + "distill", sw);
        } else {
            time_stage(timings, tag + "fuse", sw);
            time_stage(timings, tag + "distill", sw);
        }

        // importance scores over every voxel
        const fusion::MlpTrace imp_tr = fusion::mlp_forward(params.importance, st.merged.features);
        se.scores = imp_tr.outputs.back().col(0);
        const fago::FocalResult fr =
            fago::focal_importance_loss(se.scores, st.labels, cfg.alpha, 1, cfg.gamma);
        ev.parts.l_s += fr.loss;
        if (with_grad) {
            Eigen::MatrixXd dscores(se.scores.size(), 1);
            dscores.col(0) = fr.grad;
            g_importance.add_scaled(fusion::mlp_backward(params.importance, imp_tr, dscores), 1.0);
        }
        time_stage(timings, tag + "importance", sw);

        se.filtered = fago::topk_filter(st.merged, se.scores, cfg.top_k);
        time_stage(timings, tag + "topk", sw);

        // center votes on the kept voxels
        const fusion::MlpTrace off_tr =
            fusion::mlp_forward(params.offset, se.filtered.grid.features);
        const Eigen::MatrixXd offsets = off_tr.outputs.back();
        std::vector<int> kept_box(se.filtered.indices.size());
        for (std::size_t i = 0; i < se.filtered.indices.size(); ++i)
            kept_box[i] = st.box_index[se.filtered.indices[i]];
        const fago::VoteResult vr =
            fago::center_vote_loss(se.filtered.grid.centers(), offsets, kept_box, ps.boxes);
        ev.parts.l_ctr += vr.loss;
        if (with_grad)
            g_offset.add_scaled(fusion::mlp_backward(params.offset, off_tr, vr.grad_offsets), 1.0);
        time_stage(timings, tag + "vote", sw);

        const fago::TripletResult tcr = fago::triplet_cluster_loss(se.filtered.grid, cfg.margin);
        ev.parts.l_cluster += tcr.loss;
        time_stage(timings, tag + "cluster", sw);

        se.output = fago::residual_merge(se.filtered.grid, st.merged);
        if (cfg.prune_stream) {
            vox::SparseVoxelGrid pruned;
            pruned.stride = se.output.stride;
            pruned.voxel_size = se.output.voxel_size;
            pruned.origin = se.output.origin;
            pruned.coords = se.filtered.grid.coords;
            pruned.features.resize(static_cast<Eigen::Index>(pruned.coords.size()),
                                   se.output.features.cols());
            std::unordered_map<std::uint64_t, std::size_t> rows;
            for (std::size_t i = 0; i < se.output.size(); ++i)
                rows.emplace(se.output.coords[i].key(), i);
            for (std::size_t i = 0; i < pruned.coords.size(); ++i)
                pruned.features.row(static_cast<Eigen::Index>(i)) =
                    se.output.features.row(static_cast<Eigen::Index>(rows.at(pruned.coords[i].key())));
            vox::sort_lex(pruned);
            se.output = std::move(pruned);
        }
        time_stage(timings, tag + "residual", sw);

        ev.strides.push_back(std::move(se));
    }

    ev.parts.l_cls = cfg.l_cls;
    ev.parts.l_het = cfg.l_het;
    ev.parts.l_reg = cfg.l_reg;
    Stopwatch sw;
    ev.bundle = objective::combine_losses(ev.parts, cfg.eta);
    time_stage(timings, "combine", sw);

    if (with_grad) {
        ev.param_grad.resize(params.num_params());
        Eigen::Index at = 0;
        const std::array<std::pair<const fusion::MlpGrads*, double>, 4> blocks{
            {{&g_fuse, cfg.eta[0]},
             {&g_gate, cfg.eta[0]},
             {&g_importance, cfg.eta[1]},
             {&g_offset, cfg.eta[2]}}};
        for (const auto& [grads, scale] : blocks) {
            const Eigen::VectorXd packed = grads->pack();
            ev.param_grad.segment(at, packed.size()) = scale * packed;
            at += packed.size();
        }
    }
    return ev;
}

json run_report(const scenegen::SyntheticScene& scene, const Config& cfg) {
    StageTimings timings;
    const PreparedScene ps = prepare_scene(scene, cfg, &timings);
    Rng rng(cfg.seed);
    const Params params = init_params(cfg, ps.d_img, rng);
    const Evaluation ev = evaluate(ps, params, cfg, /*with_grad=*/false, &timings);

    json strides = json::array();
    for (std::size_t i = 0; i < ps.strides.size(); ++i) {
        const StrideState& st = ps.strides[i];
        const StrideEval& se = ev.strides[i];
        strides.push_back(json{{"stride", st.stride},
                               {"counts",
                                {{"input", st.counts.input},
                                 {"foreground", st.counts.foreground},
                                 {"background", st.counts.background},
                                 {"densified", st.counts.densified},
                                 {"sparsified", st.counts.sparsified},
                                 {"merged", st.counts.merged},
                                 {"valid_projections", st.counts.valid_projections},
                                 {"filtered", se.filtered.grid.size()}}},
                               {"l_h", se.l_h},
                               {"output_voxels", se.output.size()}});
    }

    json timings_json = json::array();
    for (const auto& [name, ms] : timings.ms)
        timings_json.push_back(json{{"stage", name}, {"ms", ms}});

    return json{{"scene_seed", scene.seed},
                {"config", config_to_json(cfg)},
                {"d_img", ps.d_img},
                {"strides", std::move(strides)},
                {"losses",
                 {{"l_cls", ev.parts.l_cls},
                  {"l_het", ev.parts.l_het},
                  {"l_reg", ev.parts.l_reg},
                  {"l_h", ev.parts.l_h},
                  {"l_s", ev.parts.l_s},
                  {"l_ctr", ev.parts.l_ctr},
                  {"l_cluster", ev.parts.l_cluster}}},
                {"eta", ev.bundle.eta},
                {"coefficients", ev.bundle.coefficients},
                {"total", ev.bundle.total},
                {"timings_ms", std::move(timings_json)}};
}

}  // namespace hvx::pipeline
