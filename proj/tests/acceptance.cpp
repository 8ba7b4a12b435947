// Acceptance runner: one PASS/FAIL line per criterion, exit 0 only if all
// nine pass. Tolerances and runtime bounds are pinned here on purpose so a
// regression in either accuracy or speed trips the gate.

#include <Eigen/Core>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "json.hpp"

#include "hvx/fago.hpp"
#include "hvx/fusion.hpp"
#include "hvx/gradsuite.hpp"
#include "hvx/hyperball.hpp"
#include "hvx/io.hpp"
#include "hvx/objective.hpp"
#include "hvx/pipeline.hpp"
#include "hvx/rng.hpp"
#include "hvx/scenegen.hpp"
#include "hvx/voxgrid.hpp"

#include "oracles.hpp"

namespace fs = std::filesystem;
using hvx::Rng;
using hvx::hyper::PoincareBall;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {  // keep the first failure, it is the most useful one
            ok = false;
            detail = what;
        }
    }
};

double ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

Eigen::VectorXd random_in_ball(Rng& rng, Eigen::Index dim, const PoincareBall& ball,
                               double max_frac) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.uniform(-1.0, 1.0);
    const double n = v.norm();
    if (n < 1e-12) return Eigen::VectorXd::Zero(dim);
    return v * (rng.uniform(0.0, max_frac) * ball.radius() / n);
}

// ---------------------------------------------------------------------------
// 1. Mobius addition group laws and the log-map norm identity, three
//    curvature magnitudes, 1000 random pairs each, under one second.
Outcome criterion1() {
    Outcome r;
    Rng rng(2024);
    for (const double k_abs : {0.5, 1.0, 2.0}) {
        const PoincareBall ball(-k_abs, 1e-5);
        const double s = std::sqrt(k_abs);
        for (int t = 0; t < 1000; ++t) {
            const Eigen::VectorXd x = random_in_ball(rng, 8, ball, 0.95);
            const Eigen::VectorXd z = random_in_ball(rng, 8, ball, 0.95);
            const Eigen::VectorXd zero = Eigen::VectorXd::Zero(8);

            const Eigen::VectorXd ident = hvx::hyper::mobius_add(zero, x, ball);
            r.require((ident - x).norm() <= 1e-12, "left identity drifted past 1e-12");

            const Eigen::VectorXd inv = hvx::hyper::mobius_add(-x, x, ball);
            r.require(inv.norm() <= 1e-9, "left inverse norm above 1e-9");

            const Eigen::VectorXd sum = hvx::hyper::mobius_add(z, x, ball);
            r.require(sum.norm() < ball.radius(), "sum escaped the ball");

            const double want = std::atanh(s * x.norm()) / s;
            const double got = hvx::hyper::log_map_zero(x, ball).norm();
            r.require(std::abs(got - want) <= 1e-12 * std::max(1.0, want),
                      "log-map norm identity off past 1e-12 relative");
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// 2. Central-difference verification of every analytic gradient, 20 seeds
//    per op at h = 1e-6 and relative tolerance 1e-5, under thirty seconds.
Outcome criterion2(std::string& extra) {
    Outcome r;
    const auto reports = hvx::gradsuite::run_all(20, 7, 1e-6, 1e-5, 1.0, 1e-5);
    r.require(reports.size() == 5,
              "expected five gradient checks (distill, fusion, focal, vote, triplet)");
    double worst = 0.0;
    for (const auto& rep : reports) {
        r.require(rep.trials >= 20, "op " + rep.op + " ran fewer than 20 trials");
        r.require(rep.pass, "op " + rep.op + " exceeded the tolerance");
        worst = std::max(worst, rep.max_rel_err);
    }
    std::ostringstream os;
    os << ", worst rel err " << worst;
    extra = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 3. The optimized discrete ops agree exactly with brute-force references on
//    100 random instances (up to 1000 voxels / 50 boxes), under one minute.
Outcome criterion3() {
    Outcome r;
    Rng rng(303);
    const auto cam =
        hvx::scenegen::make_orbit_camera(Eigen::Vector3d::Zero(), 0.7, 0.5, 6.0, 64, 48);

    for (int t = 0; t < 100 && r.ok; ++t) {
        const std::size_t npts = rng.uniform_index(1200) + 1;
        std::vector<Eigen::Vector3d> pts(npts);
        std::vector<Eigen::VectorXd> feats(npts);
        for (auto& p : pts)
            p = Eigen::Vector3d(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0),
                                rng.uniform(-4.0, 4.0));
        for (auto& f : feats) {
            f.resize(4);
            for (int i = 0; i < 4; ++i) f[i] = rng.uniform(-2.0, 2.0);
        }
        const Eigen::Vector3d origin(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0);
        const int stride = 1 + static_cast<int>(rng.uniform_index(2));
        r.require(oracle::grids_equal(hvx::vox::voxelize(pts, feats, 0.5, origin, stride),
                                      oracle::voxelize(pts, feats, 0.5, origin, stride)),
                  "voxelize (mean features) disagreed");
        r.require(oracle::grids_equal(hvx::vox::voxelize(pts, {}, 0.5, origin, stride, 2),
                                      oracle::voxelize(pts, {}, 0.5, origin, stride, 2)),
                  "voxelize (occupancy) disagreed");

        const auto g = oracle::random_grid(rng, 1000, 4, 1, 8);
        auto mask = hvx::vox::ForegroundMask::zeros(cam.width, cam.height);
        for (auto& b : mask.bits) b = rng.uniform() < 0.5 ? 1 : 0;

        const auto [fg, bg] = hvx::vox::partition_fg_bg(g, mask, cam);
        const auto [ofg, obg] = oracle::partition_fg_bg(g, mask, cam);
        r.require(oracle::grids_equal(fg, ofg) && oracle::grids_equal(bg, obg),
                  "partition disagreed");

        const auto dense = hvx::vox::densify_foreground(fg);
        r.require(oracle::grids_equal(dense, oracle::densify_foreground(fg)),
                  "densify disagreed");

        const int s = 1 + static_cast<int>(rng.uniform_index(4));
        const auto sparse = hvx::vox::sparsify_background(bg, s);
        r.require(oracle::grids_equal(sparse, oracle::sparsify_background(bg, s)),
                  "sparsify disagreed");

        const auto merged = hvx::vox::merge(dense, sparse);
        r.require(oracle::grids_equal(merged, oracle::merge(dense, sparse)),
                  "merge disagreed");

        const auto boxes = oracle::random_boxes(rng, 50);
        const auto lab = hvx::fago::label_foreground(merged, boxes);
        const auto olab = oracle::label_foreground(merged, boxes);
        r.require(lab.labels == olab.labels && lab.box_index == olab.box_index,
                  "label assignment disagreed");

        if (merged.size() > 0) {
            Eigen::VectorXd scores(static_cast<Eigen::Index>(merged.size()));
            const bool ties = (t % 2) == 0;  // exercise deterministic tie handling too
            for (Eigen::Index i = 0; i < scores.size(); ++i)
                scores[i] = ties ? static_cast<double>(rng.uniform_index(4))
                                 : rng.uniform(0.0, 1.0);
            const int k = 1 + static_cast<int>(rng.uniform_index(merged.size() + 8));
            const auto kept = hvx::fago::topk_filter(merged, scores, k);
            const auto okept = oracle::topk_filter(merged, scores, k);
            r.require(oracle::grids_equal(kept.grid, okept.grid) &&
                          kept.indices == okept.indices,
                      "top-k filter disagreed");
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// 4. Structural invariants of the redistribution ops, checked both on fully
//    generated scenes and on adversarial random grids with random masks.
void check_redistribution_invariants(Outcome& r, const hvx::vox::SparseVoxelGrid& g,
                                     const hvx::vox::ForegroundMask& mask,
                                     const hvx::vox::CameraModel& cam, int s) {
    const auto [fg, bg] = hvx::vox::partition_fg_bg(g, mask, cam);
    std::set<oracle::CoordKey> kf, kb, all;
    for (const auto& c : fg.coords) kf.insert(oracle::key_of(c));
    for (const auto& c : bg.coords) kb.insert(oracle::key_of(c));
    for (const auto& c : g.coords) all.insert(oracle::key_of(c));
    std::set<oracle::CoordKey> both;
    for (const auto& k : kf)
        if (kb.count(k)) both.insert(k);
    r.require(both.empty(), "foreground and background overlap");
    std::set<oracle::CoordKey> uni = kf;
    uni.insert(kb.begin(), kb.end());
    r.require(uni == all && kf.size() + kb.size() == all.size(),
              "partition is not a disjoint union of the input");

    r.require(hvx::vox::densify_foreground(fg).size() <= 27 * fg.size(),
              "densified set larger than 27x the input");
    r.require(hvx::vox::sparsify_background(bg, s).size() <= bg.size(),
              "sparsified set larger than the input");
    r.require(oracle::grids_equal(hvx::vox::sparsify_background(bg, 1), bg),
              "s = 1 pooling is not the identity");
}

Outcome criterion4() {
    Outcome r;
    Rng rng(404);

    // every generated scene upholds the invariants end to end
    for (int t = 0; t < 8 && r.ok; ++t) {
        hvx::scenegen::SceneSpec spec;
        spec.n_boxes = static_cast<int>(rng.uniform_index(4));  // includes boxless scenes
        spec.points_per_box = 120;
        spec.clutter_points = 100 + static_cast<int>(rng.uniform_index(300));
        spec.image_width = 64;
        spec.image_height = 48;
        spec.d_img = 3;
        const auto scene = hvx::scenegen::generate_scene(spec, 900 + t);
        const auto g = hvx::vox::voxelize(scene.points, scene.point_features, 0.25,
                                          Eigen::Vector3d::Zero(), 1);
        const int s = 1 + static_cast<int>(rng.uniform_index(4));
        check_redistribution_invariants(r, g, scene.mask, scene.camera, s);
    }

    // adversarial random grids and masks
    const auto cam =
        hvx::scenegen::make_orbit_camera(Eigen::Vector3d::Zero(), 1.2, 0.4, 6.0, 48, 48);
    for (int t = 0; t < 100 && r.ok; ++t) {
        const auto g = oracle::random_grid(rng, 600, 3, 1, 8);
        auto mask = hvx::vox::ForegroundMask::zeros(cam.width, cam.height);
        for (auto& b : mask.bits) b = rng.uniform() < 0.5 ? 1 : 0;
        const int s = 1 + static_cast<int>(rng.uniform_index(4));
        check_redistribution_invariants(r, g, mask, cam, s);
    }
    return r;
}

// ---------------------------------------------------------------------------
// 5. Pinned constants: defaults, weight presets, fixed loss coefficients.
Outcome criterion5() {
    Outcome r;
    const hvx::pipeline::Config def;
    r.require(def.sigma_s == 2, "default pooling factor is not 2");
    r.require(def.top_k == 512, "default top-k is not 512");
    r.require(hvx::objective::kTrainingSettingEta == std::array<double, 4>{2.0, 0.4, 0.8, 0.8},
              "training-setting weights changed");
    r.require(hvx::objective::kFig5OptimumEta == std::array<double, 4>{1.0, 0.4, 0.8, 0.8},
              "fig5-optimum weights changed");
    hvx::objective::LossParts parts;
    const auto bundle = hvx::objective::combine_losses(parts, def.eta);
    r.require(bundle.coefficients[0] == 1.0, "classification coefficient is not 1.0");
    r.require(bundle.coefficients[2] == 2.0, "regression coefficient is not 2.0");
    return r;
}

// ---------------------------------------------------------------------------
// 6. Worked scalar values.
Outcome criterion6() {
    Outcome r;

    hvx::objective::LossParts ones;
    ones.l_cls = ones.l_het = ones.l_reg = 1.0;
    ones.l_h = ones.l_s = ones.l_ctr = ones.l_cluster = 1.0;
    const auto bundle = hvx::objective::combine_losses(ones, hvx::objective::kTrainingSettingEta);
    r.require(bundle.total == 8.0, "all-ones total is not exactly 8.0");

    Eigen::VectorXd score(1);
    score << 0.5;
    const auto focal = hvx::fago::focal_importance_loss(score, {1}, 0.25, 1, 1.0);
    r.require(std::abs(focal.loss - 0.08664339756999316) <= 1e-9,
              "focal worked value off past 1e-9");

    const PoincareBall ball(-1.0, 1e-5);
    Eigen::MatrixXd teacher(1, 1), student(1, 1);
    teacher << 0.5;
    student << 0.0;
    const auto distill = hvx::hyper::hyperbolic_distill_loss({teacher}, {student}, ball);
    r.require(std::abs(distill.loss - 0.5493061443340549) <= 1e-9,
              "single-voxel distillation off past 1e-9");
    return r;
}

// ---------------------------------------------------------------------------
// CLI plumbing shared by criteria 7 and 8.
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("hvx-accept-" + std::to_string(static_cast<long>(::getpid())));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

bool run_cli(const std::string& args) {
    const std::string cmd = std::string("'") + HVX_CLI_PATH + "' " + args + " > /dev/null";
    return std::system(cmd.c_str()) == 0;
}

// 7. Identical run reports across repeat invocations and thread counts.
Outcome criterion7() {
    Outcome r;
    TempDir tmp;
    const auto scene_path = (tmp.path / "scene.json").string();
    const auto config_path = (tmp.path / "config.json").string();

    hvx::scenegen::SceneSpec spec;
    spec.n_boxes = 3;
    spec.points_per_box = 200;
    spec.clutter_points = 400;
    spec.image_width = 64;
    spec.image_height = 48;
    spec.d_img = 4;
    hvx::io::save_scene(scene_path, hvx::scenegen::generate_scene(spec, 11));
    hvx::io::save_json(config_path, nlohmann::json{{"strides", {1, 2}}});

    std::vector<nlohmann::json> reports;
    const std::string base =
        " run --scene '" + scene_path + "' --config '" + config_path + "' --out '";
    int idx = 0;
    for (const std::string& prefix :
         {std::string(""), std::string(""), std::string("HVX_THREADS=1 "),
          std::string("HVX_THREADS=4 ")}) {
        const auto out = (tmp.path / ("report" + std::to_string(idx++) + ".json")).string();
        const std::string cmd =
            prefix + "'" + HVX_CLI_PATH + "'" + base + out + "' > /dev/null";
        r.require(std::system(cmd.c_str()) == 0, "pipeline run exited nonzero");
        if (!r.ok) return r;
        auto j = hvx::io::load_json(out);
        j.erase("timings_ms");
        reports.push_back(std::move(j));
    }
    r.require(reports[0] == reports[1], "two identical invocations disagreed");
    r.require(reports[2] == reports[3], "1-thread and 4-thread reports disagreed");
    r.require(reports[0] == reports[2], "default and pinned-thread reports disagreed");
    return r;
}

// 8. Background-pooling benchmark on a 100k-point scene: coarser pooling
//    never yields more voxels, and the median pipeline time does not rise
//    (one timing-noise inversion allowed), all under two minutes.
Outcome criterion8(std::string& extra) {
    Outcome r;
    TempDir tmp;
    const auto scene_path = (tmp.path / "scene.json").string();
    const auto config_path = (tmp.path / "config.json").string();
    const auto csv_path = (tmp.path / "bench.csv").string();

    // the wide workspace keeps the coarsened background large enough that
    // every pooling step removes real downstream work, not just noise
    r.require(run_cli("gen-scene --boxes 5 --points-per-box 4000 --clutter 80000 "
                      "--workspace 12 --seed 7 --out '" +
                      scene_path + "'"),
              "scene generation exited nonzero");
    if (!r.ok) return r;
    hvx::io::save_json(config_path, nlohmann::json{{"voxel_size", 0.1}});
    r.require(run_cli("bench-sigma --scene '" + scene_path + "' --config '" + config_path +
                      "' --repeats 7 --out '" + csv_path + "'"),
              "benchmark exited nonzero");
    if (!r.ok) return r;

    std::ifstream in(csv_path);
    r.require(static_cast<bool>(in), "benchmark CSV missing");
    std::vector<long long> voxels;
    std::vector<double> times;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("s,", 0) == 0) continue;  // column header
        std::stringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        r.require(cells.size() == 5, "CSV row does not have 5 columns");
        if (!r.ok) return r;
        voxels.push_back(std::stoll(cells[2]));
        times.push_back(std::stod(cells[4]));
    }
    r.require(voxels.size() >= 5, "benchmark swept fewer than 5 pooling factors");
    for (std::size_t i = 0; i + 1 < voxels.size(); ++i)
        r.require(voxels[i + 1] <= voxels[i], "voxel count rose for coarser pooling");
    int inversions = 0;
    for (std::size_t i = 0; i + 1 < times.size(); ++i)
        if (times[i + 1] > times[i]) ++inversions;
    r.require(inversions <= 1, "median pipeline time rose more than once across the sweep");

    std::ostringstream os;
    os << ", " << voxels.front() << " -> " << voxels.back() << " voxels, " << inversions
       << " timing inversion(s)";
    extra = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 9. Plain gradient descent on the differentiable objective actually learns:
//    200 fixed-step updates, sampled every 10 steps, must descend in at
//    least 18 of the 20 windows and end strictly below the start.
Outcome criterion9(std::string& extra) {
    Outcome r;

    hvx::scenegen::SceneSpec spec;
    spec.n_boxes = 2;
    spec.points_per_box = 60;
    spec.clutter_points = 60;
    spec.image_width = 48;
    spec.image_height = 36;
    spec.d_img = 4;
    const auto scene = hvx::scenegen::generate_scene(spec, 5);

    hvx::pipeline::Config cfg;
    cfg.detach_teacher = false;  // the fused teacher must receive gradients
    cfg.k_abs = 0.04;            // wide ball: features stay clear of the clip
    cfg.top_k = 100000;          // keep everything: smooth objective
    const auto ps = hvx::pipeline::prepare_scene(scene, cfg);

    Rng rng(cfg.seed);
    auto params = hvx::pipeline::init_params(cfg, ps.d_img, rng);
    Eigen::VectorXd theta = params.pack();

    const double lr = 2e-4;
    std::vector<double> trace;
    for (int step = 0; step <= 200; ++step) {
        params.unpack(theta);
        const auto ev = hvx::pipeline::evaluate(ps, params, cfg, true);
        const double f = cfg.eta[0] * ev.parts.l_h + cfg.eta[1] * ev.parts.l_s +
                         cfg.eta[2] * ev.parts.l_ctr + cfg.eta[3] * ev.parts.l_cluster;
        r.require(std::isfinite(f), "objective became non-finite during descent");
        if (!r.ok) return r;
        if (step % 10 == 0) trace.push_back(f);
        if (step < 200) theta -= lr * ev.param_grad;
    }

    int falling = 0;
    for (std::size_t w = 0; w + 1 < trace.size(); ++w)
        if (trace[w + 1] < trace[w]) ++falling;
    r.require(trace.back() < trace.front(), "final loss not strictly below the initial loss");
    r.require(falling >= 18, "fewer than 18 of 20 descent windows improved");

    std::ostringstream os;
    os << ", loss " << trace.front() << " -> " << trace.back() << ", " << falling
       << "/20 windows falling";
    extra = os.str();
    return r;
}

struct Criterion {
    int index;
    std::string what;
    double budget_ms;  // 0 = no bound
    Outcome outcome;
    double elapsed_ms = 0.0;
    std::string extra;
};

}  // namespace

int main() {
    std::vector<Criterion> cs;
    cs.push_back({1, "hyperbolic group laws and log-map norms, 3000 random pairs", 1000.0});
    cs.push_back({2, "analytic gradients match central differences, 20 seeds per op", 30000.0});
    cs.push_back({3, "discrete ops match brute-force references on 100 instances", 60000.0});
    cs.push_back({4, "redistribution invariants on generated scenes and random grids", 0.0});
    cs.push_back({5, "pinned defaults, weight presets, and loss coefficients", 0.0});
    cs.push_back({6, "worked scalar values for total, focal, and distillation", 0.0});
    cs.push_back({7, "bit-identical run reports across reruns and thread counts", 0.0});
    cs.push_back({8, "pooling benchmark: monotone voxel counts and timings", 120000.0});
    cs.push_back({9, "gradient descent lowers the differentiable objective", 0.0});

    for (auto& c : cs) {
        const auto t0 = std::chrono::steady_clock::now();
        switch (c.index) {
            case 1: c.outcome = criterion1(); break;
            case 2: c.outcome = criterion2(c.extra); break;
            case 3: c.outcome = criterion3(); break;
            case 4: c.outcome = criterion4(); break;
            case 5: c.outcome = criterion5(); break;
            case 6: c.outcome = criterion6(); break;
            case 7: c.outcome = criterion7(); break;
            case 8: c.outcome = criterion8(c.extra); break;
            case 9: c.outcome = criterion9(c.extra); break;
        }
        c.elapsed_ms = ms_since(t0);
        if (c.budget_ms > 0.0 && c.elapsed_ms >= c.budget_ms)
            c.outcome.require(false, "exceeded the " + std::to_string(c.budget_ms / 1000.0) +
                                         " s budget");
    }

    int failures = 0;
    for (const auto& c : cs) {
        const bool ok = c.outcome.ok;
        if (!ok) ++failures;
        std::printf("%s criterion %d: %s%s (%.0f ms)%s%s\n", ok ? "PASS" : "FAIL", c.index,
                    c.what.c_str(), c.extra.c_str(), c.elapsed_ms,
                    ok ? "" : " -- ", ok ? "" : c.outcome.detail.c_str());
    }
    std::printf("acceptance: %d/9 criteria passed\n", 9 - failures);
    return failures == 0 ? 0 : 1;
}
