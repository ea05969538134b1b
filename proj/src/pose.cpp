#include "pointpose/pose.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "pointpose/util.hpp"

namespace pointpose::pose {

using nlohmann::json;

std::vector<int> propose_candidates(const geom::PointCloud& scene, int count, uint64_t seed) {
    const int n = static_cast<int>(scene.size());
    if (n == 0) throw std::invalid_argument("propose_candidates: empty scene");
    if (count >= n) {
        std::vector<int> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    Rng rng(seed);
    std::uniform_int_distribution<int> start(0, n - 1);
    std::vector<int> centers{start(rng)};
    std::vector<double> best_d(n, std::numeric_limits<double>::max());
    while (static_cast<int>(centers.size()) < count) {
        const Vec3& last = scene.points[centers.back()].position;
        int far_idx = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
            double d = (scene.points[i].position - last).squaredNorm();
            if (d < best_d[i]) best_d[i] = d;
            if (best_d[i] > far_d) {
                far_d = best_d[i];
                far_idx = i;
            }
        }
        centers.push_back(far_idx);
    }
    return centers;
}

std::vector<RankedCandidate> rank_candidates(const geom::PointCloud& scene,
                                             const geom::NeighborIndex& scene_index,
                                             const std::vector<int>& centers,
                                             double model_diagonal, double model_max_extent,
                                             net::Network<float>& network,
                                             const PipelineConfig& cfg, uint64_t seed,
                                             std::vector<double>* all_scores) {
    if (centers.empty()) throw std::invalid_argument("rank_candidates: no centers");
    cfg.check();
    std::vector<RankedCandidate> scored;
    if (all_scores) all_scores->assign(centers.size(), 0.0);

    for (size_t ci = 0; ci < centers.size(); ++ci) {
        dataset::CandidateCloud cand;
        try {
            cand = dataset::extract_candidate(scene, scene_index, scene.points[centers[ci]].position,
                                              model_diagonal, model_max_extent, network.cfg.n,
                                              derive_seed(seed, ci));
        } catch (const std::runtime_error&) {
            continue;  // empty sphere
        }
        net::Mat<float> input(network.cfg.n, 9);
        for (int i = 0; i < network.cfg.n; ++i) {
            const auto& p = cand.cloud.points[i];
            float* row = input.row(i);
            for (int d = 0; d < 3; ++d) row[d] = static_cast<float>(p.position[d]);
            for (int d = 0; d < 3; ++d) row[3 + d] = static_cast<float>(p.normal[d]);
            for (int d = 0; d < 3; ++d) row[6 + d] = static_cast<float>(p.color[d]);
        }
        auto fwd = network.forward(input, 1, false, derive_seed(seed, 0xF0, ci));
        RankedCandidate rc;
        rc.candidate = std::move(cand);
        rc.output.label_logits = fwd.label_logits->val;
        rc.output.seg_logits = fwd.seg_logits->val;
        rc.output.vote_logits = fwd.vote_logits->val;
        const float* ll = rc.output.label_logits.row(0);
        rc.score = 1.0 / (1.0 + std::exp(static_cast<double>(ll[0]) - ll[1]));
        rc.center_index = static_cast<int>(ci);
        if (all_scores) (*all_scores)[ci] = rc.score;
        scored.push_back(std::move(rc));
    }
    if (scored.empty()) throw std::runtime_error("no valid candidates");
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.score > b.score || (a.score == b.score && a.center_index < b.center_index);
    });
    if (static_cast<int>(scored.size()) > cfg.top_refined) scored.resize(cfg.top_refined);
    return scored;
}

PoseHypothesis ransac_pose(const std::vector<vote::Correspondence>& matches,
                           const dataset::CandidateCloud& candidate,
                           const model::FeaturePointSet& features, const PipelineConfig& cfg,
                           uint64_t seed) {
    if (matches.size() < 3) throw std::runtime_error("insufficient matches");
    Rng rng(seed);
    std::uniform_int_distribution<size_t> pick(0, matches.size() - 1);
    const double r2 = cfg.inlier_radius_mm * cfg.inlier_radius_mm;

    auto scene_pt = [&](int i) { return candidate.cloud.points[i].position; };
    auto feat_pt = [&](int j) { return features.points[j].position; };

    int best_inliers = -1;
    geom::Pose best_pose;
    bool any = false;
    std::vector<Vec3> src(3), dst(3);

    for (int it = 0; it < cfg.ransac_iterations; ++it) {
        size_t a = pick(rng), b = pick(rng), c = pick(rng);
        const auto &ma = matches[a], &mb = matches[b], &mc = matches[c];
        // distinct scene points and distinct feature points
        if (ma.point_index == mb.point_index || ma.point_index == mc.point_index ||
            mb.point_index == mc.point_index)
            continue;
        if (ma.feature_index == mb.feature_index || ma.feature_index == mc.feature_index ||
            mb.feature_index == mc.feature_index)
            continue;
        src[0] = feat_pt(ma.feature_index);
        src[1] = feat_pt(mb.feature_index);
        src[2] = feat_pt(mc.feature_index);
        dst[0] = scene_pt(ma.point_index);
        dst[1] = scene_pt(mb.point_index);
        dst[2] = scene_pt(mc.point_index);
        geom::Pose hyp;
        try {
            hyp = geom::kabsch(src, dst);
        } catch (const std::invalid_argument&) {
            continue;  // degenerate sample
        }
        int inl = 0;
        for (const auto& m : matches) {
            Vec3 mapped = hyp.apply(feat_pt(m.feature_index));
            if ((mapped - scene_pt(m.point_index)).squaredNorm() <= r2) ++inl;
        }
        if (inl > best_inliers) {
            best_inliers = inl;
            best_pose = hyp;
            any = true;
        }
    }
    if (!any) throw std::runtime_error("ransac: all samples degenerate after iteration budget");

    // Re-fit on the consensus set.
    std::vector<Vec3> fsrc, fdst;
    for (const auto& m : matches) {
        Vec3 mapped = best_pose.apply(feat_pt(m.feature_index));
        if ((mapped - scene_pt(m.point_index)).squaredNorm() <= r2) {
            fsrc.push_back(feat_pt(m.feature_index));
            fdst.push_back(scene_pt(m.point_index));
        }
    }
    PoseHypothesis result;
    result.pose = best_pose;
    if (fsrc.size() >= 3) {
        try {
            result.pose = geom::kabsch(fsrc, fdst);
        } catch (const std::invalid_argument&) {
            // keep the sample pose when the consensus set is degenerate
        }
    }
    result.inlier_count = best_inliers;
    result.inlier_fraction = static_cast<double>(best_inliers) / static_cast<double>(matches.size());
    return result;
}

Pose icp_refine(const Pose& start, const geom::PointCloud& model_points,
                const geom::PointCloud& scene, const geom::NeighborIndex& scene_index,
                const PipelineConfig& cfg, IcpStats* stats) {
    if (model_points.size() == 0 || scene.size() == 0)
        throw std::invalid_argument("icp_refine: empty cloud");
    Pose pose = start;
    if (stats) stats->stage_rms.assign(cfg.icp_stages.size(), {});

    for (size_t si = 0; si < cfg.icp_stages.size(); ++si) {
        const auto& stage = cfg.icp_stages[si];
        double prev_rms = -1.0;
        for (int iter = 0; iter < stage.max_iterations; ++iter) {
            std::vector<Vec3> src, dst;
            src.reserve(model_points.size());
            dst.reserve(model_points.size());
            double pre_sq = 0.0;
            for (const auto& mp : model_points.points) {
                Vec3 moved = pose.apply(mp.position);
                auto [idx, dist] = scene_index.nearest(moved);
                if (dist <= stage.cutoff_mm) {
                    src.push_back(mp.position);
                    dst.push_back(scene.points[idx].position);
                    pre_sq += dist * dist;
                }
            }
            if (src.empty()) {
                log_debug("icp: stage " + std::to_string(si) + " has no pairs, skipped");
                break;
            }
            double pre_rms = std::sqrt(pre_sq / static_cast<double>(src.size()));
            Pose refit;
            try {
                refit = geom::kabsch(src, dst);
            } catch (const std::invalid_argument&) {
                log_debug("icp: degenerate pair set, stage aborted");
                break;
            }
            double post_sq = 0.0;
            for (size_t i = 0; i < src.size(); ++i)
                post_sq += (refit.apply(src[i]) - dst[i]).squaredNorm();
            double post_rms = std::sqrt(post_sq / static_cast<double>(src.size()));
            if (stats) stats->stage_rms[si].push_back({pre_rms, post_rms});
            pose = refit;
            if (prev_rms >= 0.0 &&
                std::abs(prev_rms - post_rms) < cfg.icp_convergence * std::max(prev_rms, 1e-12))
                break;
            prev_rms = post_rms;
        }
    }
    return pose;
}

ObjectModel ObjectModel::build(const model::TriangleMesh& mesh,
                               const model::FeaturePointSet& features, double sample_density,
                               uint64_t seed) {
    ObjectModel om;
    om.mesh = &mesh;
    om.features = &features;
    om.sampled = model::sample_surface(mesh, sample_density, seed);
    om.diagonal = model::diagonal(mesh);
    om.max_extent = model::max_extent(mesh);
    return om;
}

EstimateResult estimate(const render::RenderedFrame& frame, const ObjectModel& object,
                        net::Network<float>& network, const PipelineConfig& cfg, uint64_t seed) {
    cfg.check();
    geom::PointCloud scene = render::backproject(frame, frame.camera);
    if (scene.size() == 0) throw std::runtime_error("estimate: empty scene cloud");
    geom::NeighborIndex scene_index = geom::NeighborIndex::build(scene);

    std::vector<int> centers = propose_candidates(scene, cfg.candidate_count, derive_seed(seed, 1));
    EstimateResult result;
    std::vector<RankedCandidate> top =
        rank_candidates(scene, scene_index, centers, object.diagonal, object.max_extent, network,
                        cfg, derive_seed(seed, 2), &result.candidate_scores);

    double best_score = -1.0;
    for (size_t t = 0; t < top.size(); ++t) {
        auto matches = vote::extract_matches(top[t].output, cfg.vote);
        if (matches.size() < 3) continue;
        ++result.candidates_with_matches;
        PoseHypothesis hyp;
        try {
            hyp = ransac_pose(matches, top[t].candidate, *object.features, cfg,
                              derive_seed(seed, 3, t));
        } catch (const std::runtime_error&) {
            continue;
        }
        // Back to the camera frame: candidate positions were re-centered.
        Pose cam_pose = hyp.pose;
        cam_pose.translation += top[t].candidate.center;
        cam_pose = icp_refine(cam_pose, object.sampled, scene, scene_index, cfg);
        double score = render::verify_pose(cam_pose, *object.mesh, frame.depth, frame.camera);
        if (score > best_score) {
            best_score = score;
            result.best.pose = cam_pose;
            result.best.inlier_count = hyp.inlier_count;
            result.best.inlier_fraction = hyp.inlier_fraction;
            result.best.verification = score;
            result.found = true;
        }
    }
    return result;
}

void save_result_json(const std::string& path, int object_id, const EstimateResult& r) {
    json j;
    j["object_id"] = object_id;
    j["found"] = r.found;
    json rot = json::array();
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) rot.push_back(r.best.pose.rotation(i, k));
    j["R"] = rot;
    j["t"] = {r.best.pose.translation.x(), r.best.pose.translation.y(),
              r.best.pose.translation.z()};
    j["inliers"] = r.best.inlier_count;
    j["verification"] = r.best.verification;
    j["candidate_scores"] = r.candidate_scores;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

LoadedResult load_result_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    in >> j;
    LoadedResult r;
    r.object_id = j.at("object_id");
    r.found = j.at("found");
    geom::Mat3 rot;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) rot(i, k) = j.at("R").at(i * 3 + k);
    r.pose.rotation = rot;
    r.pose.translation = Vec3(j.at("t").at(0), j.at("t").at(1), j.at("t").at(2));
    r.verification = j.at("verification");
    return r;
}

}  // namespace pointpose::pose
