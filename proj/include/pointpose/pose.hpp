#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pointpose/dataset.hpp"
#include "pointpose/geom.hpp"
#include "pointpose/model.hpp"
#include "pointpose/net.hpp"
#include "pointpose/render.hpp"
#include "pointpose/vote.hpp"

namespace pointpose::pose {

using geom::Pose;
using geom::Vec3;

struct PoseHypothesis {
    Pose pose;
    int inlier_count = 0;
    double inlier_fraction = 0.0;
    double verification = -1.0;  // < 0 until verified
};

struct IcpStage {
    double cutoff_mm = 0.0;
    int max_iterations = 0;
};

struct PipelineConfig {
    int candidate_count = 16;
    int top_refined = 4;
    int ransac_iterations = 1000;
    double inlier_radius_mm = 10.0;
    std::vector<IcpStage> icp_stages{{20.0, 30}, {10.0, 30}, {5.0, 30}};
    double icp_convergence = 1e-4;       // relative RMS change
    double icp_sample_density = 0.12;    // model points per mm^2 for ICP/ADD
    vote::VoteConfig vote;

    void check() const {
        if (top_refined > candidate_count)
            throw std::invalid_argument("PipelineConfig: top > candidate count");
        for (size_t i = 1; i < icp_stages.size(); ++i)
            if (!(icp_stages[i].cutoff_mm < icp_stages[i - 1].cutoff_mm))
                throw std::invalid_argument("PipelineConfig: ICP cutoffs must decrease");
    }
};

// Farthest-point sampling over the scene, seeded start, centers snapped to
// scene points (they are scene points). Returns point indices.
std::vector<int> propose_candidates(const geom::PointCloud& scene, int count, uint64_t seed);

struct RankedCandidate {
    dataset::CandidateCloud candidate;
    net::NetworkOutput output;
    double score = 0.0;  // softmaxed cloud-label foreground probability
    int center_index = 0;
};

// Extracts a candidate at every center, runs the network in test mode, and
// keeps the `top_refined` best by cloud-label score (ties by center order).
// all_scores receives one entry per input center (0 for empty candidates).
std::vector<RankedCandidate> rank_candidates(const geom::PointCloud& scene,
                                             const geom::NeighborIndex& scene_index,
                                             const std::vector<int>& centers,
                                             double model_diagonal, double model_max_extent,
                                             net::Network<float>& network,
                                             const PipelineConfig& cfg, uint64_t seed,
                                             std::vector<double>* all_scores = nullptr);

// RANSAC over feature->scene correspondences: 3-point Kabsch hypotheses,
// inliers within inlier_radius, best-inlier refit.
PoseHypothesis ransac_pose(const std::vector<vote::Correspondence>& matches,
                           const dataset::CandidateCloud& candidate,
                           const model::FeaturePointSet& features, const PipelineConfig& cfg,
                           uint64_t seed);

struct IcpStats {
    // Per stage, per iteration: RMS over the kept pairs before and after the
    // Kabsch re-fit (same pair set).
    std::vector<std::vector<std::pair<double, double>>> stage_rms;
};

// Coarse-to-fine ICP: model points transformed by the current pose match
// their nearest scene points within the stage cutoff; Kabsch re-fit until
// the relative RMS change drops below cfg.icp_convergence.
Pose icp_refine(const Pose& start, const geom::PointCloud& model_points,
                const geom::PointCloud& scene, const geom::NeighborIndex& scene_index,
                const PipelineConfig& cfg, IcpStats* stats = nullptr);

struct ObjectModel {
    const model::TriangleMesh* mesh = nullptr;
    const model::FeaturePointSet* features = nullptr;
    geom::PointCloud sampled;  // surface samples for ICP and metrics
    double diagonal = 0.0;
    double max_extent = 0.0;

    static ObjectModel build(const model::TriangleMesh& mesh,
                             const model::FeaturePointSet& features, double sample_density,
                             uint64_t seed);
};

struct EstimateResult {
    bool found = false;
    PoseHypothesis best;
    std::vector<double> candidate_scores;  // one per proposed center
    int candidates_with_matches = 0;
};

// Full pipeline on one observed frame: backproject, propose, rank, then per
// candidate extract matches, RANSAC, ICP, and depth verification; the
// highest-verification hypothesis wins.
EstimateResult estimate(const render::RenderedFrame& frame, const ObjectModel& object,
                        net::Network<float>& network, const PipelineConfig& cfg, uint64_t seed);

// Result JSON {object_id, found, R, t, inliers, verification, candidate_scores}.
void save_result_json(const std::string& path, int object_id, const EstimateResult& r);
struct LoadedResult {
    int object_id = 0;
    bool found = false;
    Pose pose;
    double verification = 0.0;
};
LoadedResult load_result_json(const std::string& path);

}  // namespace pointpose::pose
