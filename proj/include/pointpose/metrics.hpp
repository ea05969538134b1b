#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pointpose/geom.hpp"

namespace pointpose::metrics {

using geom::Pose;

struct EvalRecord {
    int object_id = 0;
    Pose ground_truth;
    std::optional<Pose> estimate;  // empty = not found
    double diagonal = 0.0;         // mm
    bool symmetric = false;
};

// Mean over model points of |est*x - gt*x|.
double add_error(const Pose& gt, const Pose& est, const geom::PointCloud& model_points);
// Closest-point variant for rotation-invariant objects.
double adi_error(const Pose& gt, const Pose& est, const geom::PointCloud& model_points);

struct RecallReport {
    struct PerObject {
        int object_id = 0;
        int total = 0;
        int hits = 0;
        double recall = 0.0;
    };
    std::vector<PerObject> per_object;
    double mean_recall = 0.0;  // mean over objects
};

// A record scores when its ADD (or ADD-I when symmetric) error is strictly
// below threshold_fraction * diagonal; "not found" scores 0.
RecallReport recall(const std::vector<EvalRecord>& records,
                    const std::vector<geom::PointCloud>& model_points_by_record,
                    double threshold_fraction = 0.10);

void save_report_csv(const std::string& path, const RecallReport& report);
void save_report_json(const std::string& path, const RecallReport& report);

}  // namespace pointpose::metrics
