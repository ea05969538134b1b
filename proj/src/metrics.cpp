#include "pointpose/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace pointpose::metrics {

double add_error(const Pose& gt, const Pose& est, const geom::PointCloud& model_points) {
    if (model_points.size() == 0) throw std::invalid_argument("add_error: empty model cloud");
    double sum = 0.0;
    for (const auto& p : model_points.points)
        sum += (est.apply(p.position) - gt.apply(p.position)).norm();
    return sum / static_cast<double>(model_points.size());
}

double adi_error(const Pose& gt, const Pose& est, const geom::PointCloud& model_points) {
    if (model_points.size() == 0) throw std::invalid_argument("adi_error: empty model cloud");
    std::vector<geom::Vec3> est_pts(model_points.size());
    for (size_t i = 0; i < model_points.size(); ++i)
        est_pts[i] = est.apply(model_points.points[i].position);
    geom::NeighborIndex idx = geom::NeighborIndex::build(est_pts);
    double sum = 0.0;
    for (const auto& p : model_points.points)
        sum += idx.nearest(gt.apply(p.position)).second;
    return sum / static_cast<double>(model_points.size());
}

RecallReport recall(const std::vector<EvalRecord>& records,
                    const std::vector<geom::PointCloud>& model_points_by_record,
                    double threshold_fraction) {
    if (records.size() != model_points_by_record.size())
        throw std::invalid_argument("recall: record/model size mismatch");
    std::map<int, RecallReport::PerObject> by_obj;
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        auto& po = by_obj[r.object_id];
        po.object_id = r.object_id;
        ++po.total;
        if (!r.estimate.has_value()) continue;
        double err = r.symmetric ? adi_error(r.ground_truth, *r.estimate, model_points_by_record[i])
                                 : add_error(r.ground_truth, *r.estimate, model_points_by_record[i]);
        if (err < threshold_fraction * r.diagonal) ++po.hits;
    }
    RecallReport rep;
    double sum = 0.0;
    for (auto& [id, po] : by_obj) {
        po.recall = po.total > 0 ? static_cast<double>(po.hits) / po.total : 0.0;
        sum += po.recall;
        rep.per_object.push_back(po);
    }
    rep.mean_recall = by_obj.empty() ? 0.0 : sum / static_cast<double>(by_obj.size());
    return rep;
}

void save_report_csv(const std::string& path, const RecallReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "object,n_scenes,recall\n";
    for (const auto& po : report.per_object)
        out << po.object_id << "," << po.total << "," << po.recall << "\n";
    out << "mean," << "" << "," << report.mean_recall << "\n";
}

void save_report_json(const std::string& path, const RecallReport& report) {
    nlohmann::json j;
    j["mean_recall"] = report.mean_recall;
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& po : report.per_object)
        objs.push_back({{"object", po.object_id}, {"n_scenes", po.total}, {"recall", po.recall}});
    j["objects"] = objs;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace pointpose::metrics
