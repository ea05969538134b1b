#include "pointpose/vote.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace pointpose::vote {

std::vector<Correspondence> extract_matches(const net::NetworkOutput& output,
                                            const VoteConfig& cfg) {
    cfg.check();
    const auto& seg = output.seg_logits;
    const auto& votes = output.vote_logits;
    if (seg.rows != votes.rows) throw std::invalid_argument("extract_matches: row mismatch");
    const int64_t n = seg.rows;
    const int64_t m = votes.cols;
    if (m < 1) throw std::invalid_argument("extract_matches: m must be >= 1");

    std::vector<Correspondence> out;
    std::vector<double> p(m);
    for (int64_t i = 0; i < n; ++i) {
        // two-class softmax for the foreground probability
        const float* sl = seg.row(i);
        double fg = 1.0 / (1.0 + std::exp(static_cast<double>(sl[0]) - sl[1]));
        if (fg < cfg.seg_threshold) continue;

        const float* vl = votes.row(i);
        double mx = vl[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(vl[j]));
        double sum = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            p[j] = std::exp(vl[j] - mx);
            sum += p[j];
        }
        double vmax = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            p[j] /= sum;
            vmax = std::max(vmax, p[j]);
        }
        double cut = cfg.tau * vmax;
        for (int64_t j = 0; j < m; ++j)
            if (p[j] >= cut)
                out.push_back({static_cast<int>(i), static_cast<int>(j), p[j]});
    }
    return out;
}

std::vector<int> vote_histogram(const std::vector<Correspondence>& matches, int m) {
    std::vector<int> hist(m, 0);
    for (const auto& c : matches) {
        if (c.feature_index < 0 || c.feature_index >= m)
            throw std::invalid_argument("vote_histogram: feature index out of range");
        ++hist[c.feature_index];
    }
    return hist;
}

void save_matches_csv(const std::string& path, const std::vector<Correspondence>& matches) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "point_index,feature_index,strength\n";
    for (const auto& c : matches)
        out << c.point_index << "," << c.feature_index << "," << c.strength << "\n";
}

}  // namespace pointpose::vote
