#pragma once

#include <string>
#include <vector>

#include "pointpose/net.hpp"

namespace pointpose::vote {

struct Correspondence {
    int point_index = 0;    // scene point (candidate-cloud slot)
    int feature_index = 0;  // model feature point
    double strength = 0.0;  // softmaxed vote probability
};

struct VoteConfig {
    double seg_threshold = 0.5;
    double tau = 0.95;

    void check() const {
        if (seg_threshold <= 0.0 || seg_threshold >= 1.0)
            throw std::invalid_argument("VoteConfig: seg threshold outside (0,1)");
        if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("VoteConfig: tau outside (0,1]");
    }
};

// Foreground points (softmaxed probability >= threshold) vote for every
// feature whose softmaxed vote clears tau * max; the argmax always survives
// (ties accepted, so tau = 1 keeps exactly the maxima).
std::vector<Correspondence> extract_matches(const net::NetworkOutput& output,
                                            const VoteConfig& cfg);

// Per-feature correspondence counts, length m.
std::vector<int> vote_histogram(const std::vector<Correspondence>& matches, int m);

void save_matches_csv(const std::string& path, const std::vector<Correspondence>& matches);

}  // namespace pointpose::vote
