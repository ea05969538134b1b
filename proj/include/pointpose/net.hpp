#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pointpose/tensor.hpp"
#include "pointpose/util.hpp"

namespace pointpose::net {

struct NetworkConfig {
    int n = 2048;       // points per cloud
    int point_dim = 9;  // xyz + normal + rgb
    int k = 10;         // neighbors kept per point
    int pool_mult = 3;  // neighbor pool = pool_mult * k
    int m = 1;          // feature points on the model
    std::vector<int> edge_widths{64, 64, 64};
    int global_width = 1024;
    std::vector<int> cls_head{512, 256};
    std::vector<int> point_head{512, 256};
    std::vector<int> tn_mlp{64, 128, 1024};
    std::vector<int> tn_fc{512, 256};
    float leaky_slope = 0.2f;
    float bn_eps = 1e-3f;
    bool static_graph = false;  // neighbors from transformed XYZ instead of layer features
    bool sparse_edge = true;    // false: plain k-NN edge (ablation)

    // Paper-scale defaults (above) vs. the reduced desk preset.
    static NetworkConfig paper_preset(int m_count) {
        NetworkConfig c;
        c.m = m_count;
        return c;
    }
    static NetworkConfig desk_preset(int m_count) {
        NetworkConfig c;
        c.n = 512;
        c.m = m_count;
        c.edge_widths = {16, 16, 16};
        c.global_width = 128;
        c.cls_head = {64, 32};
        c.point_head = {64, 32};
        c.tn_mlp = {16, 32, 64};
        c.tn_fc = {32};
        return c;
    }
    // Tiny configuration for gradient checking.
    static NetworkConfig tiny_preset(int m_count = 3) {
        NetworkConfig c;
        c.n = 24;
        c.k = 3;
        c.m = m_count;
        c.edge_widths = {6, 8};
        c.global_width = 16;
        c.cls_head = {8};
        c.point_head = {8};
        c.tn_mlp = {6, 8};
        c.tn_fc = {8};
        return c;
    }

    void validate() const {
        if (k < 1) throw std::invalid_argument("NetworkConfig: k must be >= 1");
        if (pool_mult * k > n) throw std::invalid_argument("NetworkConfig: pool larger than cloud");
        if (m < 1) throw std::invalid_argument("NetworkConfig: m must be >= 1");
    }
};

template <typename T>
struct ParamEntry {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
    Mat<T> mom, vel;  // optimizer moments (trainable entries only)
    bool trainable = true;
};

template <typename T>
class ParamStore {
  public:
    Mat<T>& add(const std::string& name, int64_t rows, int64_t cols, bool trainable = true) {
        if (index_.count(name)) throw std::runtime_error("duplicate parameter " + name);
        index_[name] = entries_.size();
        entries_.push_back(ParamEntry<T>{name, Mat<T>(rows, cols), Mat<T>(rows, cols),
                                         trainable ? Mat<T>(rows, cols) : Mat<T>{},
                                         trainable ? Mat<T>(rows, cols) : Mat<T>{}, trainable});
        return entries_.back().value;
    }
    ParamEntry<T>& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown parameter " + name);
        return entries_[it->second];
    }
    const ParamEntry<T>& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown parameter " + name);
        return entries_[it->second];
    }
    Mat<T>& value(const std::string& name) { return entry(name).value; }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::vector<ParamEntry<T>>& entries() { return entries_; }
    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(T(0));
    }
    size_t trainable_count() const {
        size_t c = 0;
        for (const auto& e : entries_)
            if (e.trainable) c += e.value.size();
        return c;
    }

  private:
    std::vector<ParamEntry<T>> entries_;
    std::map<std::string, size_t> index_;
};

// Neighbor rows chosen per edge block, cached so a gradient check can pin
// the graph across finite-difference evaluations.
struct GraphCache {
    bool filled = false;
    std::vector<std::vector<int64_t>> block_edges;
};

// Plain network outputs detached from the tape.
struct NetworkOutput {
    Mat<float> label_logits;  // B x 2
    Mat<float> seg_logits;    // B*n x 2
    Mat<float> vote_logits;   // B*n x m
};

// Row-major softmax helper (inference side).
template <typename T>
inline void softmax_rows(const Mat<T>& logits, Mat<T>& out) {
    out = Mat<T>(logits.rows, logits.cols);
    for (int64_t r = 0; r < logits.rows; ++r) {
        const T* l = logits.row(r);
        T* p = out.row(r);
        T mx = l[0];
        for (int64_t c = 1; c < logits.cols; ++c) mx = std::max(mx, l[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < logits.cols; ++c) {
            p[c] = std::exp(l[c] - mx);
            sum += p[c];
        }
        for (int64_t c = 0; c < logits.cols; ++c) p[c] = static_cast<T>(p[c] / sum);
    }
}

// Per-point neighbor selection for one sample whose feature rows start at
// `row_offset`. Pool of pool_size nearest (self excluded, sorted by distance
// then index); sparse mode keeps every third at test time or a random k-subset
// at train time; dense mode keeps the first k.
template <typename T>
void select_edge_rows(const T* rows, int64_t n, int64_t d, int64_t row_offset, int k,
                      int pool_mult, bool sparse, bool train_mode, uint64_t seed,
                      std::vector<int64_t>& out);

template <typename T>
class Network {
  public:
    using Ref = typename Tape<T>::Ref;

    explicit Network(const NetworkConfig& config) : cfg(config) { cfg.validate(); }

    void init_params(uint64_t seed);

    struct ForwardResult {
        Tape<T> tape;
        Ref label_logits = nullptr;
        Ref seg_logits = nullptr;
        Ref vote_logits = nullptr;
        Ref tn9 = nullptr;
        std::vector<std::pair<int64_t, int64_t>> segments;
        // Copies leaf gradients back into the parameter store after backward.
        std::function<void()> harvest;
        // Selection-step timing of the neighbor gather, microseconds.
        double edge_select_us = 0.0;
    };

    // input: (batch*cfg.n) x 9, row blocks per sample.
    ForwardResult forward(const Mat<T>& input, int batch, bool train_mode, uint64_t seed,
                          GraphCache* cache = nullptr);

    struct LossRefs {
        Ref total = nullptr, label = nullptr, seg = nullptr, feat = nullptr, md = nullptr;
    };
    // cloud_labels: B entries {0,1}; seg_labels/feat_labels: B*n entries,
    // feat label -1 where off-object.
    LossRefs loss(ForwardResult& fwd, const std::vector<int32_t>& cloud_labels,
                  const std::vector<int32_t>& seg_labels, const std::vector<int32_t>& feat_labels);

    NetworkConfig cfg;
    ParamStore<T> params;
    T bn_momentum = T(0.9);

};

// Loss weights.
struct LossWeights {
    double label = 0.12, seg = 0.22, feat = 0.66, md = 1e-3;
};

// Single-sample edge feature (n*k x 2d), exposed for direct testing.
template <typename T>
Mat<T> sparse_edge_feature(const Mat<T>& features, int k, int pool_mult, bool train_mode,
                           uint64_t seed);

// ---------------------------------------------------------------------------
// Training & checkpoints (float path), gradcheck (double path)

struct TrainConfig {
    int batch = 48;
    int epochs = 40;
    double lr0 = 1e-3;
    int64_t lr_decay_steps = 337620;
    double lr_decay_rate = 0.5;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    // Batch-norm momentum schedule: starts at 0.9, the gap to 0.99 halves on
    // the same step interval as the learning rate.
    double bn_momentum0 = 0.9, bn_momentum_max = 0.99;
    uint64_t seed = 1;
    bool augment = true;

    static TrainConfig desk_preset() {
        TrainConfig t;
        t.batch = 16;
        t.epochs = 20;
        t.lr_decay_steps = 2000;
        return t;
    }
};

inline double lr_at_step(const TrainConfig& tc, int64_t step) {
    return tc.lr0 * std::pow(tc.lr_decay_rate, static_cast<double>(step / tc.lr_decay_steps));
}
inline double bn_momentum_at_step(const TrainConfig& tc, int64_t step) {
    double gap = (1.0 - tc.bn_momentum0) *
                 std::pow(0.5, static_cast<double>(step / tc.lr_decay_steps));
    return std::min(tc.bn_momentum_max, 1.0 - gap);
}

void save_checkpoint(const std::string& path, const Network<float>& net, int64_t step, int epoch,
                     const TrainConfig& tc);
// Returns step/epoch through out-params; the network is reconstructed from
// the stored config.
Network<float> load_checkpoint(const std::string& path, int64_t& step, int& epoch,
                               TrainConfig* tc = nullptr);

struct EpochStats {
    int epoch = 0;
    int64_t step = 0;
    double lr = 0.0;
    double loss_label = 0.0, loss_seg = 0.0, loss_feat = 0.0, loss_md = 0.0;
    double label_accuracy = 0.0;
};

// Mini-batch training over a dataset directory (see dataset module).
// Checkpoints per epoch into out_dir; resumes from the newest checkpoint.
std::string train(const std::string& dataset_dir, const NetworkConfig& ncfg,
                  const TrainConfig& tcfg, const std::string& out_dir,
                  std::vector<EpochStats>* stats_out = nullptr);

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int coords_checked = 0;
    std::string worst_param;
};

// Central finite differences (64-bit, step 1e-3) against analytic gradients
// on a frozen-graph, frozen-batchnorm tiny network.
GradCheckResult gradcheck(const NetworkConfig& cfg, uint64_t seed, int coords = 240,
                          const std::string& fault_param = "", double fault_scale = 1.0);

}  // namespace pointpose::net
