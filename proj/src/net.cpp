#include "pointpose/net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "pointpose/dataset.hpp"

namespace pointpose::net {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Neighbor selection

template <typename T>
void select_edge_rows(const T* rows, int64_t n, int64_t d, int64_t row_offset, int k,
                      int pool_mult, bool sparse, bool train_mode, uint64_t seed,
                      std::vector<int64_t>& out) {
    const int pool = sparse ? pool_mult * k : k;
    if (n <= pool) throw std::runtime_error("cloud too small for SparseEdge pool");

    std::vector<T> gram(static_cast<size_t>(n) * n), sqn(n), dist(static_cast<size_t>(n) * n);
    KOps<T>::gemm_a_bt(rows, rows, gram.data(), static_cast<int>(n), static_cast<int>(n),
                       static_cast<int>(d), false);
    for (int64_t i = 0; i < n; ++i) sqn[i] = gram[static_cast<size_t>(i) * n + i];
    KOps<T>::sqdist_from_gram(gram.data(), sqn.data(), dist.data(), static_cast<int>(n));

    out.resize(static_cast<size_t>(n) * k);
    parallel_for(n, [&](int64_t b, int64_t e) {
        std::vector<int> idx(static_cast<size_t>(n) - 1);
        for (int64_t i = b; i < e; ++i) {
            const T* di = dist.data() + static_cast<size_t>(i) * n;
            int w = 0;
            for (int64_t j = 0; j < n; ++j)
                if (j != i) idx[w++] = static_cast<int>(j);
            auto cmp = [di](int a, int b2) {
                return di[a] < di[b2] || (di[a] == di[b2] && a < b2);
            };
            std::nth_element(idx.begin(), idx.begin() + pool, idx.end(), cmp);
            std::sort(idx.begin(), idx.begin() + pool, cmp);

            int64_t* o = out.data() + static_cast<size_t>(i) * k;
            if (!sparse) {
                for (int j = 0; j < k; ++j) o[j] = row_offset + idx[j];
            } else if (!train_mode) {
                for (int j = 0; j < k; ++j) o[j] = row_offset + idx[3 * j];
            } else {
                Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
                std::vector<int> pos(pool);
                std::iota(pos.begin(), pos.end(), 0);
                std::vector<int> chosen;
                chosen.reserve(k);
                std::sample(pos.begin(), pos.end(), std::back_inserter(chosen), k, rng);
                for (int j = 0; j < k; ++j) o[j] = row_offset + idx[chosen[j]];
            }
        }
    }, 16);
}

template void select_edge_rows<float>(const float*, int64_t, int64_t, int64_t, int, int, bool,
                                      bool, uint64_t, std::vector<int64_t>&);
template void select_edge_rows<double>(const double*, int64_t, int64_t, int64_t, int, int, bool,
                                       bool, uint64_t, std::vector<int64_t>&);

template <typename T>
Mat<T> sparse_edge_feature(const Mat<T>& features, int k, int pool_mult, bool train_mode,
                           uint64_t seed) {
    const int64_t n = features.rows, d = features.cols;
    std::vector<int64_t> nbr;
    select_edge_rows<T>(features.data(), n, d, 0, k, pool_mult, true, train_mode, seed, nbr);
    Mat<T> out(n * k, 2 * d);
    for (int64_t i = 0; i < n; ++i) {
        const T* xi = features.row(i);
        for (int j = 0; j < k; ++j) {
            T* o = out.row(i * k + j);
            const T* xj = features.row(nbr[static_cast<size_t>(i) * k + j]);
            for (int64_t c = 0; c < d; ++c) {
                o[c] = xi[c];
                o[d + c] = xj[c] - xi[c];
            }
        }
    }
    return out;
}

template Mat<float> sparse_edge_feature<float>(const Mat<float>&, int, int, bool, uint64_t);
template Mat<double> sparse_edge_feature<double>(const Mat<double>&, int, int, bool, uint64_t);

// ---------------------------------------------------------------------------
// Parameter construction

namespace {

template <typename T>
void glorot_init(Mat<T>& w, Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    std::uniform_real_distribution<double> uni(-a, a);
    for (auto& v : w.v) v = static_cast<T>(uni(rng));
}

}  // namespace

template <typename T>
void Network<T>::init_params(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x9a2b));
    auto dense_block = [&](const std::string& name, int in, int out, bool bn) {
        glorot_init(params.add(name + ".W", in, out), rng);
        params.add(name + ".b", 1, out);
        if (bn) {
            params.add(name + ".bn.gamma", 1, out).fill(T(1));
            params.add(name + ".bn.beta", 1, out);
            params.add(name + ".bn.mean", 1, out, false);
            params.add(name + ".bn.var", 1, out, false).fill(T(1));
        }
    };

    int prev = 3;
    for (size_t i = 0; i < cfg.tn_mlp.size(); ++i) {
        dense_block("tn.mlp" + std::to_string(i), prev, cfg.tn_mlp[i], true);
        prev = cfg.tn_mlp[i];
    }
    for (size_t i = 0; i < cfg.tn_fc.size(); ++i) {
        dense_block("tn.fc" + std::to_string(i), prev, cfg.tn_fc[i], true);
        prev = cfg.tn_fc[i];
    }
    // Identity-at-start transform: zero weights, identity bias.
    params.add("tn.out.W", prev, 9);
    Mat<T>& tb = params.add("tn.out.b", 1, 9);
    tb.v = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};

    int prev_d = cfg.point_dim;
    for (size_t i = 0; i < cfg.edge_widths.size(); ++i) {
        dense_block("edge" + std::to_string(i), 2 * prev_d, cfg.edge_widths[i], true);
        prev_d = cfg.edge_widths[i];
    }
    int cat_w = std::accumulate(cfg.edge_widths.begin(), cfg.edge_widths.end(), 0);
    dense_block("global", cat_w, cfg.global_width, true);

    prev = cfg.global_width;
    for (size_t i = 0; i < cfg.cls_head.size(); ++i) {
        dense_block("cls.fc" + std::to_string(i), prev, cfg.cls_head[i], true);
        prev = cfg.cls_head[i];
    }
    dense_block("cls.out", prev, 2, false);

    int pp = cat_w + cfg.global_width;
    for (const char* head : {"seg", "vote"}) {
        prev = pp;
        for (size_t i = 0; i < cfg.point_head.size(); ++i) {
            dense_block(std::string(head) + ".fc" + std::to_string(i), prev, cfg.point_head[i], true);
            prev = cfg.point_head[i];
        }
        dense_block(std::string(head) + ".out", prev, head == std::string("seg") ? 2 : cfg.m, false);
    }
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
struct LeafSet {
    std::vector<std::pair<ParamEntry<T>*, typename Tape<T>::Ref>> leaves;
    typename Tape<T>::Ref get(Tape<T>& tape, ParamStore<T>& store, const std::string& name) {
        ParamEntry<T>& e = store.entry(name);
        for (auto& [pe, ref] : leaves)
            if (pe == &e) return ref;
        auto ref = e.trainable ? tape.leaf(e.value) : tape.input(e.value);
        leaves.push_back({&e, ref});
        return ref;
    }
    void harvest() {
        for (auto& [pe, ref] : leaves)
            if (pe->trainable && Tape<T>::has_grad(ref))
                for (size_t i = 0; i < pe->grad.size(); ++i) pe->grad.v[i] += ref->grad.v[i];
    }
};

template <typename T>
struct ForwardScratch {
    LeafSet<T> leaves;
    bool train_mode = false;
};

// The per-network scratch is kept function-local; dense helpers receive it.

template <typename T>
typename Tape<T>::Ref dense_helper(Network<T>& net, Tape<T>& tape, LeafSet<T>& leaves,
                                   typename Tape<T>::Ref x, const std::string& name) {
    auto w = leaves.get(tape, net.params, name + ".W");
    auto b = leaves.get(tape, net.params, name + ".b");
    return tape.linear(x, w, b);
}

template <typename T>
typename Tape<T>::Ref dense_bn_act_helper(Network<T>& net, Tape<T>& tape, LeafSet<T>& leaves,
                                          typename Tape<T>::Ref x, const std::string& name,
                                          bool train_mode) {
    auto y = dense_helper(net, tape, leaves, x, name);
    auto gamma = leaves.get(tape, net.params, name + ".bn.gamma");
    auto beta = leaves.get(tape, net.params, name + ".bn.beta");
    y = tape.batchnorm(y, gamma, beta, net.params.value(name + ".bn.mean"),
                       net.params.value(name + ".bn.var"), train_mode, net.bn_momentum,
                       static_cast<T>(net.cfg.bn_eps));
    return tape.leaky_relu(y, static_cast<T>(net.cfg.leaky_slope));
}

template <typename T>
typename Network<T>::ForwardResult Network<T>::forward(const Mat<T>& input, int batch,
                                                       bool train_mode, uint64_t seed,
                                                       GraphCache* cache) {
    const int64_t n = cfg.n;
    const int64_t R = static_cast<int64_t>(batch) * n;
    if (input.rows != R || input.cols != cfg.point_dim)
        throw std::runtime_error("forward: input shape mismatch (expected " + std::to_string(R) +
                                 "x" + std::to_string(cfg.point_dim) + ")");

    ForwardResult fr;
    Tape<T>& tp = fr.tape;
    for (int b = 0; b < batch; ++b) fr.segments.push_back({b * n, (b + 1) * n});
    LeafSet<T> leaves;

    auto in = tp.input(input);
    auto xyz = tp.slice_cols(in, 0, 3);

    // Transform net on positions only.
    auto h = xyz;
    for (size_t i = 0; i < cfg.tn_mlp.size(); ++i)
        h = dense_bn_act_helper(*this, tp, leaves, h, "tn.mlp" + std::to_string(i), train_mode);
    auto tg = tp.segment_max_rows(h, fr.segments);
    for (size_t i = 0; i < cfg.tn_fc.size(); ++i)
        tg = dense_bn_act_helper(*this, tp, leaves, tg, "tn.fc" + std::to_string(i), train_mode);
    fr.tn9 = dense_helper(*this, tp, leaves, tg, "tn.out");
    auto xyzt = tp.apply_transform(xyz, fr.tn9, fr.segments);

    auto cur = tp.concat_cols({xyzt, tp.slice_cols(in, 3, cfg.point_dim)});

    if (cache && !cache->filled) cache->block_edges.resize(cfg.edge_widths.size());

    std::vector<typename Tape<T>::Ref> block_outs;
    std::vector<int64_t> center_rows(static_cast<size_t>(R) * cfg.k);
    for (int64_t r = 0; r < R; ++r)
        for (int j = 0; j < cfg.k; ++j) center_rows[static_cast<size_t>(r) * cfg.k + j] = r;

    for (size_t bi = 0; bi < cfg.edge_widths.size(); ++bi) {
        std::vector<int64_t> edges;
        if (cache && cache->filled) {
            edges = cache->block_edges[bi];
        } else {
            const Mat<T>& src = cfg.static_graph ? xyzt->val : cur->val;
            edges.resize(static_cast<size_t>(R) * cfg.k);
            auto t0 = std::chrono::steady_clock::now();
            for (int b = 0; b < batch; ++b) {
                std::vector<int64_t> part;
                select_edge_rows<T>(src.row(static_cast<int64_t>(b) * n), n, src.cols,
                                    static_cast<int64_t>(b) * n, cfg.k, cfg.pool_mult,
                                    cfg.sparse_edge, train_mode,
                                    derive_seed(seed, bi * 1000 + static_cast<uint64_t>(b)), part);
                std::copy(part.begin(), part.end(),
                          edges.begin() + static_cast<size_t>(b) * n * cfg.k);
            }
            auto t1 = std::chrono::steady_clock::now();
            fr.edge_select_us +=
                std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count();
            if (cache) cache->block_edges[bi] = edges;
        }
        auto c = tp.gather_rows(cur, center_rows);
        auto nb = tp.gather_rows(cur, std::move(edges));
        auto e = tp.concat_cols({c, tp.sub(nb, c)});
        auto eh = dense_bn_act_helper(*this, tp, leaves, e, "edge" + std::to_string(bi), train_mode);
        cur = tp.group_max_rows(eh, cfg.k);
        block_outs.push_back(cur);
    }
    if (cache) cache->filled = true;

    auto cat = tp.concat_cols(block_outs);
    auto g = dense_bn_act_helper(*this, tp, leaves, cat, "global", train_mode);
    auto gmax = tp.segment_max_rows(g, fr.segments);

    auto hc = gmax;
    for (size_t i = 0; i < cfg.cls_head.size(); ++i)
        hc = dense_bn_act_helper(*this, tp, leaves, hc, "cls.fc" + std::to_string(i), train_mode);
    fr.label_logits = dense_helper(*this, tp, leaves, hc, "cls.out");

    auto pp = tp.concat_cols({cat, tp.tile_rows(gmax, fr.segments, R)});
    auto hs = pp;
    for (size_t i = 0; i < cfg.point_head.size(); ++i)
        hs = dense_bn_act_helper(*this, tp, leaves, hs, "seg.fc" + std::to_string(i), train_mode);
    fr.seg_logits = dense_helper(*this, tp, leaves, hs, "seg.out");
    auto hv = pp;
    for (size_t i = 0; i < cfg.point_head.size(); ++i)
        hv = dense_bn_act_helper(*this, tp, leaves, hv, "vote.fc" + std::to_string(i), train_mode);
    fr.vote_logits = dense_helper(*this, tp, leaves, hv, "vote.out");

    // Stash the leaf set on the tape for grad harvesting after backward.
    fr.harvest = [leaves]() mutable { leaves.harvest(); };
    return fr;
}

template <typename T>
typename Network<T>::LossRefs Network<T>::loss(ForwardResult& fwd,
                                               const std::vector<int32_t>& cloud_labels,
                                               const std::vector<int32_t>& seg_labels,
                                               const std::vector<int32_t>& feat_labels) {
    Tape<T>& tp = fwd.tape;
    const int64_t B = fwd.label_logits->val.rows;
    const int64_t R = fwd.seg_logits->val.rows;
    const int64_t n = R / B;
    if (static_cast<int64_t>(cloud_labels.size()) != B ||
        static_cast<int64_t>(seg_labels.size()) != R ||
        static_cast<int64_t>(feat_labels.size()) != R)
        throw std::runtime_error("loss: label sizes inconsistent");

    LossRefs out;
    std::vector<T> wl(B, static_cast<T>(1.0 / static_cast<double>(B)));
    out.label = tp.softmax_ce(fwd.label_logits, cloud_labels, wl);

    std::vector<T> ws(R, static_cast<T>(1.0 / static_cast<double>(R)));
    out.seg = tp.softmax_ce(fwd.seg_logits, seg_labels, ws);

    // Per-cloud normalization over on-object points (zero when none).
    std::vector<T> wf(R, T(0));
    for (int64_t b = 0; b < B; ++b) {
        int64_t cnt = 0;
        for (int64_t i = b * n; i < (b + 1) * n; ++i)
            if (seg_labels[i] == 1 && feat_labels[i] >= 0) ++cnt;
        if (cnt == 0) continue;
        T w = static_cast<T>(1.0 / (static_cast<double>(cnt) * static_cast<double>(B)));
        for (int64_t i = b * n; i < (b + 1) * n; ++i)
            if (seg_labels[i] == 1 && feat_labels[i] >= 0) wf[i] = w;
    }
    out.feat = tp.softmax_ce(fwd.vote_logits, feat_labels, wf);

    out.md = tp.orthogonality_penalty(fwd.tn9);

    LossWeights lw;
    out.total = tp.combine_scalars({out.label, out.seg, out.feat, out.md},
                                   {static_cast<T>(lw.label), static_cast<T>(lw.seg),
                                    static_cast<T>(lw.feat), static_cast<T>(lw.md)});
    return out;
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json config_to_json(const NetworkConfig& c) {
    return json{{"n", c.n},
                {"point_dim", c.point_dim},
                {"k", c.k},
                {"pool_mult", c.pool_mult},
                {"m", c.m},
                {"edge_widths", c.edge_widths},
                {"global_width", c.global_width},
                {"cls_head", c.cls_head},
                {"point_head", c.point_head},
                {"tn_mlp", c.tn_mlp},
                {"tn_fc", c.tn_fc},
                {"leaky_slope", c.leaky_slope},
                {"bn_eps", c.bn_eps},
                {"static_graph", c.static_graph},
                {"sparse_edge", c.sparse_edge}};
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig c;
    c.n = j.at("n");
    c.point_dim = j.at("point_dim");
    c.k = j.at("k");
    c.pool_mult = j.at("pool_mult");
    c.m = j.at("m");
    c.edge_widths = j.at("edge_widths").get<std::vector<int>>();
    c.global_width = j.at("global_width");
    c.cls_head = j.at("cls_head").get<std::vector<int>>();
    c.point_head = j.at("point_head").get<std::vector<int>>();
    c.tn_mlp = j.at("tn_mlp").get<std::vector<int>>();
    c.tn_fc = j.at("tn_fc").get<std::vector<int>>();
    c.leaky_slope = j.at("leaky_slope");
    c.bn_eps = j.at("bn_eps");
    c.static_graph = j.at("static_graph");
    c.sparse_edge = j.at("sparse_edge");
    return c;
}

constexpr char kCkptMagic[8] = {'P', 'P', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void wr(std::ostream& o, T v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T rd(std::istream& i) {
    T v;
    i.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void write_mat(std::ostream& o, const Mat<float>& m) {
    wr<int64_t>(o, m.rows);
    wr<int64_t>(o, m.cols);
    o.write(reinterpret_cast<const char*>(m.v.data()), static_cast<std::streamsize>(m.size() * 4));
}

Mat<float> read_mat(std::istream& i) {
    int64_t r = rd<int64_t>(i), c = rd<int64_t>(i);
    Mat<float> m(r, c);
    i.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.size() * 4));
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Network<float>& net, int64_t step, int epoch,
                     const TrainConfig& tc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kCkptMagic, 8);
    json j;
    j["config"] = config_to_json(net.cfg);
    j["step"] = step;
    j["epoch"] = epoch;
    j["train"] = {{"batch", tc.batch},       {"epochs", tc.epochs},
                  {"lr0", tc.lr0},           {"lr_decay_steps", tc.lr_decay_steps},
                  {"lr_decay_rate", tc.lr_decay_rate}, {"seed", tc.seed},
                  {"augment", tc.augment}};
    std::string js = j.dump();
    wr<uint32_t>(out, static_cast<uint32_t>(js.size()));
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    const auto& entries = net.params.entries();
    wr<uint32_t>(out, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        wr<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        wr<uint8_t>(out, e.trainable ? 1 : 0);
        write_mat(out, e.value);
        if (e.trainable) {
            write_mat(out, e.mom);
            write_mat(out, e.vel);
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Network<float> load_checkpoint(const std::string& path, int64_t& step, int& epoch,
                               TrainConfig* tc) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0) throw std::runtime_error(path + ": bad checkpoint magic");
    uint32_t jlen = rd<uint32_t>(in);
    std::string js(jlen, '\0');
    in.read(js.data(), jlen);
    json j = json::parse(js);
    NetworkConfig cfg = config_from_json(j.at("config"));
    step = j.at("step");
    epoch = j.at("epoch");
    if (tc) {
        const auto& t = j.at("train");
        tc->batch = t.at("batch");
        tc->epochs = t.at("epochs");
        tc->lr0 = t.at("lr0");
        tc->lr_decay_steps = t.at("lr_decay_steps");
        tc->lr_decay_rate = t.at("lr_decay_rate");
        tc->seed = t.at("seed");
        tc->augment = t.at("augment");
    }
    Network<float> net(cfg);
    net.init_params(0);
    uint32_t count = rd<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = rd<uint16_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        bool trainable = rd<uint8_t>(in) != 0;
        Mat<float> value = read_mat(in);
        ParamEntry<float>& e = net.params.entry(name);
        if (!e.value.same_shape(value)) throw std::runtime_error(path + ": shape mismatch for " + name);
        e.value = std::move(value);
        if (trainable) {
            e.mom = read_mat(in);
            e.vel = read_mat(in);
        }
    }
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    return net;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::string ckpt_name(const std::string& dir, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/ckpt_epoch_%03d.bin", epoch);
    return dir + buf;
}

struct BatchTensors {
    Mat<float> input;
    std::vector<int32_t> cloud_labels, seg_labels, feat_labels;
};

void fill_batch(BatchTensors& bt, const std::vector<dataset::TrainSample>& samples,
                const std::vector<int64_t>& ids, int n) {
    const int B = static_cast<int>(ids.size());
    bt.input = Mat<float>(static_cast<int64_t>(B) * n, 9);
    bt.cloud_labels.resize(B);
    bt.seg_labels.assign(static_cast<size_t>(B) * n, 0);
    bt.feat_labels.assign(static_cast<size_t>(B) * n, -1);
    for (int b = 0; b < B; ++b) {
        const auto& s = samples[ids[b]];
        bt.cloud_labels[b] = s.label;
        for (int i = 0; i < n; ++i) {
            const auto& p = s.cloud.cloud.points[i];
            float* row = bt.input.row(static_cast<int64_t>(b) * n + i);
            for (int d = 0; d < 3; ++d) row[d] = static_cast<float>(p.position[d]);
            for (int d = 0; d < 3; ++d) row[3 + d] = static_cast<float>(p.normal[d]);
            for (int d = 0; d < 3; ++d) row[6 + d] = static_cast<float>(p.color[d]);
            bt.seg_labels[static_cast<size_t>(b) * n + i] = s.seg[i];
            bt.feat_labels[static_cast<size_t>(b) * n + i] = s.feat[i];
        }
    }
}

}  // namespace

std::string train(const std::string& dataset_dir, const NetworkConfig& ncfg,
                  const TrainConfig& tcfg, const std::string& out_dir,
                  std::vector<EpochStats>* stats_out) {
    dataset::DatasetManifest manifest = dataset::load_manifest(dataset_dir);
    if (manifest.m != ncfg.m)
        throw std::runtime_error("feature count mismatch: dataset m=" + std::to_string(manifest.m) +
                                 " config m=" + std::to_string(ncfg.m));
    if (manifest.n_points != ncfg.n)
        throw std::runtime_error("point count mismatch: dataset n=" +
                                 std::to_string(manifest.n_points) +
                                 " config n=" + std::to_string(ncfg.n));
    fs::create_directories(out_dir);

    // Records fit in memory at desk scale; load once.
    auto paths = dataset::list_samples(dataset_dir, manifest.count);
    std::vector<dataset::TrainSample> samples;
    samples.reserve(paths.size());
    for (const auto& p : paths) samples.push_back(dataset::load_sample(p));

    int64_t step = 0;
    int start_epoch = 0;
    Network<float> net(ncfg);
    bool resumed = false;
    for (int e = tcfg.epochs - 1; e >= 0; --e) {
        std::string p = ckpt_name(out_dir, e);
        if (fs::exists(p)) {
            int epoch_loaded = 0;
            net = load_checkpoint(p, step, epoch_loaded);
            start_epoch = epoch_loaded + 1;
            resumed = true;
            log_info("train: resumed from " + p);
            break;
        }
    }
    if (!resumed) net.init_params(tcfg.seed);

    std::string csv_path = out_dir + "/metrics.csv";
    std::ofstream csv;
    if (!resumed || !fs::exists(csv_path)) {
        csv.open(csv_path);
        csv << "# batch=" << tcfg.batch << " epochs=" << tcfg.epochs
            << " lr_decay_steps=" << tcfg.lr_decay_steps << "\n";
        csv << "epoch,step,lr,L_l,L_s,L_f,L_MD,label_acc\n";
    } else {
        csv.open(csv_path, std::ios::app);
    }

    dataset::AugmentConfig acfg = manifest.augment;
    acfg.enabled = acfg.enabled && tcfg.augment;

    const int64_t count = manifest.count;
    std::string last_ckpt = resumed ? ckpt_name(out_dir, start_epoch - 1) : "";

    for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
        std::vector<int64_t> order(count);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(tcfg.seed, 0xE0, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_l = 0, sum_s = 0, sum_f = 0, sum_md = 0;
        int64_t correct = 0, seen = 0, batches = 0;

        for (int64_t bs = 0; bs < count; bs += tcfg.batch) {
            int64_t be = std::min(count, bs + tcfg.batch);
            std::vector<int64_t> ids(order.begin() + bs, order.begin() + be);
            int B = static_cast<int>(ids.size());

            std::vector<dataset::TrainSample> batch_samples(B);
            for (int b = 0; b < B; ++b) {
                if (acfg.enabled) {
                    uint64_t aseed = derive_seed(derive_seed(tcfg.seed, 0xA6, epoch),
                                                 static_cast<uint64_t>(ids[b]));
                    batch_samples[b] = dataset::augment(samples[ids[b]], acfg, aseed);
                } else {
                    batch_samples[b] = samples[ids[b]];
                }
            }
            std::vector<int64_t> local(B);
            std::iota(local.begin(), local.end(), 0);
            BatchTensors bt;
            fill_batch(bt, batch_samples, local, ncfg.n);

            net.bn_momentum = static_cast<float>(bn_momentum_at_step(tcfg, step));
            uint64_t fwd_seed = derive_seed(tcfg.seed, 0x5E, static_cast<uint64_t>(step));
            auto fwd = net.forward(bt.input, B, true, fwd_seed);
            auto ls = net.loss(fwd, bt.cloud_labels, bt.seg_labels, bt.feat_labels);

            double lv = ls.total->val.v[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                         " (batch seed " + std::to_string(fwd_seed) + ")");
            sum_l += ls.label->val.v[0];
            sum_s += ls.seg->val.v[0];
            sum_f += ls.feat->val.v[0];
            sum_md += ls.md->val.v[0];

            for (int b = 0; b < B; ++b) {
                const float* lg = fwd.label_logits->val.row(b);
                int pred = lg[1] > lg[0] ? 1 : 0;
                if (pred == bt.cloud_labels[b]) ++correct;
                ++seen;
            }

            net.params.zero_grads();
            fwd.tape.backward(ls.total);
            fwd.harvest();

            double lr = lr_at_step(tcfg, step);
            float bc1 = 1.0f - static_cast<float>(std::pow(tcfg.adam_beta1, step + 1));
            float bc2 = 1.0f - static_cast<float>(std::pow(tcfg.adam_beta2, step + 1));
            for (auto& e : net.params.entries()) {
                if (!e.trainable) continue;
                kern::active().adam_step(e.value.data(), e.mom.data(), e.vel.data(), e.grad.data(),
                                         e.value.size(), static_cast<float>(lr),
                                         static_cast<float>(tcfg.adam_beta1),
                                         static_cast<float>(tcfg.adam_beta2),
                                         static_cast<float>(tcfg.adam_eps), bc1, bc2);
            }
            ++step;
            ++batches;
        }

        EpochStats es;
        es.epoch = epoch;
        es.step = step;
        es.lr = lr_at_step(tcfg, step > 0 ? step - 1 : 0);
        es.loss_label = sum_l / batches;
        es.loss_seg = sum_s / batches;
        es.loss_feat = sum_f / batches;
        es.loss_md = sum_md / batches;
        es.label_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        if (stats_out) stats_out->push_back(es);
        csv << es.epoch << "," << es.step << "," << es.lr << "," << es.loss_label << ","
            << es.loss_seg << "," << es.loss_feat << "," << es.loss_md << ","
            << es.label_accuracy << "\n";
        csv.flush();

        last_ckpt = ckpt_name(out_dir, epoch);
        save_checkpoint(last_ckpt, net, step, epoch, tcfg);
        log_info("train: epoch " + std::to_string(epoch) + " done, acc " +
                 std::to_string(es.label_accuracy));
    }
    return last_ckpt;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult gradcheck(const NetworkConfig& cfg, uint64_t seed, int coords,
                          const std::string& fault_param, double fault_scale) {
    Network<double> net(cfg);
    net.init_params(derive_seed(seed, 1));

    // Plausible running statistics for frozen batch norm.
    Rng stat_rng(derive_seed(seed, 2));
    std::normal_distribution<double> sn(0.0, 0.2);
    std::uniform_real_distribution<double> sv(0.6, 1.4);
    for (auto& e : net.params.entries()) {
        if (e.name.find(".bn.mean") != std::string::npos)
            for (auto& v : e.value.v) v = sn(stat_rng);
        if (e.name.find(".bn.var") != std::string::npos)
            for (auto& v : e.value.v) v = sv(stat_rng);
    }

    const int B = 2;
    const int64_t R = static_cast<int64_t>(B) * cfg.n;
    Rng rng(derive_seed(seed, 3));
    std::normal_distribution<double> pos(0.0, 40.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Mat<double> input(R, 9);
    for (int64_t r = 0; r < R; ++r) {
        double* row = input.row(r);
        for (int d = 0; d < 3; ++d) row[d] = pos(rng);
        Eigen::Vector3d nv(uni(rng) - 0.5, uni(rng) - 0.5, uni(rng) - 0.5);
        nv.normalize();
        for (int d = 0; d < 3; ++d) row[3 + d] = nv[d];
        for (int d = 0; d < 3; ++d) row[6 + d] = uni(rng);
    }
    std::vector<int32_t> cloud_labels(B), seg_labels(R), feat_labels(R);
    for (int b = 0; b < B; ++b) cloud_labels[b] = static_cast<int32_t>(rng() % 2);
    for (int64_t r = 0; r < R; ++r) {
        seg_labels[r] = static_cast<int32_t>(rng() % 2);
        feat_labels[r] = seg_labels[r] ? static_cast<int32_t>(rng() % cfg.m) : -1;
    }

    GraphCache cache;
    auto eval = [&]() -> double {
        auto fwd = net.forward(input, B, false, derive_seed(seed, 4), &cache);
        auto ls = net.loss(fwd, cloud_labels, seg_labels, feat_labels);
        return ls.total->val.v[0];
    };

    // Analytic gradients on the frozen graph.
    net.params.zero_grads();
    {
        auto fwd = net.forward(input, B, false, derive_seed(seed, 4), &cache);
        auto ls = net.loss(fwd, cloud_labels, seg_labels, feat_labels);
        fwd.tape.backward(ls.total);
        fwd.harvest();
    }
    if (!fault_param.empty()) {
        auto& e = net.params.entry(fault_param);
        for (auto& g : e.grad.v) g *= fault_scale;
    }

    struct Coord {
        ParamEntry<double>* e;
        size_t i;
    };
    std::vector<Coord> all;
    for (auto& e : net.params.entries())
        if (e.trainable)
            for (size_t i = 0; i < e.value.size(); ++i) all.push_back({&e, i});
    Rng pick_rng(derive_seed(seed, 5));
    std::shuffle(all.begin(), all.end(), pick_rng);
    int n_check = std::min<int>(coords, static_cast<int>(all.size()));

    const double h = 1e-3;
    GradCheckResult res;
    res.coords_checked = n_check;
    for (int c = 0; c < n_check; ++c) {
        auto [e, i] = all[c];
        double saved = e->value.v[i];
        e->value.v[i] = saved + h;
        double lp = eval();
        e->value.v[i] = saved - h;
        double lm = eval();
        e->value.v[i] = saved;
        double fd = (lp - lm) / (2.0 * h);
        double an = e->grad.v[i];
        double abs_err = std::abs(an - fd);
        double rel = abs_err / std::max({std::abs(an), std::abs(fd), 1e-6});
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_param = e->name;
        }
        res.max_abs_err = std::max(res.max_abs_err, abs_err);
    }
    return res;
}

}  // namespace pointpose::net
