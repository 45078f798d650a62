#include "hfcr/hfrp.hpp"

#include "hfcr/hffp.hpp"

#include <cmath>
#include <random>

namespace hfcr {

namespace {

template <typename T>
struct Projection {
    Var<T> q, k, v;
};

template <typename T>
Projection<T> project(const Var<T>& x, Parameter<T>& wq, Parameter<T>& wk, Parameter<T>& wv) {
    Graph<T>& g = x.graph();
    return {matmul(x, g.parameter(wq)), matmul(x, g.parameter(wk)), matmul(x, g.parameter(wv))};
}

template <typename T>
Projection<T> project_channel(const Var<T>& x, HfrpParams<T>& p) {
    return project(x, p.ac_q, p.ac_k, p.ac_v);
}

template <typename T>
Projection<T> project_spatial(const Var<T>& x, HfrpParams<T>& p) {
    return project(x, p.as_q, p.as_k, p.as_v);
}

template <typename T>
T channel_scale(const HfrpParams<T>& p) {
    return T{1} / std::sqrt(static_cast<T>(p.r));
}

template <typename T>
T spatial_scale(const HfrpParams<T>& p) {
    return T{1} / std::sqrt(static_cast<T>(p.d));
}

template <typename T>
Var<T> cfr_query_projected(const Projection<T>& query, std::span<const Projection<T>> shots, T factor) {
    Var<T> acc = scaled_dot_attention(query.q, shots[0].k, shots[0].v, factor);
    for (std::size_t k = 1; k < shots.size(); ++k) acc = add(acc, scaled_dot_attention(query.q, shots[k].k, shots[k].v, factor));
    return scale(acc, T{1} / static_cast<T>(shots.size()));
}

template <typename T>
Var<T> cfr_support_projected(std::span<const Projection<T>> shots, const Projection<T>& query, T factor) {
    std::vector<Var<T>> blocks;
    blocks.reserve(shots.size());
    for (const auto& s : shots) blocks.push_back(scaled_dot_attention(s.q, query.k, query.v, factor));
    return concat<T>(blocks, 1);
}

template <typename T>
void check_channel(const Var<T>& x, const HfrpParams<T>& p, const char* op) {
    if (x.shape() != Shape{p.d, p.r}) {
        throw ShapeError(std::string(op) + ": expected channel view " + to_string(Shape{p.d, p.r}) + ", got " +
                         to_string(x.shape()));
    }
}

template <typename T>
void check_spatial(const Var<T>& q, const Var<T>& stack, const HfrpParams<T>& p, const char* op) {
    if (q.shape().size() != 2 || stack.shape().size() != 2 || q.shape()[1] != p.d || stack.shape()[1] != p.d) {
        throw ShapeError(std::string(op) + ": spatial views must have " + std::to_string(p.d) + " columns, got " +
                         to_string(q.shape()) + " and " + to_string(stack.shape()));
    }
}

template <typename T>
Tensor<T> random_projection(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
    Tensor<T> t(Shape{n, n});
    for (auto& v : t.data()) v = static_cast<T>(normal(rng));
    return t;
}

}  // namespace

template <typename T>
HfrpParams<T>::HfrpParams(std::size_t d_, std::size_t h_, std::size_t w_, std::uint64_t seed)
    : d(d_), h(h_), w(w_), r(h_ * w_) {
    if (d == 0 || r == 0) throw ShapeError("HfrpParams: d, h, w must be positive");
    std::mt19937_64 rng(seed);
    ac_q = Parameter<T>("hfrp.ac_q", random_projection<T>(r, rng));
    ac_k = Parameter<T>("hfrp.ac_k", random_projection<T>(r, rng));
    ac_v = Parameter<T>("hfrp.ac_v", random_projection<T>(r, rng));
    as_q = Parameter<T>("hfrp.as_q", random_projection<T>(d, rng));
    as_k = Parameter<T>("hfrp.as_k", random_projection<T>(d, rng));
    as_v = Parameter<T>("hfrp.as_v", random_projection<T>(d, rng));
    pos_enc = sinusoidal_position_encoding<T>(d, h, w);
}

template <typename T>
std::vector<Parameter<T>*> HfrpParams<T>::channel_parameters() {
    return {&ac_q, &ac_k, &ac_v};
}

template <typename T>
std::vector<Parameter<T>*> HfrpParams<T>::spatial_parameters() {
    return {&as_q, &as_k, &as_v};
}

template <typename T>
Var<T> cfr_query(const Var<T>& query, std::span<const Var<T>> shots, HfrpParams<T>& p) {
    if (shots.empty()) throw std::invalid_argument("cfr_query: empty support list");
    check_channel(query, p, "cfr_query");
    std::vector<Projection<T>> sp;
    for (const auto& s : shots) {
        check_channel(s, p, "cfr_query");
        sp.push_back(project_channel(s, p));
    }
    return cfr_query_projected<T>(project_channel(query, p), sp, channel_scale(p));
}

template <typename T>
Var<T> cfr_support(std::span<const Var<T>> shots, const Var<T>& query, HfrpParams<T>& p) {
    if (shots.empty()) throw std::invalid_argument("cfr_support: empty support list");
    check_channel(query, p, "cfr_support");
    std::vector<Projection<T>> sp;
    for (const auto& s : shots) {
        check_channel(s, p, "cfr_support");
        sp.push_back(project_channel(s, p));
    }
    return cfr_support_projected<T>(sp, project_channel(query, p), channel_scale(p));
}

template <typename T>
Var<T> sfr_query(const Var<T>& query, const Var<T>& support_stack, HfrpParams<T>& p) {
    check_spatial(query, support_stack, p, "sfr_query");
    const auto q = project_spatial(query, p);
    const auto s = project_spatial(support_stack, p);
    return scaled_dot_attention(q.q, s.k, s.v, spatial_scale(p));
}

template <typename T>
Var<T> sfr_support(const Var<T>& support_stack, const Var<T>& query, HfrpParams<T>& p) {
    check_spatial(query, support_stack, p, "sfr_support");
    const auto q = project_spatial(query, p);
    const auto s = project_spatial(support_stack, p);
    return scaled_dot_attention(s.q, q.k, q.v, spatial_scale(p));
}

template <typename T>
Var<T> residual_connect(const Var<T>& recon, const Var<T>& original) {
    if (recon.shape() != original.shape()) {
        throw ShapeError("residual_connect: " + to_string(recon.shape()) + " vs " + to_string(original.shape()));
    }
    return add(recon, original);
}

template <typename T>
std::vector<ReconBundle<T>> reconstruct_all(const EpisodeFeatures<T>& f, const HfrpOptions& opts, HfrpParams<T>& p) {
    if (!opts.channel_on && !opts.spatial_on) {
        throw std::invalid_argument("HFRP enabled with both channel and spatial branches disabled");
    }
    const std::size_t n_way = f.way, k_shot = f.shot;
    if (n_way == 0 || k_shot == 0) throw std::invalid_argument("reconstruct_all: way and shot must be positive");
    if (f.support.size() != n_way * k_shot) {
        throw std::invalid_argument("reconstruct_all: expected " + std::to_string(n_way * k_shot) +
                                    " support maps, got " + std::to_string(f.support.size()));
    }
    for (const auto* list : {&f.support, &f.query})
        for (const auto& m : *list) {
            if (m.d != p.d || m.h != p.h || m.w != p.w) {
                throw ShapeError("reconstruct_all: feature map " + to_string(Shape{m.d, m.h, m.w}) +
                                 " does not match projections for " + to_string(Shape{p.d, p.h, p.w}));
            }
        }

    auto channel_input = [&](const FeatureMap<T>& m) {
        Var<T> v = m.channel_view();
        if (opts.position_encoding) v = add(v, v.graph().constant(p.pos_enc));
        return v;
    };

    const T cs = channel_scale(p), ss = spatial_scale(p);

    // Per-class support quantities, computed once and shared by every query.
    struct ClassSide {
        std::vector<Projection<T>> shots_c;
        Var<T> original_c, target_c;  // d×K·r
        Var<T> original_s;            // K·r×d
        Projection<T> stack_s;
    };
    std::vector<ClassSide> classes(n_way);
    for (std::size_t n = 0; n < n_way; ++n) {
        auto& cls = classes[n];
        std::vector<Var<T>> originals_c, values_c, originals_s, inputs_s;
        for (std::size_t k = 0; k < k_shot; ++k) {
            const auto& m = f.support[n * k_shot + k];
            if (opts.channel_on) {
                cls.shots_c.push_back(project_channel(channel_input(m), p));
                originals_c.push_back(m.channel_view());
                values_c.push_back(cls.shots_c.back().v);
            }
            if (opts.spatial_on) {
                originals_s.push_back(m.spatial_view());
                inputs_s.push_back(opts.position_encoding ? transpose(channel_input(m)) : originals_s.back());
            }
        }
        if (opts.channel_on) {
            cls.original_c = concat<T>(originals_c, 1);
            cls.target_c = concat<T>(values_c, 1);
        }
        if (opts.spatial_on) {
            cls.original_s = concat<T>(originals_s, 0);
            cls.stack_s = project_spatial(concat<T>(inputs_s, 0), p);
        }
    }

    std::vector<ReconBundle<T>> bundles;
    bundles.reserve(f.query.size() * n_way);
    for (std::size_t i = 0; i < f.query.size(); ++i) {
        const auto& qm = f.query[i];
        std::optional<Projection<T>> qc, qs;
        std::optional<Var<T>> q_orig_c, q_orig_s;
        if (opts.channel_on) {
            qc = project_channel(channel_input(qm), p);
            q_orig_c = qm.channel_view();
        }
        if (opts.spatial_on) {
            qs = project_spatial(opts.position_encoding ? transpose(channel_input(qm)) : qm.spatial_view(), p);
            q_orig_s = qm.spatial_view();
        }
        for (std::size_t n = 0; n < n_way; ++n) {
            const auto& cls = classes[n];
            ReconBundle<T> b;
            b.query = i;
            b.cls = n;
            if (opts.channel_on) {
                b.q_hat_c = residual_connect(cfr_query_projected<T>(*qc, cls.shots_c, cs), *q_orig_c);
                b.s_hat_c = residual_connect(cfr_support_projected<T>(cls.shots_c, *qc, cs), cls.original_c);
                b.q_target_c = qc->v;
                b.s_target_c = cls.target_c;
            }
            if (opts.spatial_on) {
                b.q_hat_s = residual_connect(scaled_dot_attention(qs->q, cls.stack_s.k, cls.stack_s.v, ss), *q_orig_s);
                b.s_hat_s = residual_connect(scaled_dot_attention(cls.stack_s.q, qs->k, qs->v, ss), cls.original_s);
                b.q_target_s = qs->v;
                b.s_target_s = cls.stack_s.v;
            }
            bundles.push_back(std::move(b));
        }
    }
    return bundles;
}

#define HFCR_INSTANTIATE_HFRP(T)                                                                          \
    template struct HfrpParams<T>;                                                                        \
    template Var<T> cfr_query(const Var<T>&, std::span<const Var<T>>, HfrpParams<T>&);                    \
    template Var<T> cfr_support(std::span<const Var<T>>, const Var<T>&, HfrpParams<T>&);                  \
    template Var<T> sfr_query(const Var<T>&, const Var<T>&, HfrpParams<T>&);                              \
    template Var<T> sfr_support(const Var<T>&, const Var<T>&, HfrpParams<T>&);                            \
    template Var<T> residual_connect(const Var<T>&, const Var<T>&);                                       \
    template std::vector<ReconBundle<T>> reconstruct_all(const EpisodeFeatures<T>&, const HfrpOptions&, \
                                                         HfrpParams<T>&);

HFCR_INSTANTIATE_HFRP(float)
HFCR_INSTANTIATE_HFRP(double)

}  // namespace hfcr
