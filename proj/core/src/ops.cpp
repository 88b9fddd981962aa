#include "dier/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>

#include "parallel.hpp"

namespace dier {

namespace {

template <typename S>
using MatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using MutMatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Row-major strides with 0 where a dim is broadcast, aligned to `out`.
std::vector<std::int64_t> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::int64_t> strides(out.size(), 0);
    std::int64_t s = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        std::size_t d_in = in.size() - 1 - i;
        std::size_t d_out = out.size() - 1 - i;
        strides[d_out] = (in[d_in] == 1 && out[d_out] != 1) ? 0 : s;
        s *= in[d_in];
    }
    return strides;
}

// Calls fn(i_out, i_a, i_b) over every element of `out` without div/mod.
template <typename Fn>
void for_each_bcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    const std::int64_t n = numel_of(out);
    if (n == 0) return;
    const auto sa = bcast_strides(a, out);
    const auto sb = bcast_strides(b, out);
    const int nd = static_cast<int>(out.size());
    std::vector<std::int64_t> ctr(out.size(), 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (int d = nd - 1; d >= 0; --d) {
            ++ctr[static_cast<std::size_t>(d)];
            ia += sa[static_cast<std::size_t>(d)];
            ib += sb[static_cast<std::size_t>(d)];
            if (ctr[static_cast<std::size_t>(d)] < out[static_cast<std::size_t>(d)]) break;
            ia -= sa[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
            ib -= sb[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
            ctr[static_cast<std::size_t>(d)] = 0;
        }
    }
}

template <typename S>
void check_finite_debug(const TensorT<S>& t) {
#ifdef DIER_CHECK_FINITE
    for (S v : t.data()) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError("non-finite value produced by an op");
        }
    }
#else
    (void)t;
#endif
}

template <typename S>
bool shapes_equal(const TensorT<S>& a, const TensorT<S>& b) {
    return a.shape() == b.shape();
}

// ---------------- binary broadcast ops ----------------

enum class BinKind { Add, Sub, Mul };

template <typename S>
TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b, BinKind kind) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    TensorT<S> out(out_shape);
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.mut();
    if (shapes_equal(a, b)) {
        const std::int64_t n = out.numel();
        switch (kind) {
            case BinKind::Add:
                for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
                break;
            case BinKind::Sub:
                for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
                break;
            case BinKind::Mul:
                for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
                break;
        }
    } else {
        switch (kind) {
            case BinKind::Add:
                for_each_bcast(out_shape, a.shape(), b.shape(),
                               [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                   ov[i] = av[ia] + bv[ib];
                               });
                break;
            case BinKind::Sub:
                for_each_bcast(out_shape, a.shape(), b.shape(),
                               [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                   ov[i] = av[ia] - bv[ib];
                               });
                break;
            case BinKind::Mul:
                for_each_bcast(out_shape, a.shape(), b.shape(),
                               [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                   ov[i] = av[ia] * bv[ib];
                               });
                break;
        }
    }
    check_finite_debug(out);

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int pa = tape->input_node(a);
    int pb = tape->input_node(b);
    if (pa < 0 && pb < 0) return out;
    auto a_buf = a.buffer();
    auto b_buf = b.buffer();
    Shape a_shape = a.shape(), b_shape = b.shape();
    tape->record(out, {pa, pb},
                 [=](TapeT<S>& tp, std::span<const S> g) {
                     std::span<S> ga, gb;
                     if (pa >= 0) ga = tp.grad_buf(pa);
                     if (pb >= 0) gb = tp.grad_buf(pb);
                     const S* ad = a_buf->data();
                     const S* bd = b_buf->data();
                     switch (kind) {
                         case BinKind::Add:
                             for_each_bcast(out_shape, a_shape, b_shape,
                                            [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                                if (pa >= 0) ga[ia] += g[i];
                                                if (pb >= 0) gb[ib] += g[i];
                                            });
                             break;
                         case BinKind::Sub:
                             for_each_bcast(out_shape, a_shape, b_shape,
                                            [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                                if (pa >= 0) ga[ia] += g[i];
                                                if (pb >= 0) gb[ib] -= g[i];
                                            });
                             break;
                         case BinKind::Mul:
                             for_each_bcast(out_shape, a_shape, b_shape,
                                            [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                                if (pa >= 0) ga[ia] += g[i] * bd[ib];
                                                if (pb >= 0) gb[ib] += g[i] * ad[ia];
                                            });
                             break;
                     }
                 });
    return out;
}

// ---------------- unary pointwise ----------------

// dfn(x, y) must return dy/dx.
template <typename S, typename F, typename DF>
TensorT<S> unary_op(const TensorT<S>& x, F fn, DF dfn) {
    TensorT<S> out(x.shape());
    auto xv = x.data();
    auto ov = out.mut();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = fn(xv[i]);
    check_finite_debug(out);

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    auto x_buf = x.buffer();
    auto y_buf = out.buffer();
    tape->record(out, {p}, [=](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        const S* xd = x_buf->data();
        const S* yd = y_buf->data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * dfn(xd[i], yd[i]);
        }
    });
    return out;
}

template <typename S>
S sigmoid_s(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

int num_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("DIER_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op(a, b, BinKind::Add);
}
template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op(a, b, BinKind::Sub);
}
template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op(a, b, BinKind::Mul);
}

template <typename S>
TensorT<S> scale(const TensorT<S>& x, S c) {
    return unary_op(
        x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& x, S c) {
    return unary_op(
        x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
TensorT<S> silu(const TensorT<S>& x) {
    return unary_op(
        x, [](S v) { return v * sigmoid_s(v); },
        [](S v, S) {
            S s = sigmoid_s(v);
            return s * (S(1) + v * (S(1) - s));
        });
}

template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
    return unary_op(
        x,
        [](S v) {
            double xv = static_cast<double>(v);
            double t = std::tanh(kGeluC * (xv + kGeluA * xv * xv * xv));
            return static_cast<S>(0.5 * xv * (1.0 + t));
        },
        [](S v, S) {
            double xv = static_cast<double>(v);
            double u = kGeluC * (xv + kGeluA * xv * xv * xv);
            double t = std::tanh(u);
            double du = kGeluC * (1.0 + 3.0 * kGeluA * xv * xv);
            return static_cast<S>(0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du);
        });
}

template <typename S>
TensorT<S> sqrt(const TensorT<S>& x) {
    return unary_op(
        x, [](S v) { return std::sqrt(v); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
TensorT<S> exp(const TensorT<S>& x) {
    return unary_op(
        x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
TensorT<S> log(const TensorT<S>& x) {
    return unary_op(
        x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
TensorT<S> sin(const TensorT<S>& x) {
    return unary_op(
        x, [](S v) { return std::sin(v); }, [](S v, S) { return std::cos(v); });
}

// ---------------- structure ----------------

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
    TensorT<S> out = x.reshaped(std::move(shape));
    out.set_requires_grad(false);
    out.tape_node = -1;
    out.tape_uid = 0;

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    tape->record(out, {p}, [p](TapeT<S>& tp, std::span<const S> g) { tp.add_grad(p, g); });
    return out;
}

template <typename S>
TensorT<S> gather(const TensorT<S>& x, IndexVec idx, Shape out_shape) {
    if (static_cast<std::int64_t>(idx->size()) != numel_of(out_shape)) {
        throw DimensionError("gather index count does not match output shape " +
                             shape_str(out_shape));
    }
    TensorT<S> out(std::move(out_shape));
    auto xv = x.data();
    auto ov = out.mut();
    const auto& ix = *idx;
    detail::parallel_chunks(out.numel(), num_threads(), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) {
            const std::int64_t j = ix[static_cast<std::size_t>(i)];
            ov[i] = j >= 0 ? xv[j] : S(0);
        }
    });

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    tape->record(out, {p}, [p, idx](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        const auto& ix2 = *idx;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::int64_t j = ix2[i];
            if (j >= 0) gx[j] += g[i];
        }
    });
    return out;
}

IndexVec permute_indices(const Shape& in_shape, const std::vector<int>& axes) {
    const int nd = static_cast<int>(in_shape.size());
    if (static_cast<int>(axes.size()) != nd) {
        throw DimensionError("permute axes rank mismatch for " + shape_str(in_shape));
    }
    Shape out_shape(in_shape.size());
    for (int d = 0; d < nd; ++d) out_shape[d] = in_shape[axes[d]];
    std::vector<std::int64_t> in_strides(in_shape.size(), 1);
    for (int d = nd - 2; d >= 0; --d) {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    auto idx = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(numel_of(out_shape)));
    std::vector<std::int64_t> ctr(in_shape.size(), 0);
    const std::int64_t n = numel_of(out_shape);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t src = 0;
        for (int d = 0; d < nd; ++d) src += ctr[d] * in_strides[axes[d]];
        (*idx)[static_cast<std::size_t>(i)] = src;
        for (int d = nd - 1; d >= 0; --d) {
            if (++ctr[d] < out_shape[d]) break;
            ctr[d] = 0;
        }
    }
    return idx;
}

namespace {

std::unordered_map<std::string, IndexVec>& index_cache() {
    static std::unordered_map<std::string, IndexVec> cache;
    return cache;
}
std::mutex& index_cache_mutex() {
    static std::mutex m;
    return m;
}

IndexVec cached_indices(const std::string& key, const std::function<IndexVec()>& make) {
    std::lock_guard<std::mutex> lock(index_cache_mutex());
    auto& cache = index_cache();
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    if (cache.size() > 256) cache.clear();
    auto idx = make();
    cache.emplace(key, idx);
    return idx;
}

std::string shape_key(const Shape& s) {
    std::ostringstream os;
    for (auto d : s) os << d << ',';
    return os.str();
}

}  // namespace

template <typename S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& axes) {
    std::ostringstream key;
    key << "perm:" << shape_key(x.shape()) << ':';
    for (int a : axes) key << a << ',';
    auto idx = cached_indices(key.str(), [&] { return permute_indices(x.shape(), axes); });
    Shape out_shape(x.shape().size());
    for (std::size_t d = 0; d < axes.size(); ++d) out_shape[d] = x.dim(axes[d]);
    return gather(x, idx, std::move(out_shape));
}

template <typename S>
TensorT<S> transpose_last2(const TensorT<S>& x) {
    if (x.ndim() < 2) throw DimensionError("transpose_last2 needs >= 2 dims, got " + shape_str(x.shape()));
    std::vector<int> axes(static_cast<std::size_t>(x.ndim()));
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

IndexVec slice_last_indices(const Shape& in_shape, std::int64_t start, std::int64_t len) {
    const std::int64_t last = in_shape.back();
    if (start < 0 || len <= 0 || start + len > last) {
        throw DimensionError("slice_last [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of range for " +
                             shape_str(in_shape));
    }
    const std::int64_t rows = numel_of(in_shape) / last;
    auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(rows * len));
    std::int64_t k = 0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t base = r * last + start;
        for (std::int64_t j = 0; j < len; ++j) (*idx)[static_cast<std::size_t>(k++)] = base + j;
    }
    return idx;
}

template <typename S>
TensorT<S> slice_last(const TensorT<S>& x, std::int64_t start, std::int64_t len) {
    std::ostringstream key;
    key << "slice:" << shape_key(x.shape()) << ':' << start << ':' << len;
    auto idx =
        cached_indices(key.str(), [&] { return slice_last_indices(x.shape(), start, len); });
    Shape out_shape = x.shape();
    out_shape.back() = len;
    return gather(x, idx, std::move(out_shape));
}

// ---------------- reductions ----------------

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
    S acc = 0;
    for (S v : x.data()) acc += v;
    TensorT<S> out = TensorT<S>::scalar(acc);

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    tape->record(out, {p}, [p](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        for (auto& v : gx) v += g[0];
    });
    return out;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& x) {
    const S inv = S(1) / static_cast<S>(x.numel());
    return scale(sum(x), inv);
}

template <typename S>
TensorT<S> mean_tail(const TensorT<S>& x, int k) {
    if (k <= 0 || k > x.ndim()) {
        throw DimensionError("mean_tail over " + std::to_string(k) + " dims of " +
                             shape_str(x.shape()));
    }
    Shape out_shape(x.shape().begin(), x.shape().end() - k);
    const std::int64_t rows = numel_of(out_shape);
    const std::int64_t cols = x.numel() / std::max<std::int64_t>(rows, 1);
    TensorT<S> out(out_shape);
    auto xv = x.data();
    auto ov = out.mut();
    const S inv = S(1) / static_cast<S>(cols);
    for (std::int64_t r = 0; r < rows; ++r) {
        S acc = 0;
        const S* row = xv.data() + r * cols;
        for (std::int64_t c = 0; c < cols; ++c) acc += row[c];
        ov[r] = acc * inv;
    }

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    tape->record(out, {p}, [p, cols, inv](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        for (std::size_t r = 0; r < g.size(); ++r) {
            const S gv = g[r] * inv;
            S* row = gx.data() + static_cast<std::int64_t>(r) * cols;
            for (std::int64_t c = 0; c < cols; ++c) row[c] += gv;
        }
    });
    return out;
}

// ---------------- matmul ----------------

namespace {

struct BatchPlan {
    Shape out_batch;
    std::vector<std::int64_t> a_offsets;  // per out-batch, in units of matrices
    std::vector<std::int64_t> b_offsets;
};

BatchPlan plan_batches(const Shape& a, const Shape& b) {
    Shape ab(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
    BatchPlan plan;
    plan.out_batch = broadcast_shape(ab, bb);
    const std::int64_t nb = numel_of(plan.out_batch);
    plan.a_offsets.resize(static_cast<std::size_t>(nb));
    plan.b_offsets.resize(static_cast<std::size_t>(nb));
    for_each_bcast(plan.out_batch, ab, bb,
                   [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                       plan.a_offsets[static_cast<std::size_t>(i)] = ia;
                       plan.b_offsets[static_cast<std::size_t>(i)] = ib;
                   });
    return plan;
}

}  // namespace

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw DimensionError("matmul needs >= 2-dim operands, got " + shape_str(a.shape()) +
                             " @ " + shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(a.ndim() - 2), k = a.dim(a.ndim() - 1);
    const std::int64_t kb = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
    if (k != kb) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                             " @ " + shape_str(b.shape()));
    }
    BatchPlan plan = plan_batches(a.shape(), b.shape());
    Shape out_shape = plan.out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    TensorT<S> out(out_shape);
    const std::int64_t nb = static_cast<std::int64_t>(plan.a_offsets.size());
    const S* ad = a.data().data();
    const S* bd = b.data().data();
    S* od = out.mut().data();

    if (nb == 1) {
        MatMap<S> A(ad, m, k);
        MatMap<S> B(bd, k, n);
        // Row-split keeps every output element single-writer.
        detail::parallel_chunks(m, m * k * n >= (1 << 20) ? num_threads() : 1,
                                [&](std::int64_t r0, std::int64_t r1) {
                                    MutMatMap<S> C(od + r0 * n, r1 - r0, n);
                                    C.noalias() = A.middleRows(r0, r1 - r0) * B;
                                });
    } else {
        detail::parallel_chunks(
            nb, m * k * n * nb >= (1 << 20) ? num_threads() : 1,
            [&](std::int64_t b0, std::int64_t b1) {
                for (std::int64_t i = b0; i < b1; ++i) {
                    MatMap<S> A(ad + plan.a_offsets[static_cast<std::size_t>(i)] * m * k, m, k);
                    MatMap<S> B(bd + plan.b_offsets[static_cast<std::size_t>(i)] * k * n, k, n);
                    MutMatMap<S> C(od + i * m * n, m, n);
                    C.noalias() = A * B;
                }
            });
    }
    check_finite_debug(out);

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int pa = tape->input_node(a);
    int pb = tape->input_node(b);
    if (pa < 0 && pb < 0) return out;
    auto a_buf = a.buffer();
    auto b_buf = b.buffer();
    tape->record(out, {pa, pb}, [=](TapeT<S>& tp, std::span<const S> g) {
        const S* ad2 = a_buf->data();
        const S* bd2 = b_buf->data();
        std::span<S> ga, gb;
        if (pa >= 0) ga = tp.grad_buf(pa);
        if (pb >= 0) gb = tp.grad_buf(pb);
        for (std::int64_t i = 0; i < nb; ++i) {
            MatMap<S> G(g.data() + i * m * n, m, n);
            if (pa >= 0) {
                MatMap<S> B(bd2 + plan.b_offsets[static_cast<std::size_t>(i)] * k * n, k, n);
                MutMatMap<S> GA(ga.data() + plan.a_offsets[static_cast<std::size_t>(i)] * m * k,
                                m, k);
                GA.noalias() += G * B.transpose();
            }
            if (pb >= 0) {
                MatMap<S> A(ad2 + plan.a_offsets[static_cast<std::size_t>(i)] * m * k, m, k);
                MutMatMap<S> GB(gb.data() + plan.b_offsets[static_cast<std::size_t>(i)] * k * n,
                                k, n);
                GB.noalias() += A.transpose() * G;
            }
        }
    });
    return out;
}

// ---------------- softmax / norms ----------------

template <typename S>
TensorT<S> softmax(const TensorT<S>& x, int axis) {
    const int nd = x.ndim();
    if (nd == 0) throw DimensionError("softmax needs >= 1-dim input");
    int ax = axis < 0 ? nd + axis : axis;
    if (ax < 0 || ax >= nd) {
        throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    }
    if (ax != nd - 1) {
        std::vector<int> axes(static_cast<std::size_t>(nd));
        std::iota(axes.begin(), axes.end(), 0);
        std::swap(axes[static_cast<std::size_t>(ax)], axes[static_cast<std::size_t>(nd - 1)]);
        return permute(softmax(permute(x, axes), -1), axes);
    }

    const std::int64_t cols = x.dim(nd - 1);
    const std::int64_t rows = x.numel() / std::max<std::int64_t>(cols, 1);
    TensorT<S> out(x.shape());
    auto xv = x.data();
    auto ov = out.mut();
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* xi = xv.data() + r * cols;
        S* yi = ov.data() + r * cols;
        S mx = xi[0];
        for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, xi[c]);
        S acc = 0;
        for (std::int64_t c = 0; c < cols; ++c) {
            yi[c] = std::exp(xi[c] - mx);
            acc += yi[c];
        }
        const S inv = S(1) / acc;
        for (std::int64_t c = 0; c < cols; ++c) yi[c] *= inv;
    }
    check_finite_debug(out);

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    auto y_buf = out.buffer();
    tape->record(out, {p}, [p, y_buf, rows, cols](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        const S* yd = y_buf->data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const S* yi = yd + r * cols;
            const S* gi = g.data() + r * cols;
            S* go = gx.data() + r * cols;
            S dot = 0;
            for (std::int64_t c = 0; c < cols; ++c) dot += gi[c] * yi[c];
            for (std::int64_t c = 0; c < cols; ++c) go[c] += yi[c] * (gi[c] - dot);
        }
    });
    return out;
}

template <typename S>
TensorT<S> normalize_rows(const TensorT<S>& x, S eps) {
    if (x.ndim() == 0) throw DimensionError("normalize_rows needs >= 1-dim input");
    const std::int64_t cols = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / std::max<std::int64_t>(cols, 1);
    TensorT<S> out(x.shape());
    auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
    auto xv = x.data();
    auto ov = out.mut();
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* xi = xv.data() + r * cols;
        S* yi = ov.data() + r * cols;
        S mu = 0;
        for (std::int64_t c = 0; c < cols; ++c) mu += xi[c];
        mu /= static_cast<S>(cols);
        S var = 0;
        for (std::int64_t c = 0; c < cols; ++c) {
            const S d = xi[c] - mu;
            var += d * d;
        }
        var /= static_cast<S>(cols);
        const S inv = S(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = inv;
        for (std::int64_t c = 0; c < cols; ++c) yi[c] = (xi[c] - mu) * inv;
    }
    check_finite_debug(out);

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(x);
    if (p < 0) return out;
    auto y_buf = out.buffer();
    tape->record(out, {p}, [p, y_buf, inv_std, rows, cols](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        const S* yd = y_buf->data();
        const S invc = S(1) / static_cast<S>(cols);
        for (std::int64_t r = 0; r < rows; ++r) {
            const S* yi = yd + r * cols;
            const S* gi = g.data() + r * cols;
            S* go = gx.data() + r * cols;
            S gmean = 0, gydot = 0;
            for (std::int64_t c = 0; c < cols; ++c) {
                gmean += gi[c];
                gydot += gi[c] * yi[c];
            }
            gmean *= invc;
            gydot *= invc;
            const S inv = (*inv_std)[static_cast<std::size_t>(r)];
            for (std::int64_t c = 0; c < cols; ++c) {
                go[c] += inv * (gi[c] - gmean - yi[c] * gydot);
            }
        }
    });
    return out;
}

template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps) {
    const std::int64_t d = x.dim(x.ndim() - 1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm affine size mismatch: x " + shape_str(x.shape()) +
                             ", gamma " + shape_str(gamma.shape()));
    }
    return add(mul(normalize_rows(x, eps), gamma), beta);
}

template <typename S>
TensorT<S> group_norm(const TensorT<S>& x, int groups, const TensorT<S>& gamma,
                      const TensorT<S>& beta, S eps) {
    if (x.ndim() != 4) throw DimensionError("group_norm expects [N,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (groups <= 0 || c % groups != 0) {
        throw DimensionError("group_norm: " + std::to_string(groups) +
                             " groups do not divide " + std::to_string(c) + " channels");
    }
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("group_norm affine size mismatch");
    }
    auto grouped = reshape(x, {n, groups, (c / groups) * h * w});
    auto normed = reshape(normalize_rows(grouped, eps), {n, c, h, w});
    auto g3 = reshape(gamma, {c, 1, 1});
    auto b3 = reshape(beta, {c, 1, 1});
    return add(mul(normed, g3), b3);
}

// ---------------- conv2d ----------------

IndexVec im2col_indices(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, int kh,
                        int kw, int stride, int pad) {
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (w + 2 * pad - kw) / stride + 1;
    std::ostringstream key;
    key << "im2col:" << n << ',' << c << ',' << h << ',' << w << ',' << kh << ',' << kw << ','
        << stride << ',' << pad;
    return cached_indices(key.str(), [&]() -> IndexVec {
        auto idx = std::make_shared<std::vector<std::int64_t>>(
            static_cast<std::size_t>(n * oh * ow * c * kh * kw));
        std::int64_t p = 0;
        for (std::int64_t in = 0; in < n; ++in) {
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    for (std::int64_t ic = 0; ic < c; ++ic) {
                        for (int ky = 0; ky < kh; ++ky) {
                            const std::int64_t iy = oy * stride + ky - pad;
                            for (int kx = 0; kx < kw; ++kx) {
                                const std::int64_t ix = ox * stride + kx - pad;
                                (*idx)[static_cast<std::size_t>(p++)] =
                                    (iy < 0 || iy >= h || ix < 0 || ix >= w)
                                        ? -1
                                        : ((in * c + ic) * h + iy) * w + ix;
                            }
                        }
                    }
                }
            }
        }
        return idx;
    });
}

template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>* bias, int stride,
                  int pad) {
    if (x.ndim() != 4 || w.ndim() != 4) {
        throw DimensionError("conv2d expects x [N,C,H,W] and w [O,C,kh,kw], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t o = w.dim(0), wc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (wc != c) {
        throw DimensionError("conv2d channel mismatch: x " + shape_str(x.shape()) + ", w " +
                             shape_str(w.shape()));
    }
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
    if (kh > h + 2 * pad || kw > wd + 2 * pad || oh <= 0 || ow <= 0) {
        throw DimensionError("conv2d produces non-positive output size for x " +
                             shape_str(x.shape()) + " with kernel " + shape_str(w.shape()));
    }
    auto idx = im2col_indices(n, c, h, wd, static_cast<int>(kh), static_cast<int>(kw), stride, pad);
    auto xcol = gather(x, idx, {n * oh * ow, c * kh * kw});
    auto wmat = transpose_last2(reshape(w, {o, c * kh * kw}));
    auto y = matmul(xcol, wmat);
    if (bias) y = add(y, *bias);
    return permute(reshape(y, {n, oh, ow, o}), {0, 3, 1, 2});
}

template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, int stride, int pad) {
    return conv2d<S>(x, w, nullptr, stride, pad);
}

template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias, int stride,
                  int pad) {
    return conv2d<S>(x, w, &bias, stride, pad);
}

// ---------------- losses ----------------

template <typename S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& logits, std::span<const int> labels) {
    if (logits.ndim() != 2) {
        throw DimensionError("softmax_cross_entropy expects [N,C] logits, got " +
                             shape_str(logits.shape()));
    }
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw DimensionError("softmax_cross_entropy label count mismatch");
    }
    auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n * c));
    auto labels_copy = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    auto xv = logits.data();
    double total = 0;
    for (std::int64_t r = 0; r < n; ++r) {
        const int y = (*labels_copy)[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c) {
            throw IndexError("label " + std::to_string(y) + " out of range [0," +
                             std::to_string(c) + ")");
        }
        const S* xi = xv.data() + r * c;
        S* pi = probs->data() + r * c;
        S mx = xi[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        S acc = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            pi[j] = std::exp(xi[j] - mx);
            acc += pi[j];
        }
        const S inv = S(1) / acc;
        for (std::int64_t j = 0; j < c; ++j) pi[j] *= inv;
        total += std::log(static_cast<double>(acc)) + static_cast<double>(mx) -
                 static_cast<double>(xi[y]);
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / static_cast<double>(n)));

    auto* tape = TapeT<S>::active();
    if (!tape || tape->consumed()) return out;
    int p = tape->input_node(logits);
    if (p < 0) return out;
    tape->record(out, {p}, [p, probs, labels_copy, n, c](TapeT<S>& tp, std::span<const S> g) {
        auto gx = tp.grad_buf(p);
        const S g0 = g[0] / static_cast<S>(n);
        for (std::int64_t r = 0; r < n; ++r) {
            const S* pi = probs->data() + r * c;
            S* go = gx.data() + r * c;
            const int y = (*labels_copy)[static_cast<std::size_t>(r)];
            for (std::int64_t j = 0; j < c; ++j) {
                go[j] += g0 * (pi[j] - (j == y ? S(1) : S(0)));
            }
        }
    });
    return out;
}

// ---------------- helpers ----------------

Tensor randn(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    rng.fill_normal(t.mut());
    return t;
}

template <typename S>
bool all_finite(const TensorT<S>& x) {
    for (S v : x.data()) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

// ---------------- explicit instantiations ----------------

#define DIER_INSTANTIATE_OPS(S)                                                               \
    template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);                         \
    template TensorT<S> sub<S>(const TensorT<S>&, const TensorT<S>&);                         \
    template TensorT<S> mul<S>(const TensorT<S>&, const TensorT<S>&);                         \
    template TensorT<S> scale<S>(const TensorT<S>&, S);                                       \
    template TensorT<S> add_scalar<S>(const TensorT<S>&, S);                                  \
    template TensorT<S> silu<S>(const TensorT<S>&);                                           \
    template TensorT<S> gelu<S>(const TensorT<S>&);                                           \
    template TensorT<S> sqrt<S>(const TensorT<S>&);                                           \
    template TensorT<S> exp<S>(const TensorT<S>&);                                            \
    template TensorT<S> log<S>(const TensorT<S>&);                                            \
    template TensorT<S> sin<S>(const TensorT<S>&);                                            \
    template TensorT<S> reshape<S>(const TensorT<S>&, Shape);                                 \
    template TensorT<S> gather<S>(const TensorT<S>&, IndexVec, Shape);                        \
    template TensorT<S> permute<S>(const TensorT<S>&, const std::vector<int>&);               \
    template TensorT<S> transpose_last2<S>(const TensorT<S>&);                                \
    template TensorT<S> slice_last<S>(const TensorT<S>&, std::int64_t, std::int64_t);         \
    template TensorT<S> sum<S>(const TensorT<S>&);                                            \
    template TensorT<S> mean<S>(const TensorT<S>&);                                           \
    template TensorT<S> mean_tail<S>(const TensorT<S>&, int);                                 \
    template TensorT<S> matmul<S>(const TensorT<S>&, const TensorT<S>&);                      \
    template TensorT<S> softmax<S>(const TensorT<S>&, int);                                   \
    template TensorT<S> normalize_rows<S>(const TensorT<S>&, S);                              \
    template TensorT<S> layer_norm<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&, \
                                      S);                                                     \
    template TensorT<S> group_norm<S>(const TensorT<S>&, int, const TensorT<S>&,              \
                                      const TensorT<S>&, S);                                  \
    template TensorT<S> conv2d<S>(const TensorT<S>&, const TensorT<S>&, int, int);            \
    template TensorT<S> conv2d<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&,    \
                                  int, int);                                                  \
    template TensorT<S> softmax_cross_entropy<S>(const TensorT<S>&, std::span<const int>);    \
    template bool all_finite<S>(const TensorT<S>&);

DIER_INSTANTIATE_OPS(float)
DIER_INSTANTIATE_OPS(double)

#undef DIER_INSTANTIATE_OPS

}  // namespace dier
