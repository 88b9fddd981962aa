#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "dier/tensor.hpp"

namespace dier {

// Reverse-mode tape. Constructing a tape makes it the active recorder for
// the current thread; ops append nodes in execution order, which is already
// a topological order, so backward() is a single reverse sweep. A tape is
// consumed by backward() and cannot be replayed.
template <typename S>
class TapeT {
public:
    using BackFn = std::function<void(TapeT&, std::span<const S>)>;

    TapeT();
    ~TapeT();
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    static TapeT* active();

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t uid() const { return uid_; }

    // Node id for an op input: the recorded id if the tensor was produced on
    // this tape, a lazily created leaf id if it requires grad, -1 otherwise.
    int input_node(const TensorT<S>& t);

    // Record an op output. `parents` may contain -1 entries (non-diff inputs).
    void record(TensorT<S>& out, std::vector<int> parents, BackFn back);

    void backward(const TensorT<S>& loss);

    // Gradient of a tensor after backward(); empty span when none was
    // produced (not on tape, or no path to the loss).
    std::span<const S> grad(const TensorT<S>& t) const;

    // For BackFn implementations: zero-initialized accumulation buffer.
    std::span<S> grad_buf(int node);
    void add_grad(int node, std::span<const S> g);

private:
    int node_id_of(const TensorT<S>& t) const;

    struct Node {
        std::int64_t numel;
        std::vector<int> parents;
        BackFn back;
    };

    std::vector<Node> nodes_;
    std::vector<std::vector<S>> grads_;
    std::unordered_map<const void*, int> leaf_ids_;
    std::vector<std::shared_ptr<const std::vector<S>>> pinned_;
    bool consumed_ = false;
    std::uint64_t uid_ = 0;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace dier
