#include "dier/tape.hpp"

#include <atomic>

namespace dier {

namespace {

std::atomic<std::uint64_t> g_tape_uid{1};

template <typename S>
std::vector<TapeT<S>*>& tape_stack() {
    thread_local std::vector<TapeT<S>*> stack;
    return stack;
}

}  // namespace

template <typename S>
TapeT<S>::TapeT() : uid_(g_tape_uid.fetch_add(1)) {
    tape_stack<S>().push_back(this);
}

template <typename S>
TapeT<S>::~TapeT() {
    auto& stack = tape_stack<S>();
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
        if (*it == this) {
            stack.erase(std::next(it).base());
            break;
        }
    }
}

template <typename S>
TapeT<S>* TapeT<S>::active() {
    auto& stack = tape_stack<S>();
    return stack.empty() ? nullptr : stack.back();
}

template <typename S>
int TapeT<S>::node_id_of(const TensorT<S>& t) const {
    if (t.tape_uid == uid_ && t.tape_node >= 0) return t.tape_node;
    auto it = leaf_ids_.find(static_cast<const void*>(t.data().data()));
    return it == leaf_ids_.end() ? -1 : it->second;
}

template <typename S>
int TapeT<S>::input_node(const TensorT<S>& t) {
    if (!t.defined()) return -1;
    if (t.tape_uid == uid_ && t.tape_node >= 0) return t.tape_node;
    if (!t.requires_grad()) return -1;
    const void* key = static_cast<const void*>(t.data().data());
    auto it = leaf_ids_.find(key);
    if (it != leaf_ids_.end()) return it->second;
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.numel(), {}, nullptr});
    grads_.emplace_back();
    leaf_ids_.emplace(key, id);
    pinned_.push_back(t.buffer());
    return id;
}

template <typename S>
void TapeT<S>::record(TensorT<S>& out, std::vector<int> parents, BackFn back) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out.numel(), std::move(parents), std::move(back)});
    grads_.emplace_back();
    pinned_.push_back(out.buffer());
    out.tape_node = id;
    out.tape_uid = uid_;
    out.set_requires_grad(true);
}

template <typename S>
std::span<S> TapeT<S>::grad_buf(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].numel), S(0));
    return {g.data(), g.size()};
}

template <typename S>
void TapeT<S>::add_grad(int node, std::span<const S> g) {
    auto buf = grad_buf(node);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <typename S>
void TapeT<S>::backward(const TensorT<S>& loss) {
    if (consumed_) {
        throw UsageError("backward() called on an already consumed tape");
    }
    if (loss.numel() != 1) {
        throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    int start = node_id_of(loss);
    if (start < 0) {
        throw UsageError("backward() loss is detached from the active tape");
    }
    grad_buf(start)[0] = S(1);
    for (int i = start; i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        auto& g = grads_[static_cast<std::size_t>(i)];
        if (g.empty() || !node.back) continue;
        node.back(*this, std::span<const S>(g.data(), g.size()));
    }
    consumed_ = true;
}

template <typename S>
std::span<const S> TapeT<S>::grad(const TensorT<S>& t) const {
    int id = node_id_of(t);
    if (id < 0) return {};
    const auto& g = grads_[static_cast<std::size_t>(id)];
    return {g.data(), g.size()};
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace dier
