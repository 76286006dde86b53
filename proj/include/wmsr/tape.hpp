#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "wmsr/grid.hpp"

namespace wmsr {

// Named parameter tensors plus gradient accumulators, in registration order.
// Registration order is the canonical order for checkpoints.
struct ParamStore {
    struct Entry {
        std::string name;
        Grid value;
        Grid grad;
    };

    std::vector<Entry> entries;
    std::unordered_map<std::string, int> by_name;

    int add(const std::string& name, Grid init) {
        require(by_name.find(name) == by_name.end(),
                "ParamStore: duplicate parameter name " + name);
        const int id = int(entries.size());
        Grid g(init.shape, 0.0);
        entries.push_back(Entry{name, std::move(init), std::move(g)});
        by_name.emplace(name, id);
        return id;
    }

    int find(const std::string& name) const {
        auto it = by_name.find(name);
        return it == by_name.end() ? -1 : it->second;
    }

    Entry& operator[](int id) { return entries.at(size_t(id)); }
    const Entry& operator[](int id) const { return entries.at(size_t(id)); }
    int size() const { return int(entries.size()); }

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries) e.grad.fill(0.0);
    }

    // Rounds every value through float32. Checkpoints store parameters as
    // 32-bit floats; keeping the live values float-representable makes
    // save -> load an exact identity on the forward pass.
    void quantize_to_f32() {
        for (auto& e : entries)
            for (double& x : e.value.v) x = double(float(x));
    }
};

// Define-by-run reverse-mode tape. Nodes are appended in execution order and
// backward() replays them strictly in reverse. Values are shared_ptrs so that
// parameter tensors are referenced, not copied, into the graph.
class Tape {
public:
    struct Node {
        std::shared_ptr<const Grid> value;
        Grid grad;               // allocated on first accumulation
        bool has_grad = false;
        bool requires_grad = false;
        int param_id = -1;
        std::function<void(Tape&)> backward;  // empty for leaves / no-grad nodes
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    int leaf(Grid v, bool requires_grad = false) {
        return push_node(std::make_shared<Grid>(std::move(v)),
                         requires_grad && grad_enabled_, -1, nullptr);
    }

    int leaf_shared(std::shared_ptr<const Grid> v, bool requires_grad = false) {
        return push_node(std::move(v), requires_grad && grad_enabled_, -1, nullptr);
    }

    // Leaf referencing a parameter. The store must outlive the tape.
    int param(const ParamStore& ps, int pid) {
        const Grid& g = ps[pid].value;
        std::shared_ptr<const Grid> alias(std::shared_ptr<void>(), &g);
        return push_node(std::move(alias), grad_enabled_, pid, nullptr);
    }

    // New op node. `bw` reads this node's grad and accumulates into parents;
    // it is dropped entirely when no parent requires a gradient.
    int op(Grid value, const std::vector<int>& parents,
           std::function<void(Tape&)> bw) {
        bool rg = false;
        for (int p : parents) rg = rg || node(p).requires_grad;
        rg = rg && grad_enabled_;
        return push_node(std::make_shared<Grid>(std::move(value)), rg, -1,
                         rg ? std::move(bw) : nullptr);
    }

    const Grid& val(int id) const { return *nodes_.at(size_t(id)).value; }
    std::shared_ptr<const Grid> val_ptr(int id) const { return nodes_.at(size_t(id)).value; }
    Node& node(int id) { return nodes_.at(size_t(id)); }
    const Node& node(int id) const { return nodes_.at(size_t(id)); }
    int size() const { return int(nodes_.size()); }

    // Gradient accumulator of a node, zero-initialized on first use.
    Grid& grad_accum(int id) {
        Node& n = node(id);
        if (!n.has_grad) {
            n.grad = Grid(n.value->shape, 0.0);
            n.has_grad = true;
        }
        return n.grad;
    }

    bool wants_grad(int id) const { return node(id).requires_grad; }

    const Grid& grad(int id) const {
        const Node& n = node(id);
        require(n.has_grad, "Tape: node has no gradient");
        return n.grad;
    }

    // Reverse sweep from a scalar loss node.
    void backward(int loss) {
        require(grad_enabled_, "Tape: backward on a no-grad tape");
        Node& ln = node(loss);
        require(ln.value->numel() == 1,
                "Tape: backward requires a scalar loss node, got shape " +
                    ln.value->shape.str());
        grad_accum(loss).v[0] = 1.0;
        for (int i = loss; i >= 0; --i) {
            Node& n = node(i);
            if (n.has_grad && n.backward) n.backward(*this);
        }
    }

    // Adds node gradients of parameter leaves into the store. Parameters that
    // were never used keep a zero gradient.
    void accumulate_param_grads(ParamStore& ps) const {
        for (const Node& n : nodes_) {
            if (n.param_id < 0 || !n.has_grad) continue;
            Grid& dst = ps[n.param_id].grad;
            for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += n.grad.v[i];
        }
    }

    // Drops all nodes. Values extracted with val_ptr() stay alive.
    void clear() { nodes_.clear(); }

private:
    int push_node(std::shared_ptr<const Grid> v, bool rg, int pid,
                  std::function<void(Tape&)> bw) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = rg;
        n.param_id = pid;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

}  // namespace wmsr
