// SPDX-License-Identifier: Apache-2.0
#include "seaformer/tape.hpp"

#include <atomic>
#include <mutex>

#include "seaformer/errors.hpp"

namespace seaformer {

namespace {

std::atomic<std::uint64_t> g_next_tape_uid{1};

template <typename T>
Tape<T>*& active_slot() noexcept {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

#ifdef SEAFORMER_FAULT_INJECTION
std::mutex g_fault_mutex;
std::string g_fault_op;
#endif

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& add) {
  if (into.empty()) {
    into = add.detached();
    return;
  }
  for (std::size_t i = 0; i < into.numel(); ++i) into[i] += add[i];
}

}  // namespace

#ifdef SEAFORMER_FAULT_INJECTION
void set_vjp_fault(const std::string& op_name) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = op_name;
}

std::string vjp_fault() {
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op;
}
#endif

template <typename T>
Tape<T>::Tape() : uid_(g_next_tape_uid.fetch_add(1)) {}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& x) {
  if (x.empty()) throw ArgumentError("cannot watch an empty tensor");
  Tensor<T> out = x.detached();
  const std::int64_t id = next_id_++;
  out.set_node(NodeRef{uid_, id});
  leaves_.emplace(id, out.shape());
  return out;
}

template <typename T>
void Tape<T>::record(std::string name, const std::vector<const Tensor<T>*>& inputs, Tensor<T>& out,
                     VjpFn<T> vjp) {
  TapeNode<T> node;
  node.name = std::move(name);
  for (const Tensor<T>* in : inputs) {
    node.inputs.push_back(tracks(*in) ? in->node().id : -1);
    node.input_shapes.push_back(in->shape());
  }
  node.output = next_id_++;
  node.output_shape = out.shape();
#ifdef SEAFORMER_FAULT_INJECTION
  if (const std::string fault = vjp_fault(); !fault.empty() && node.name == fault) {
    vjp = [inner = std::move(vjp)](const Tensor<T>& g) {
      auto grads = inner(g);
      for (auto& t : grads) {
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = -t[i];
      }
      return grads;
    };
  }
#endif
  node.vjp = std::move(vjp);
  out.set_node(NodeRef{uid_, node.output});
  nodes_.push_back(std::move(node));
}

template <typename T>
bool Tape<T>::is_topological() const {
  for (const auto& node : nodes_) {
    for (auto id : node.inputs) {
      if (id >= node.output) return false;
    }
  }
  return true;
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_slot<T>()) {
  active_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_slot<T>() = previous_;
}

template <typename T>
Tape<T>* active_tape() noexcept {
  return active_slot<T>();
}

template <typename T>
Tape<T>* tracking_tape(std::initializer_list<const Tensor<T>*> inputs) noexcept {
  Tape<T>* tape = active_slot<T>();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* in : inputs) {
    if (in != nullptr && tape->tracks(*in)) return tape;
  }
  return nullptr;
}

template <typename T>
std::map<std::int64_t, Tensor<T>> backward(const Tape<T>& tape, const Tensor<T>& output,
                                           const Tensor<T>& seed) {
  std::map<std::int64_t, Tensor<T>> result;
  if (tape.nodes().empty() && tape.leaves().empty()) return result;
  if (seed.shape() != output.shape()) {
    throw DimensionError("backward seed shape " + shape_to_string(seed.shape()) +
                         " does not match output " + shape_to_string(output.shape()));
  }

  // VJPs may call taped ops; nothing they compute should land on a tape.
  struct Suspend {
    Tape<T>* saved = active_slot<T>();
    Suspend() { active_slot<T>() = nullptr; }
    ~Suspend() { active_slot<T>() = saved; }
  } suspend;

  std::map<std::int64_t, Tensor<T>> cot;
  if (tape.tracks(output)) cot[output.node().id] = seed.detached();

  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto found = cot.find(it->output);
    if (found == cot.end()) continue;
    Tensor<T> g = std::move(found->second);
    cot.erase(found);
    std::vector<Tensor<T>> grads = it->vjp(g);
    if (grads.size() != it->inputs.size()) {
      throw DimensionError("VJP of '" + it->name + "' returned " + std::to_string(grads.size()) +
                           " cotangents for " + std::to_string(it->inputs.size()) + " inputs");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (it->inputs[i] < 0 || grads[i].empty()) continue;
      if (grads[i].shape() != it->input_shapes[i]) {
        throw DimensionError("VJP of '" + it->name + "' input " + std::to_string(i) +
                             " cotangent shape " + shape_to_string(grads[i].shape()) +
                             " != forward shape " + shape_to_string(it->input_shapes[i]));
      }
      accumulate(cot[it->inputs[i]], grads[i]);
    }
  }

  for (const auto& [id, shape] : tape.leaves()) {
    auto found = cot.find(id);
    result.emplace(id, found != cot.end() ? std::move(found->second) : Tensor<T>(shape));
  }
  return result;
}

template <typename T>
std::map<std::int64_t, Tensor<T>> backward(const Tape<T>& tape, const Tensor<T>& output) {
  if (output.numel() != 1) {
    throw DimensionError("backward without seed needs a scalar output, got " +
                         shape_to_string(output.shape()));
  }
  return backward(tape, output, Tensor<T>(output.shape(), T{1}));
}

template <typename T>
const Tensor<T>& grad_of(const std::map<std::int64_t, Tensor<T>>& grads, const Tensor<T>& leaf) {
  auto it = grads.find(leaf.node().id);
  if (it == grads.end()) throw ArgumentError("tensor is not a leaf of the differentiated tape");
  return it->second;
}

template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template Tape<float>* active_tape<float>() noexcept;
template Tape<double>* active_tape<double>() noexcept;
template Tape<float>* tracking_tape<float>(std::initializer_list<const Tensor<float>*>) noexcept;
template Tape<double>* tracking_tape<double>(std::initializer_list<const Tensor<double>*>) noexcept;
template std::map<std::int64_t, Tensor<float>> backward(const Tape<float>&, const Tensor<float>&,
                                                        const Tensor<float>&);
template std::map<std::int64_t, Tensor<double>> backward(const Tape<double>&,
                                                         const Tensor<double>&,
                                                         const Tensor<double>&);
template std::map<std::int64_t, Tensor<float>> backward(const Tape<float>&, const Tensor<float>&);
template std::map<std::int64_t, Tensor<double>> backward(const Tape<double>&,
                                                         const Tensor<double>&);
template const Tensor<float>& grad_of(const std::map<std::int64_t, Tensor<float>>&,
                                      const Tensor<float>&);
template const Tensor<double>& grad_of(const std::map<std::int64_t, Tensor<double>>&,
                                       const Tensor<double>&);

}  // namespace seaformer
