// SPDX-License-Identifier: Apache-2.0
#include "seaformer/instrument.hpp"

#include <algorithm>

namespace seaformer {

namespace {

struct ThreadState {
  std::vector<MacRecorder*> recorders;
  std::string label_path;
  bool shape_only = false;
  BranchRecorder* branches = nullptr;
};

ThreadState& state() {
  thread_local ThreadState s;
  return s;
}

bool has_component(std::string_view path, std::string_view segment) {
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t end = path.find('/', start);
    if (end == std::string_view::npos) end = path.size();
    if (path.substr(start, end - start) == segment) return true;
    start = end + 1;
  }
  return false;
}

}  // namespace

std::uint64_t MacTally::excluding(std::string_view segment) const {
  std::uint64_t out = total;
  for (const auto& [path, macs] : by_label) {
    if (has_component(path, segment)) out -= macs;
  }
  return out;
}

std::uint64_t MacTally::under(std::string_view prefix) const {
  std::uint64_t out = 0;
  for (const auto& [path, macs] : by_label) {
    if (path == prefix ||
        (path.size() > prefix.size() && path.compare(0, prefix.size(), prefix) == 0 &&
         path[prefix.size()] == '/')) {
      out += macs;
    }
  }
  return out;
}

MacRecorder::MacRecorder() { state().recorders.push_back(this); }

MacRecorder::~MacRecorder() {
  auto& recs = state().recorders;
  recs.erase(std::remove(recs.begin(), recs.end(), this), recs.end());
}

void record_macs(std::string_view op, std::uint64_t macs) {
  auto& s = state();
  if (s.recorders.empty()) return;
  for (MacRecorder* r : s.recorders) {
    r->tally_.total += macs;
    r->tally_.by_op[std::string(op)] += macs;
    r->tally_.by_label[s.label_path] += macs;
  }
}

MacLabel::MacLabel(std::string_view label) : previous_size_(state().label_path.size()) {
  auto& path = state().label_path;
  if (!path.empty()) path += '/';
  path += label;
}

MacLabel::~MacLabel() { state().label_path.resize(previous_size_); }

ShapeOnlyScope::ShapeOnlyScope() : previous_(state().shape_only) { state().shape_only = true; }

ShapeOnlyScope::~ShapeOnlyScope() { state().shape_only = previous_; }

bool shape_only() noexcept { return state().shape_only; }

BranchRecorder::BranchRecorder() : previous_(state().branches) { state().branches = this; }

BranchRecorder::~BranchRecorder() { state().branches = previous_; }

bool branch_recording() noexcept { return state().branches != nullptr; }

void record_branch(std::uint32_t branch) {
  if (BranchRecorder* r = state().branches) r->signature_.push_back(branch);
}

}  // namespace seaformer
