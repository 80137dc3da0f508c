#include "taintvm/bdt.hpp"

#include <bit>
#include <stdexcept>

namespace taintvm {

namespace {
constexpr BdtStore::NodeId kEmpty = 0;
constexpr BdtStore::NodeId kUnit = 1;  // {0}
}  // namespace

BdtStore::BdtStore() {
  nodes_.resize(2);  // ids 0 and 1 are virtual; their slots are never read
}

unsigned BdtStore::level_of(NodeId id) const {
  if (id == kEmpty) throw std::logic_error("bdt: level of empty set");
  if (id == kUnit) return 0;
  return nodes_[id].level;
}

BdtStore::NodeId BdtStore::left_of(NodeId id) const { return nodes_[id].left; }
BdtStore::NodeId BdtStore::right_of(NodeId id) const { return nodes_[id].right; }

BdtStore::NodeId BdtStore::make_node(unsigned level, NodeId l, NodeId r) {
  if (r == kEmpty) return l;  // an empty upper half lowers the level
  uint64_t key = (static_cast<uint64_t>(level) << 56) |
                 (static_cast<uint64_t>(l) << 28) | r;
  if (l >= (1u << 28) || r >= (1u << 28))
    throw std::runtime_error("bdt: node id space exhausted");
  auto it = cons_.find(key);
  if (it != cons_.end()) return it->second;
  NodeId id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{static_cast<uint8_t>(level), l, r});
  cons_.emplace(key, id);
  allocated_++;
  return id;
}

BdtStore::NodeId BdtStore::singleton(uint32_t value) {
  NodeId cur = kUnit;
  unsigned levels = value == 0 ? 0 : std::bit_width(value);
  for (unsigned l = 1; l <= levels; l++) {
    if ((value >> (l - 1)) & 1u) cur = make_node(l, kEmpty, cur);
    // a zero bit keeps the set entirely in the lower half: no node needed
  }
  return cur;
}

BdtStore::NodeId BdtStore::union_sets(NodeId a, NodeId b) {
  struct Frame {
    NodeId a, b;
    int stage;      // 0: start, 1: left child done, 2: right child done
    NodeId lres;
  };
  std::vector<Frame> stack;
  stack.push_back(Frame{a, b, 0, 0});
  NodeId incoming = 0;
  bool have_incoming = false;

  auto deliver = [&](NodeId v) {
    incoming = v;
    have_incoming = true;
  };

  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.stage == 0) {
      if (f.a == kEmpty || f.a == f.b) {
        NodeId v = f.b;
        stack.pop_back();
        deliver(v);
      } else if (f.b == kEmpty) {
        NodeId v = f.a;
        stack.pop_back();
        deliver(v);
      } else {
        uint64_t key = (static_cast<uint64_t>(std::min(f.a, f.b)) << 32) | std::max(f.a, f.b);
        auto it = union_memo_.find(key);
        if (it != union_memo_.end()) {
          NodeId v = it->second;
          stack.pop_back();
          deliver(v);
        } else {
          unsigned la = level_of(f.a), lb = level_of(f.b);
          f.stage = 1;
          if (la == lb) {
            stack.push_back(Frame{left_of(f.a), left_of(f.b), 0, 0});
          } else if (la > lb) {
            stack.push_back(Frame{left_of(f.a), f.b, 0, 0});
          } else {
            stack.push_back(Frame{f.a, left_of(f.b), 0, 0});
          }
          continue;
        }
      }
    } else if (f.stage == 1) {
      f.lres = incoming;
      have_incoming = false;
      unsigned la = level_of(f.a), lb = level_of(f.b);
      if (la == lb) {
        f.stage = 2;
        stack.push_back(Frame{right_of(f.a), right_of(f.b), 0, 0});
        continue;
      }
      unsigned level = std::max(la, lb);
      NodeId right = la > lb ? right_of(f.a) : right_of(f.b);
      NodeId v = make_node(level, f.lres, right);
      uint64_t key = (static_cast<uint64_t>(std::min(f.a, f.b)) << 32) | std::max(f.a, f.b);
      union_memo_.emplace(key, v);
      stack.pop_back();
      deliver(v);
    } else {
      NodeId rres = incoming;
      have_incoming = false;
      NodeId v = make_node(level_of(f.a), f.lres, rres);
      uint64_t key = (static_cast<uint64_t>(std::min(f.a, f.b)) << 32) | std::max(f.a, f.b);
      union_memo_.emplace(key, v);
      stack.pop_back();
      deliver(v);
    }
  }
  if (!have_incoming) throw std::logic_error("bdt: union produced no result");
  return incoming;
}

std::vector<uint32_t> BdtStore::elements(NodeId id) const {
  std::vector<uint32_t> out;
  if (id == kEmpty) return out;
  struct Item {
    NodeId id;
    uint32_t base;
  };
  std::vector<Item> stack{{id, 0}};
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    if (it.id == kEmpty) continue;
    if (it.id == kUnit) {
      out.push_back(it.base);
      continue;
    }
    const Node& n = nodes_[it.id];
    uint32_t half = 1u << (n.level - 1);
    stack.push_back(Item{n.right, it.base + half});
    stack.push_back(Item{n.left, it.base});
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool BdtStore::contains(NodeId id, uint32_t value) const {
  while (true) {
    if (id == kEmpty) return false;
    if (id == kUnit) return value == 0;
    const Node& n = nodes_[id];
    uint32_t half = 1u << (n.level - 1);
    if (value >= 2 * half) return false;  // above this subtree's domain
    if (value >= half) {
      value -= half;
      id = n.right;
    } else {
      id = n.left;
    }
  }
}

}  // namespace taintvm
