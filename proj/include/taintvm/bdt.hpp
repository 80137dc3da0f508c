#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace taintvm {

// Hash-consed reduced binary decision tree encoding finite sets of input byte
// offsets. Node id 0 is the empty set and doubles as the NO-TAINT label; id 1
// is the singleton {0}. A node at level L splits its set at 2^(L-1): the left
// child holds the lower part, the right child the upper part shifted down.
// Minimal-level representation plus hash-consing makes ids canonical:
// structurally equal sets always share one id.
class BdtStore {
 public:
  using NodeId = uint32_t;

  BdtStore();

  NodeId singleton(uint32_t value);

  // Iterative union with an explicit work stack; memoized, so repeating a
  // union allocates no new nodes. Allocation of a genuinely new node is the
  // only slow-path event and is counted.
  NodeId union_sets(NodeId a, NodeId b);

  std::vector<uint32_t> elements(NodeId id) const;
  bool contains(NodeId id, uint32_t value) const;

  uint64_t nodes_allocated() const { return allocated_; }
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    uint8_t level;
    NodeId left, right;
  };
  std::vector<Node> nodes_;  // index = id; slots 0 and 1 are reserved
  std::unordered_map<uint64_t, NodeId> cons_;
  std::unordered_map<uint64_t, NodeId> union_memo_;
  uint64_t allocated_ = 0;

  unsigned level_of(NodeId id) const;
  NodeId left_of(NodeId id) const;
  NodeId right_of(NodeId id) const;
  NodeId make_node(unsigned level, NodeId l, NodeId r);
};

}  // namespace taintvm
