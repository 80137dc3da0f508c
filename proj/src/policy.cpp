#include "taintvm/policy.hpp"

namespace taintvm {

Label fold_meet(const ShadowState& shadow, TaintPrimitives& policy,
                std::span<const Location> locs) {
  Label acc = 0;
  for (const Location& l : locs) acc = policy.meet(acc, shadow.get_label(l));
  return acc;
}

void propagate_unary(ShadowState& shadow, TaintPrimitives& policy,
                     std::span<const Location> dst, std::span<const Location> src,
                     PropMode mode) {
  if (dst.size() != src.size())
    throw std::logic_error("propagate_unary: operand width mismatch");
  if (mode == PropMode::Coupled) {
    Label m = fold_meet(shadow, policy, src);
    for (size_t i = 0; i < dst.size(); i++) shadow.set_label(dst[i], policy.src_dst(m));
  } else {
    // read all sources first: destination bytes may alias source bytes
    std::vector<Label> in(src.size());
    for (size_t i = 0; i < src.size(); i++) in[i] = shadow.get_label(src[i]);
    for (size_t i = 0; i < dst.size(); i++) shadow.set_label(dst[i], policy.src_dst(in[i]));
  }
}

void propagate_binary(ShadowState& shadow, TaintPrimitives& policy,
                      std::span<const Location> dst, std::span<const Location> src1,
                      std::span<const Location> src2, PropMode mode) {
  if (dst.size() != src1.size() || dst.size() != src2.size())
    throw std::logic_error("propagate_binary: operand width mismatch");
  if (mode == PropMode::Coupled) {
    Label m1 = fold_meet(shadow, policy, src1);
    Label m2 = fold_meet(shadow, policy, src2);
    for (size_t i = 0; i < dst.size(); i++)
      shadow.set_label(dst[i], policy.src_src_dst(m1, m2));
  } else {
    std::vector<Label> in1(src1.size()), in2(src2.size());
    for (size_t i = 0; i < src1.size(); i++) in1[i] = shadow.get_label(src1[i]);
    for (size_t i = 0; i < src2.size(); i++) in2[i] = shadow.get_label(src2[i]);
    for (size_t i = 0; i < dst.size(); i++)
      shadow.set_label(dst[i], policy.src_src_dst(in1[i], in2[i]));
  }
}

Label IdPolicy::fresh_id() {
  if (counter_ == 0xFFFFFFFFu) throw PolicyError("id policy: label counter overflow");
  return ++counter_;
}

Label UafPolicy::meet(Label a, Label b) {
  if (a == 0) return b;
  if (b == 0) return a;
  auto rank = [&](Label l) { return status(l) == Status::Dangling ? 2 : 1; };
  int ra = rank(a), rb = rank(b);
  if (ra != rb) return ra > rb ? a : b;  // DANGLING dominates LIVE
  return std::min(a, b);
}

Label UafPolicy::mint_live(uint32_t creation_site) {
  records_.push_back(Record{creation_site, Status::Live, 0});
  return static_cast<Label>(records_.size());
}

UafPolicy::Status UafPolicy::status(Label l) const {
  if (!valid(l)) throw PolicyError("uaf policy: unknown label handle");
  return records_[l - 1].status;
}

void UafPolicy::set_dangling(Label l) {
  if (!valid(l)) throw PolicyError("uaf policy: unknown label handle");
  records_[l - 1].status = Status::Dangling;
}

uint32_t UafPolicy::creation_site(Label l) const {
  if (!valid(l)) throw PolicyError("uaf policy: unknown label handle");
  return records_[l - 1].creation_site;
}

int64_t UafPolicy::refcount(Label l) const {
  if (!valid(l)) throw PolicyError("uaf policy: unknown label handle");
  return records_[l - 1].refcount;
}

void UafPolicy::retain(Label l) {
  if (valid(l)) records_[l - 1].refcount++;
}

void UafPolicy::release(Label l) {
  if (valid(l)) records_[l - 1].refcount--;
}

std::unique_ptr<TaintPrimitives> make_policy(const std::string& name) {
  if (name == "bitwise") return std::make_unique<BitwisePolicy>();
  if (name == "id") return std::make_unique<IdPolicy>();
  if (name == "bv") return std::make_unique<BvPolicy>();
  if (name == "uaf") return std::make_unique<UafPolicy>();
  throw PolicyError("unknown policy '" + name + "'");
}

}  // namespace taintvm
