#include "ltx/train.hpp"

namespace ltx {

const char* freeze_policy_name(FreezePolicy::Kind k) {
  return k == FreezePolicy::Kind::freeze_conv ? "freeze-conv" : "none";
}

FreezePolicy::Kind freeze_policy_from_name(const std::string& name) {
  if (name == "none") return FreezePolicy::Kind::none;
  if (name == "freeze-conv") return FreezePolicy::Kind::freeze_conv;
  throw config_error("unknown freeze policy: " + name +
                     " (expected none or freeze-conv)");
}

const char* baseline_kind_name(BaselineKind k) {
  return k == BaselineKind::logistic ? "logistic" : "fc2";
}

}  // namespace ltx
