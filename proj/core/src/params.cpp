#include "ffnmt/params.hpp"

namespace ffnmt {

const char* role_name(ParamRole role) {
  switch (role) {
    case ParamRole::recurrent: return "recurrent";
    case ParamRole::feedforward: return "feedforward";
    case ParamRole::embedding: return "embedding";
    case ParamRole::projection: return "projection";
    case ParamRole::alignment: return "alignment";
    case ParamRole::output: return "output";
  }
  return "unknown";
}

}  // namespace ffnmt
