// SPDX-License-Identifier: Apache-2.0
#include "panobev/tensor.hpp"

namespace panobev {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::shape_mismatch: return "ShapeError";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::out_of_fov: return "OutOfFov";
    case ErrorCode::empty_supervision: return "EmptySupervision";
    case ErrorCode::missing_frame_id: return "MissingFrameId";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::io: return "IoError";
    case ErrorCode::parse: return "ParseError";
  }
  return "Error";
}

std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

}  // namespace panobev
