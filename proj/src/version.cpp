#include "vqa/version.hpp"

namespace vqa {

const char* version() { return "0.1.0"; }

const char* extraction_version() { return "fx-1"; }

}  // namespace vqa
