#pragma once

namespace vqa {

/// Toolkit version string.
const char* version();

/// Version tag stamped into feature-cache records. Bump when the extraction
/// pipeline changes in a way that invalidates cached features.
const char* extraction_version();

}  // namespace vqa
