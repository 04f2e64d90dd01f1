#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vqa/errors.hpp"

namespace vqa {

using Index = Eigen::Index;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major dense matrix; used where the memory layout is part of a file format.
template <class Scalar>
using RowMajorMatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One decoded video frame: interleaved 8-bit RGB, row-major.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  ///< height * width * 3 bytes

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }

  bool well_formed() const {
    return height > 0 && width > 0 && rgb.size() == pixel_count() * 3;
  }
};

/// A decoded video: at least one frame, constant dimensions, positive frame rate.
struct FrameStack {
  std::string source_id;
  double frame_rate = 0.0;
  std::vector<Frame> frames;

  void validate() const {
    if (frames.empty()) throw DomainError("frame stack '" + source_id + "' is empty");
    if (!(frame_rate > 0.0))
      throw DomainError("frame stack '" + source_id + "' has non-positive frame rate");
    const int h = frames.front().height;
    const int w = frames.front().width;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (!frames[i].well_formed())
        throw DecodeError("frame stack '" + source_id + "': malformed frame " +
                          std::to_string(i));
      if (frames[i].height != h || frames[i].width != w)
        throw DomainError("frame stack '" + source_id +
                          "': dimensions change at frame " + std::to_string(i));
    }
  }
};

}  // namespace vqa
