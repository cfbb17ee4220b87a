// frame.hpp
//
// One observation: a camera at a time with its RGB image, supervision
// features and label map.

#pragma once

#include "nbvsplat/scene.hpp"

namespace nbv {

struct Frame {
  int id = 0;        // unique within a dataset
  int camera = 0;    // index into the camera list
  int timestep = 0;  // 0 for static data
  CameraView view;   // view.timestamp is the normalized time in [0, 1]
  Image rgb;         // H x W x 3
  Image features;    // H x W x D_t supervision features
  LabelMap labels;   // H x W class ids
};

}  // namespace nbv
