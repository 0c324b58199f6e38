#pragma once

#include "twinattn/autodiff.hpp"
#include "twinattn/scene.hpp"

namespace twinattn {

// Width of the per-point input row: xyz + rgb + sinusoidal lift of xyz
// (4 frequencies, sin and cos per axis).
constexpr int kEncoderLiftFrequencies = 4;
constexpr int kEncoderInputDim = 6 + 3 * 2 * kEncoderLiftFrequencies;

// Builds the fixed (non-learned) per-point input rows from normalized
// coordinates and colors. Pure function of the scene.
Tensor2 encoder_input_features(const Scene& scene, const SceneNormalizer& norm);

struct EncoderHandles {
  Parameter *w1 = nullptr, *b1 = nullptr;
  Parameter *w2 = nullptr, *b2 = nullptr;
  Parameter *w3 = nullptr, *b3 = nullptr;
};

// Three affine layers with gelu between; output width is the backbone dim.
Value encode_points(Tape& tape, Value input_rows, const EncoderHandles& enc);

// Mean-pools feature rows into superpoints. Throws PartitionError when a
// segment id in [0,K) has no members.
Tensor2 pool(const Tensor2& features, const std::vector<int>& assign, int num_segments);

}  // namespace twinattn
