#pragma once

#include <span>

#include "twinattn/decoder.hpp"

namespace twinattn {

struct InstancePrediction {
  std::vector<char> point_mask;       // expansion of superpoint_mask through the assignment
  std::vector<char> superpoint_mask;  // binarized at probability 0.5
  int class_id = 0;                   // foreground class in [0, N_C)
  double confidence = 0.0;            // product of four factors, in [0,1]
};

// Final-block outputs materialized off the tape.
struct FinalPrediction {
  Tensor2 class_probs;  // N_o x (C+1)
  Tensor2 mask_probs;   // N_o x K, sigmoided
  Tensor2 mask_score;   // N_o x 1
  Tensor2 box_score;    // N_o x 1
};

FinalPrediction materialize_final(const Tape& tape, const BlockPrediction& last);

// Mean of the probabilities strictly above 0.5; 0 when none qualify.
double superpoint_mask_score(std::span<const double> probs);

// Best foreground class with its probability, times the clamped mask and box
// scores and the superpoint mask score.
struct Confidence {
  int class_id = 0;
  double score = 0.0;
};
Confidence confidence(const FinalPrediction& pred, int proposal);

// Binarize, expand through the superpoint assignment, rank by confidence
// (ties keep the lower proposal index) and keep the top K. No suppression.
std::vector<InstancePrediction> select_instances(const FinalPrediction& pred, int top_k,
                                                 const std::vector<int>& assign, int num_superpoints);

}  // namespace twinattn
