#include "twinattn/encoder.hpp"

#include <cmath>

namespace twinattn {

Tensor2 encoder_input_features(const Scene& scene, const SceneNormalizer& norm) {
  const int n = scene.num_points();
  Tensor2 out(n, kEncoderInputDim);
  constexpr double kPi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const double* p = scene.points.row_ptr(i);
    const auto xyz = norm.apply(p[0], p[1], p[2]);
    double* r = out.row_ptr(i);
    r[0] = xyz[0];
    r[1] = xyz[1];
    r[2] = xyz[2];
    r[3] = p[3];
    r[4] = p[4];
    r[5] = p[5];
    int c = 6;
    for (int f = 0; f < kEncoderLiftFrequencies; ++f) {
      const double omega = kPi * static_cast<double>(1 << f);
      for (int a = 0; a < 3; ++a) {
        r[c++] = std::sin(omega * xyz[a]);
        r[c++] = std::cos(omega * xyz[a]);
      }
    }
  }
  return out;
}

Value encode_points(Tape& tape, Value input_rows, const EncoderHandles& enc) {
  Value h = tape.gelu(tape.linear(input_rows, tape.param(*enc.w1), tape.param(*enc.b1)));
  h = tape.gelu(tape.linear(h, tape.param(*enc.w2), tape.param(*enc.b2)));
  return tape.linear(h, tape.param(*enc.w3), tape.param(*enc.b3));
}

Tensor2 pool(const Tensor2& features, const std::vector<int>& assign, int num_segments) {
  if (static_cast<int>(assign.size()) != features.rows) {
    throw DimensionError("pool: assignment length vs feature rows");
  }
  std::vector<int> counts(num_segments, 0);
  for (int id : assign) {
    if (id < 0 || id >= num_segments) throw PartitionError("pool: id out of range");
    ++counts[id];
  }
  for (int s = 0; s < num_segments; ++s) {
    if (counts[s] == 0) throw PartitionError("pool: empty superpoint " + std::to_string(s));
  }
  Tensor2 out(num_segments, features.cols);
  for (int i = 0; i < features.rows; ++i) {
    const double* fr = features.row_ptr(i);
    double* orow = out.row_ptr(assign[i]);
    for (int j = 0; j < features.cols; ++j) orow[j] += fr[j];
  }
  for (int s = 0; s < num_segments; ++s) {
    double* orow = out.row_ptr(s);
    const double inv = 1.0 / counts[s];
    for (int j = 0; j < features.cols; ++j) orow[j] *= inv;
  }
  return out;
}

}  // namespace twinattn
