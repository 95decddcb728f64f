#pragma once

// Central-difference gradient checks in double precision.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "relprobe/autodiff.hpp"
#include "relprobe/encoders.hpp"

namespace relprobe {

// Builds a scalar loss on a fresh tape. It is called once for the analytic
// gradient and twice per checked scalar, so it must be deterministic
// (reseed any dropout generator inside).
using LossFn = std::function<ad::Var(ad::Tape<double>&)>;

// max over trainable scalars of |analytic - numeric| / max(1, |analytic|, |numeric|).
// Throws Error on non-finite losses or gradients.
double gradcheck(ad::ParamStore<double>& params, const LossFn& loss, double eps = 1e-5);

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  size_t scalars = 0;
};

// One case per tape operation, each at a seeded random point.
std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed = 7);

// The full cnn, bilstm, gcn and attn graphs (embedding through loss) at toy
// dimensions with every dropout active.
std::vector<GradcheckResult> gradcheck_encoders(std::uint64_t seed = 7);

// Toy configurations used by gradcheck_encoders, exposed for tests.
EncoderConfig toy_encoder_config(EncoderKind kind);
InputConfig toy_input_config();

}  // namespace relprobe
