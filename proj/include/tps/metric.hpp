#pragma once

#include <string_view>

#include "tps/answer_space.hpp"
#include "tps/cost.hpp"
#include "tps/transport.hpp"

namespace tps {

enum class TpsVariant { basic, ordinal, semantic, custom };

std::string_view to_string(TpsVariant variant);

struct TpsInput {
  AnswerDistribution prior;
  AnswerDistribution conditional;
  AnswerDistribution target;
  CostMatrix cost;
};

struct TpsResult {
  double score = 0.0;  // w_prior - w_conditional
  double w_prior = 0.0;
  double w_conditional = 0.0;
  TpsVariant variant = TpsVariant::custom;
  TransportMethod method = TransportMethod::general_lp;
};

/// W(prior, target) - W(conditional, target). A point-mass target takes the
/// closed-form transport path; any other target goes through the LP solver.
TpsResult tps(const AnswerDistribution& prior, const AnswerDistribution& conditional,
              const AnswerDistribution& target, const CostMatrix& cost, TpsVariant variant = TpsVariant::custom,
              const SolverOptions& options = {});
TpsResult tps(const TpsInput& input, TpsVariant variant = TpsVariant::custom, const SolverOptions& options = {});

/// Indicator cost toward `target`; the score equals
/// conditional(target) - prior(target).
TpsResult basic_tps(const AnswerDistribution& prior, const AnswerDistribution& conditional, const Answer& target);

/// Ordinal cost on `scale` with a point mass on `target`.
TpsResult distance_tps(const AnswerDistribution& prior, const AnswerDistribution& conditional, const Answer& target,
                       const ScaleMap& scale);

/// Cosine cost from `table` with a point mass on `target`.
TpsResult semantic_tps(const AnswerDistribution& prior, const AnswerDistribution& conditional, const Answer& target,
                       const EmbeddingTable& table);

}  // namespace tps
