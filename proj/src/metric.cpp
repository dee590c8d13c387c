#include "tps/metric.hpp"

#include "tps/errors.hpp"

namespace tps {

std::string_view to_string(TpsVariant variant) {
  switch (variant) {
    case TpsVariant::basic: return "basic";
    case TpsVariant::ordinal: return "ordinal";
    case TpsVariant::semantic: return "semantic";
    case TpsVariant::custom: return "custom";
  }
  return "unknown";
}

TpsResult tps(const AnswerDistribution& prior, const AnswerDistribution& conditional,
              const AnswerDistribution& target, const CostMatrix& cost, TpsVariant variant,
              const SolverOptions& options) {
  if (!same_space(prior.space_ptr(), conditional.space_ptr()) || !same_space(prior.space_ptr(), target.space_ptr()) ||
      !same_space(prior.space_ptr(), cost.space_ptr())) {
    throw ValidationError("prior, conditional, target and cost must share one answer space");
  }
  TpsResult result;
  result.variant = variant;
  if (auto t = target.point_mass_index()) {
    result.w_prior = wasserstein_to_point_mass(prior, *t, cost).value;
    result.w_conditional = wasserstein_to_point_mass(conditional, *t, cost).value;
    result.method = TransportMethod::point_mass;
  } else {
    result.w_prior = wasserstein(prior, target, cost, options).value;
    result.w_conditional = wasserstein(conditional, target, cost, options).value;
    result.method = TransportMethod::general_lp;
  }
  result.score = result.w_prior - result.w_conditional;
  return result;
}

TpsResult tps(const TpsInput& input, TpsVariant variant, const SolverOptions& options) {
  return tps(input.prior, input.conditional, input.target, input.cost, variant, options);
}

TpsResult basic_tps(const AnswerDistribution& prior, const AnswerDistribution& conditional, const Answer& target) {
  const auto& space = prior.space_ptr();
  return tps(prior, conditional, AnswerDistribution::point_mass(space, target.text()), basic_cost(space, target),
             TpsVariant::basic);
}

TpsResult distance_tps(const AnswerDistribution& prior, const AnswerDistribution& conditional, const Answer& target,
                       const ScaleMap& scale) {
  const auto& space = prior.space_ptr();
  return tps(prior, conditional, AnswerDistribution::point_mass(space, target.text()), ordinal_cost(space, scale),
             TpsVariant::ordinal);
}

TpsResult semantic_tps(const AnswerDistribution& prior, const AnswerDistribution& conditional, const Answer& target,
                       const EmbeddingTable& table) {
  const auto& space = prior.space_ptr();
  return tps(prior, conditional, AnswerDistribution::point_mass(space, target.text()), semantic_cost(space, table),
             TpsVariant::semantic);
}

}  // namespace tps
