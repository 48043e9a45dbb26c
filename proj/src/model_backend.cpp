#include "promptforge/model_backend.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

namespace promptforge {

namespace {

std::string resolve_spec_path(const std::string& identifier) {
  namespace fs = std::filesystem;
  if (identifier.rfind("toy:", 0) == 0) return identifier.substr(4);
  if (fs::exists(identifier)) return identifier;
  if (const char* cache = std::getenv("PROMPTFORGE_CACHE")) {
    fs::path candidate = fs::path(cache) / (identifier + ".json");
    if (fs::exists(candidate)) return candidate.string();
  }
  throw BackendError("backend unavailable: cannot resolve checkpoint identifier '" + identifier + "'");
}

}  // namespace

std::unique_ptr<MaskedLm> load_masked_lm(const std::string& identifier) {
  std::string path = resolve_spec_path(identifier);
  return make_toy_masked_lm(toy_masked_spec_from_json(read_file(path)));
}

std::unique_ptr<CausalLm> load_causal_lm(const std::string& identifier) {
  std::string path = resolve_spec_path(identifier);
  return make_toy_causal_lm(toy_causal_spec_from_json(read_file(path)));
}

std::pair<double, TriggerGradients> averaged_objective_and_gradients(const MaskedLm& lm,
                                                                     std::span<const PromptView> batch) {
  if (batch.empty()) throw BackendError("empty gradient batch");
  double objective = 0.0;
  TriggerGradients acc;
  for (const PromptView& pv : batch) {
    std::pair<double, TriggerGradients> result;
    try {
      result = lm.objective_and_trigger_gradients(pv.prompt, pv.mask_index, pv.trigger_indices,
                                                  pv.label_token_set);
    } catch (const BackendError& e) {
      throw BackendError(std::string(e.what()) + " (example '" + pv.example_id + "')");
    }
    auto& [obj, grads] = result;
    bool finite = std::isfinite(obj);
    for (double g : grads.per_slot.a) finite = finite && std::isfinite(g);
    if (!finite)
      throw BackendError("non-finite objective or gradient for example '" + pv.example_id + "'");
    if (acc.per_slot.empty()) {
      acc.per_slot = Matrix(grads.per_slot.rows, grads.per_slot.cols, 0.0);
    } else if (acc.per_slot.rows != grads.per_slot.rows || acc.per_slot.cols != grads.per_slot.cols) {
      throw BackendError("gradient shape mismatch within batch at example '" + pv.example_id + "'");
    }
    objective += obj;
    for (size_t i = 0; i < acc.per_slot.a.size(); ++i) acc.per_slot.a[i] += grads.per_slot.a[i];
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  objective *= inv_n;
  for (double& g : acc.per_slot.a) g *= inv_n;
  return {objective, std::move(acc)};
}

}  // namespace promptforge
