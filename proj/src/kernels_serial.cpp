#include <string>

#include "dynmole/kernels.hpp"

#include "batch_check.hpp"

namespace dynmole {

namespace kernels {

BatchResult batch_step_serial(const MoleLayer& layer, std::span<const Sample> data,
                              std::span<const std::size_t> indices, const LossConfig& loss) {
  detail::check_batch(data.size(), indices, "batch_step");
  const std::size_t t_count = indices.size();
  const double inv_t = 1.0 / static_cast<double>(t_count);

  std::vector<MoleForward> forwards;
  std::vector<Vector> dys;
  forwards.reserve(t_count);
  dys.reserve(t_count);
  BatchResult out;
  for (std::size_t idx : indices) {
    const Sample& s = data[idx];
    forwards.push_back(mole_forward(layer, s.x));
    TaskLoss tl = task_loss(forwards.back().y, s.target);
    out.task_loss += tl.value;
    for (double& g : tl.grad) g *= inv_t;
    dys.push_back(std::move(tl.grad));
  }
  out.task_loss *= inv_t;

  std::vector<RouterDecision> decisions;
  decisions.reserve(t_count);
  for (const auto& f : forwards) {
    out.mean_entropy_norm += f.decision().entropy_norm;
    decisions.push_back(f.decision());
  }
  out.mean_entropy_norm *= inv_t;

  const std::size_t n = layer.n_experts();
  out.stats = BatchRoutingStats::from_decisions(std::move(decisions));
  out.entropy_loss = entropy_loss(out.stats, loss);
  out.balance_loss = load_balance_loss(out.stats, loss, n);
  out.aux_loss = out.balance_loss + out.entropy_loss;
  out.total_loss = out.task_loss + out.aux_loss;
  const auto aux = aux_loss_grads(out.stats, loss, n);

  out.grads = LayerGradients::zeros_like(layer);
  for (std::size_t t = 0; t < t_count; ++t) mole_backward_into(layer, forwards[t].cache, dys[t], aux[t], out.grads);
  return out;
}

std::vector<RouterDecision> route_all_serial(const MoleLayer& layer, std::span<const Sample> data) {
  std::vector<RouterDecision> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(route(layer, s.x));
  return out;
}

}  // namespace kernels

BatchResult batch_step(Backend backend, const MoleLayer& layer, std::span<const Sample> data,
                       std::span<const std::size_t> indices, const LossConfig& loss) {
  return backend == Backend::OpenMP ? kernels::batch_step_omp(layer, data, indices, loss)
                                    : kernels::batch_step_serial(layer, data, indices, loss);
}

std::vector<RouterDecision> route_all(Backend backend, const MoleLayer& layer, std::span<const Sample> data) {
  return backend == Backend::OpenMP ? kernels::route_all_omp(layer, data) : kernels::route_all_serial(layer, data);
}

BatchLoss batch_loss(const MoleLayer& layer, std::span<const Sample> data, std::span<const std::size_t> indices,
                     const LossConfig& loss) {
  detail::check_batch(data.size(), indices, "batch_loss");
  const double inv_t = 1.0 / static_cast<double>(indices.size());
  double task = 0.0;
  std::vector<RouterDecision> decisions;
  decisions.reserve(indices.size());
  for (std::size_t idx : indices) {
    auto f = mole_forward(layer, data[idx].x);
    task += task_loss(f.y, data[idx].target).value;
    decisions.push_back(std::move(f.cache.decision));
  }
  auto stats = BatchRoutingStats::from_decisions(decisions);
  const double total = task * inv_t + auxiliary_loss(stats, loss, layer.n_experts());
  return {total, std::move(decisions)};
}

}  // namespace dynmole
