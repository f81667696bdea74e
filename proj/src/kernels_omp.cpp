#include <omp.h>

#include "dynmole/kernels.hpp"

#include "batch_check.hpp"
#include "omp_util.hpp"

namespace dynmole::kernels {

namespace {

// One row of one gradient matrix: row += Σ_t coef_t * v_t, added in token
// order. Tokens that do not touch the row are skipped, which leaves every
// entry with the same sequence of additions as the serial accumulation.
struct RowTask {
  Matrix* m;
  std::size_t row;
  std::size_t expert;
  enum Kind { B, A, Router } kind;
};

void run_row_task(const RowTask& task, const std::vector<MoleForward>& forwards,
                  const std::vector<BackwardFactors>& factors) {
  auto dst = task.m->data().subspan(task.row * task.m->cols(), task.m->cols());
  for (std::size_t t = 0; t < forwards.size(); ++t) {
    const auto& cache = forwards[t].cache;
    const auto& f = factors[t];
    std::span<const double> v;
    double su = 0.0;
    switch (task.kind) {
      case RowTask::B:
        if (!cache.decision.is_selected(task.expert)) continue;
        su = f.scale[task.expert] * f.dy[task.row];
        v = cache.hidden[task.expert];
        break;
      case RowTask::A:
        if (!cache.decision.is_selected(task.expert)) continue;
        su = f.scale[task.expert] * f.dh[task.expert][task.row];
        v = cache.x;
        break;
      case RowTask::Router:
        su = 1.0 * cache.x[task.row];
        v = f.dz;
        break;
    }
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += su * v[j];
  }
}

}  // namespace

BatchResult batch_step_omp(const MoleLayer& layer, std::span<const Sample> data,
                           std::span<const std::size_t> indices, const LossConfig& loss) {
  detail::check_batch(data.size(), indices, "batch_step");
  const auto t_count = static_cast<std::ptrdiff_t>(indices.size());
  const double inv_t = 1.0 / static_cast<double>(t_count);

  std::vector<MoleForward> forwards(indices.size());
  std::vector<Vector> dys(indices.size());
  std::vector<double> task(indices.size());
  detail::ExceptionSlot slot;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < t_count; ++t) {
    slot.run([&] {
      const auto i = static_cast<std::size_t>(t);
      const Sample& s = data[indices[i]];
      forwards[i] = mole_forward(layer, s.x);
      TaskLoss tl = task_loss(forwards[i].y, s.target);
      task[i] = tl.value;
      for (double& g : tl.grad) g *= inv_t;
      dys[i] = std::move(tl.grad);
    });
  }
  slot.rethrow();

  BatchResult out;
  std::vector<RouterDecision> decisions;
  decisions.reserve(indices.size());
  for (std::size_t t = 0; t < indices.size(); ++t) {
    out.task_loss += task[t];
    out.mean_entropy_norm += forwards[t].decision().entropy_norm;
    decisions.push_back(forwards[t].decision());
  }
  out.task_loss *= inv_t;
  out.mean_entropy_norm *= inv_t;

  const std::size_t n = layer.n_experts();
  out.stats = BatchRoutingStats::from_decisions(std::move(decisions));
  out.entropy_loss = entropy_loss(out.stats, loss);
  out.balance_loss = load_balance_loss(out.stats, loss, n);
  out.aux_loss = out.balance_loss + out.entropy_loss;
  out.total_loss = out.task_loss + out.aux_loss;
  const auto aux = aux_loss_grads(out.stats, loss, n);

  std::vector<BackwardFactors> factors(indices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < t_count; ++t) {
    slot.run([&] {
      const auto i = static_cast<std::size_t>(t);
      factors[i] = backward_factors(layer, forwards[i].cache, dys[i], aux[i]);
    });
  }
  slot.rethrow();

  out.grads = LayerGradients::zeros_like(layer);
  std::vector<RowTask> tasks;
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t r = 0; r < out.grads.d_b[e].rows(); ++r) tasks.push_back({&out.grads.d_b[e], r, e, RowTask::B});
    for (std::size_t r = 0; r < out.grads.d_a[e].rows(); ++r) tasks.push_back({&out.grads.d_a[e], r, e, RowTask::A});
  }
  for (std::size_t r = 0; r < out.grads.d_wg.rows(); ++r) tasks.push_back({&out.grads.d_wg, r, 0, RowTask::Router});
  const auto task_count = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < task_count; ++i) run_row_task(tasks[static_cast<std::size_t>(i)], forwards, factors);
  return out;
}

std::vector<RouterDecision> route_all_omp(const MoleLayer& layer, std::span<const Sample> data) {
  std::vector<RouterDecision> out(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  detail::ExceptionSlot slot;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    slot.run([&] {
      const auto i = static_cast<std::size_t>(t);
      out[i] = route(layer, data[i].x);
    });
  }
  slot.rethrow();
  return out;
}

}  // namespace dynmole::kernels
