// Times the OpenMP kernels against their serial references: matmul, all-item
// scoring, and one training epoch. Run with a size argument to scale the
// matmul case, e.g. `boxrec_bench 512`.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "boxrec/evaluation.hpp"
#include "boxrec/kernels.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/synthetic.hpp"
#include "boxrec/tensor.hpp"
#include "boxrec/training.hpp"

using namespace boxrec;

namespace {

double seconds(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const char* name, double serial, double parallel) {
  std::printf("%-24s serial %8.3f ms   parallel %8.3f ms   speedup %.2fx\n", name, serial * 1e3,
              parallel * 1e3, parallel > 0 ? serial / parallel : 0.0);
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t n = argc > 1 ? static_cast<std::size_t>(std::atoi(argv[1])) : 384;
  std::printf("threads available: %d\n", kernels::effective_threads());

  {
    Rng rng(1);
    std::vector<float> a(n * n), b(n * n), c(n * n), c_ref(n * n);
    for (auto& x : a) x = static_cast<float>(rng.next_normal());
    for (auto& x : b) x = static_cast<float>(rng.next_normal());
    const double t_ref = seconds([&] { kernels::matmul_reference(a.data(), b.data(), c_ref.data(), n, n, n); });
    const double t_par = seconds([&] { kernels::matmul(a.data(), b.data(), c.data(), n, n, n); });
    report("matmul", t_ref, t_par);
    if (c != c_ref) {
      std::printf("matmul results diverge between serial and parallel kernels\n");
      return 1;
    }
  }

  // Shared setup for the scoring and training cases.
  synthetic::WorldConfig wcfg;
  wcfg.users = 30;
  wcfg.items = 400;
  wcfg.seed = 11;
  const auto world = synthetic::generate_box_world(wcfg);
  const auto split = datasets::chronological_split(world.log);

  training::TrainConfig tcfg;
  tcfg.dim = 32;
  tcfg.targets = 2;
  tcfg.epochs = 2;
  tcfg.batch_size = 256;
  tcfg.seed = 5;

  {
    double t_serial = 0, t_parallel = 0;
    training::FitResult serial_fit, parallel_fit;
    kernels::set_max_threads(1);
    t_serial = seconds([&] { serial_fit = training::fit(split, tcfg, {}); });
    kernels::set_max_threads(0);
    t_parallel = seconds([&] { parallel_fit = training::fit(split, tcfg, {}); });
    report("train (2 epochs)", t_serial, t_parallel);
    if (serial_fit.epoch_mean_loss != parallel_fit.epoch_mean_loss) {
      std::printf("training losses diverge between serial and parallel runs\n");
      return 1;
    }

    const LoadedModel& model = parallel_fit.model;
    evaluation::EvalReport serial_eval, parallel_eval;
    const std::size_t ks[] = {10};
    kernels::set_max_threads(1);
    t_serial = seconds([&] { serial_eval = evaluation::evaluate(model, split, ks); });
    kernels::set_max_threads(0);
    t_parallel = seconds([&] { parallel_eval = evaluation::evaluate(model, split, ks); });
    report("score all users", t_serial, t_parallel);
    if (serial_eval.rows[0].ndcg != parallel_eval.rows[0].ndcg) {
      std::printf("evaluation diverges between serial and parallel runs\n");
      return 1;
    }
  }
  return 0;
}
