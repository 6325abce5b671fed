// Timing comparison between the OpenMP kernels and their serial reference
// implementations. Build and run: ./imc_bench [n_rows]
#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "imc/experts.hpp"
#include "imc/imc.hpp"
#include "imc/logsum.hpp"
#include "imc/nn.hpp"
#include "imc/parallel.hpp"
#include "imc/rng.hpp"
#include "imc/synthdata.hpp"

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
double time_ms(F&& f, int reps = 5) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        f();
        const auto t1 = Clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
    const std::size_t n = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 20000;
    std::printf("rows: %zu, threads: %d\n", n, imc::par::thread_count());

    auto task = imc::BranchTask::evenly_spaced(4);
    const auto data = imc::gen_multibranch(task, n, 7);

    imc::TrainConfig cfg;
    cfg.n_components = 8;
    cfg.arch.kind = imc::ExpertKind::neural;
    cfg.arch.hidden = {32, 32};
    auto experts = imc::init_experts(data, cfg);

    report("log_density_matrix",
           time_ms([&] { volatile auto m = imc::ref::log_density_matrix(experts, data); }),
           time_ms([&] { volatile auto m = imc::log_density_matrix(experts, data); }));

    const auto density = imc::log_density_matrix(experts, data);
    report("row_log_normalize",
           time_ms([&] { volatile auto r = imc::ref::row_log_normalize(density); }),
           time_ms([&] { volatile auto r = imc::row_log_normalize(density); }));

    report("matrix_log_sum_exp",
           time_ms([&] { volatile double v = imc::ref::matrix_log_sum_exp(density); }),
           time_ms([&] { volatile double v = imc::matrix_log_sum_exp(density); }));

    imc::RngStream rng(3);
    auto net = imc::nn::MlpParams::init({1, 64, 64, 1}, imc::Activation::tanh, 1, rng);
    std::vector<double> w(n, 1.0);
    report("mlp_forward",
           time_ms([&] { volatile auto y = imc::nn::ref::forward(net, data.observations); }),
           time_ms([&] { volatile auto y = imc::nn::forward(net, data.observations); }));
    report(
        "weighted_sq_loss (ref: no grads)",
        time_ms([&] {
            volatile double l =
                imc::nn::ref::weighted_sq_loss(net, data.observations, data.actions, w);
        }),
        time_ms([&] {
            volatile double l =
                imc::nn::weighted_sq_loss_grad(net, data.observations, data.actions, w).loss;
        }));
    return 0;
}
