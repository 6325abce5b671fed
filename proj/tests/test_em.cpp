#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "imc/em.hpp"
#include "imc/errors.hpp"
#include "imc/imc.hpp"
#include "imc/synthdata.hpp"

using namespace imc;

namespace {

LinearMean ols(const Matrix& obs, const Matrix& act) {
    return fit_linear_weighted(obs, act, std::vector<double>(obs.rows(), 1.0), 0.0);
}

}  // namespace

TEST_CASE("em_e_step trivial and Bayes oracle") {
    auto task = BranchTask::evenly_spaced(2);
    const auto data = gen_multibranch(task, 25, 1);

    // K = 1: responsibilities are identically one
    TrainConfig cfg1;
    cfg1.n_components = 1;
    auto experts1 = init_experts(data, cfg1);
    const auto q1 = em_e_step(experts1, Matrix(25, 1, 1.0), data);
    for (std::size_t n = 0; n < 25; ++n) CHECK(q1.q(n, 0) == doctest::Approx(1.0).epsilon(1e-15));

    // identical experts: the prior passes straight through
    Matrix w(1, 2, 0.3);
    std::vector<GaussianExpert> same = {GaussianExpert{LinearMean{w}, 1.0},
                                        GaussianExpert{LinearMean{w}, 1.0}};
    Matrix gating(25, 2);
    for (std::size_t n = 0; n < 25; ++n) {
        gating(n, 0) = 0.3;
        gating(n, 1) = 0.7;
    }
    const auto q2 = em_e_step(same, gating, data);
    for (std::size_t n = 0; n < 25; ++n) {
        CHECK(q2.q(n, 0) == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(q2.q(n, 1) == doctest::Approx(0.7).epsilon(1e-12));
    }

    // random instance equals the direct Bayes computation
    TrainConfig cfg3;
    cfg3.n_components = 3;
    cfg3.seed = 4;
    auto experts3 = init_experts(data, cfg3);
    RngStream rng(5);
    Matrix g3(25, 3);
    for (std::size_t n = 0; n < 25; ++n) {
        double sum = 0.0;
        for (std::size_t z = 0; z < 3; ++z) {
            g3(n, z) = rng.uniform(0.05, 1.0);
            sum += g3(n, z);
        }
        for (std::size_t z = 0; z < 3; ++z) g3(n, z) /= sum;
    }
    const auto q3 = em_e_step(experts3, g3, data);
    const auto dens = log_density_matrix(experts3, data);
    for (std::size_t n = 0; n < 25; ++n) {
        double denom = 0.0;
        std::vector<double> num(3);
        for (std::size_t z = 0; z < 3; ++z) {
            num[z] = std::exp(dens(n, z)) * g3(n, z);
            denom += num[z];
        }
        for (std::size_t z = 0; z < 3; ++z)
            CHECK(std::abs(q3.q(n, z) - num[z] / denom) <= 1e-12);
    }
}

TEST_CASE("em_m_step annihilation, symmetry and gating update") {
    auto task = BranchTask::evenly_spaced(2);
    const auto data = gen_multibranch(task, 30, 2);
    TrainConfig cfg;
    cfg.n_components = 2;
    cfg.ridge_lambda = 0.0;
    std::vector<nn::OptimizerState> opts;

    // all responsibility on component 0: expert 1 is frozen
    std::vector<GaussianExpert> experts = init_experts(data, cfg);
    const Matrix w1_before = std::get<LinearMean>(experts[1].mean_model).w;
    Responsibilities q;
    q.q = Matrix(30, 2);
    for (std::size_t n = 0; n < 30; ++n) {
        q.q(n, 0) = 1.0;
        q.q(n, 1) = 0.0;
    }
    Matrix gating(30, 2, 0.5);
    const auto dead = em_m_step(experts, gating, q, data, cfg, opts);
    CHECK(dead == std::vector<std::size_t>{1});
    CHECK(std::get<LinearMean>(experts[1].mean_model).w == w1_before);
    CHECK(gating == q.q);

    // uniform responsibilities: both experts become the unweighted fit
    Responsibilities qu;
    qu.q = Matrix(30, 2, 0.5);
    em_m_step(experts, gating, qu, data, cfg, opts);
    const auto direct = ols(data.observations, data.actions);
    for (std::size_t z = 0; z < 2; ++z) {
        const auto& w = std::get<LinearMean>(experts[z].mean_model).w;
        for (std::size_t i = 0; i < w.size(); ++i)
            CHECK(w.data()[i] == doctest::Approx(direct.w.data()[i]).epsilon(1e-10));
    }
}

TEST_CASE("em_m_step matches per-cluster OLS for hard assignments") {
    RngStream rng(3);
    Dataset data;
    data.observations = Matrix(40, 1);
    data.actions = Matrix(40, 1);
    for (std::size_t n = 0; n < 40; ++n) {
        data.observations(n, 0) = rng.uniform(-1.0, 1.0);
        data.actions(n, 0) = (n < 20 ? 1.5 : -2.5) * data.observations(n, 0) + 0.05 * rng.normal();
    }
    TrainConfig cfg;
    cfg.n_components = 2;
    cfg.ridge_lambda = 0.0;
    std::vector<nn::OptimizerState> opts;
    auto experts = init_experts(data, cfg);
    Responsibilities q;
    q.q = Matrix(40, 2, 0.0);
    for (std::size_t n = 0; n < 20; ++n) q.q(n, 0) = 1.0;
    for (std::size_t n = 20; n < 40; ++n) q.q(n, 1) = 1.0;
    Matrix gating(40, 2, 0.5);
    em_m_step(experts, gating, q, data, cfg, opts);

    std::vector<std::size_t> lo, hi;
    for (std::size_t n = 0; n < 20; ++n) lo.push_back(n);
    for (std::size_t n = 20; n < 40; ++n) hi.push_back(n);
    const auto c0 = data.select(lo);
    const auto c1 = data.select(hi);
    const auto o0 = ols(c0.observations, c0.actions);
    const auto o1 = ols(c1.observations, c1.actions);
    const auto& w0 = std::get<LinearMean>(experts[0].mean_model).w;
    const auto& w1 = std::get<LinearMean>(experts[1].mean_model).w;
    for (std::size_t i = 0; i < w0.size(); ++i) {
        CHECK(w0.data()[i] == doctest::Approx(o0.w.data()[i]).epsilon(1e-8));
        CHECK(w1.data()[i] == doctest::Approx(o1.w.data()[i]).epsilon(1e-8));
    }
}

TEST_CASE("em_train: K=1 reduces to one maximum-likelihood fit") {
    auto task = BranchTask::evenly_spaced(1);
    task.noise_sd = 0.1;
    const auto data = gen_multibranch(task, 60, 4);
    TrainConfig cfg;
    cfg.n_components = 1;
    cfg.max_iters = 5;
    cfg.epsilon = 1e-12;
    const auto model = em_train(data, cfg);
    const auto direct = ols(data.observations, data.actions);
    const auto& w = std::get<LinearMean>(model.experts[0].mean_model).w;
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(w.data()[i] == doctest::Approx(direct.w.data()[i]).epsilon(1e-8));
    // recorded likelihood equals the direct evaluation
    const double ll = em_marginal_log_likelihood(model.experts, model.gating_table, data);
    CHECK(model.history.back().marginal_log_likelihood ==
          doctest::Approx(ll).epsilon(1e-9));
}

TEST_CASE("em_train: K=1 mode averaging on the two-branch fixture") {
    auto task = BranchTask::evenly_spaced(2);  // offsets -1, +1 -> half-gap 1.0
    task.noise_sd = 0.05;
    const auto data = gen_multibranch(task, 200, 5);
    TrainConfig cfg;
    cfg.n_components = 1;
    cfg.max_iters = 10;
    const auto model = em_train(data, cfg);
    const auto& w = std::get<LinearMean>(model.experts[0].mean_model).w;
    double res[2] = {0.0, 0.0};
    for (std::size_t n = 0; n < data.size(); ++n) {
        const double o = data.observations(n, 0);
        const double mu = w(0, 0) * o + w(0, 1);
        res[0] += std::abs(mu - task.branch_value(o, 0));
        res[1] += std::abs(mu - task.branch_value(o, 1));
    }
    const double half_gap = task.gap() / 2.0;
    CHECK(res[0] / data.size() >= 0.8 * half_gap);
    CHECK(res[1] / data.size() >= 0.8 * half_gap);
}

TEST_CASE("em_train: marginal log-likelihood is monotone") {
    auto task = BranchTask::evenly_spaced(2);
    task.noise_sd = 0.05;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto data = gen_multibranch(task, 200, 10 + seed);
        TrainConfig cfg;
        cfg.n_components = 2;
        cfg.seed = static_cast<std::int64_t>(seed);
        cfg.max_iters = 50;
        cfg.epsilon = 0.0;
        const auto model = em_train(data, cfg);
        for (std::size_t i = 1; i < model.history.size(); ++i)
            CHECK(model.history[i].marginal_log_likelihood >=
                  model.history[i - 1].marginal_log_likelihood - 1e-8);
    }
}

TEST_CASE("symmetric initialization never breaks by itself") {
    auto task = BranchTask::evenly_spaced(2);
    const auto data = gen_multibranch(task, 50, 6);
    Matrix w(1, 2, 0.1);
    std::vector<GaussianExpert> experts = {GaussianExpert{LinearMean{w}, 1.0},
                                           GaussianExpert{LinearMean{w}, 1.0}};
    Matrix gating(50, 2, 0.5);
    TrainConfig cfg;
    cfg.n_components = 2;
    std::vector<nn::OptimizerState> opts;
    for (int iter = 0; iter < 10; ++iter) {
        const auto q = em_e_step(experts, gating, data);
        for (std::size_t n = 0; n < 50; ++n) {
            CHECK(q.q(n, 0) == doctest::Approx(0.5).epsilon(1e-12));
            CHECK(q.q(n, 1) == doctest::Approx(0.5).epsilon(1e-12));
        }
        em_m_step(experts, gating, q, data, cfg, opts);
        const auto& w0 = std::get<LinearMean>(experts[0].mean_model).w;
        const auto& w1 = std::get<LinearMean>(experts[1].mean_model).w;
        CHECK(w0 == w1);
    }
}

TEST_CASE("contrast: EM averages where the IMC single expert commits") {
    auto task = BranchTask::evenly_spaced(2);
    task.noise_sd = 0.05;
    const auto data = gen_multibranch(task, 200, 7);

    TrainConfig em_cfg;
    em_cfg.n_components = 1;
    em_cfg.max_iters = 10;
    const auto em = em_train(data, em_cfg);
    const auto& ew = std::get<LinearMean>(em.experts[0].mean_model).w;

    TrainConfig imc_cfg;
    imc_cfg.eta = 0.05;
    imc_cfg.sigma_sq = 0.05;
    imc_cfg.n_components = 1;
    imc_cfg.max_iters = 120;
    imc_cfg.epsilon = 1e-10;
    const auto imc = train_single_expert(data, imc_cfg);
    double mass[2] = {0.0, 0.0};
    for (std::size_t n = 0; n < data.size(); ++n)
        mass[data.behavior_labels[n]] += imc.curriculum[n];
    const int chosen = mass[1] > mass[0] ? 1 : 0;
    const auto& iw = std::get<LinearMean>(imc.expert.mean_model).w;

    double em_res = 0.0, imc_res = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
        const double o = data.observations(n, 0);
        em_res += std::abs(ew(0, 0) * o + ew(0, 1) - task.branch_value(o, chosen));
        imc_res += imc.curriculum[n] *
                   std::abs(iw(0, 0) * o + iw(0, 1) - task.branch_value(o, chosen));
    }
    em_res /= data.size();
    CHECK(em_res >= 0.8 * (task.gap() / 2.0));   // averaging: far from the branch
    CHECK(imc_res < 0.1 * task.gap());           // committed: on the branch
    CHECK(std::max(mass[0], mass[1]) >= 0.9);
}
