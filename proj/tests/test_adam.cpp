#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mergelab/adam.hpp"

using namespace mergelab::nn;

namespace {

TensorRef param(std::vector<double> values) {
    auto t = make_tensor({static_cast<int>(values.size())}, true);
    t->data = std::move(values);
    t->ensure_grad();
    return t;
}

void set_grad(const TensorRef& t, const std::vector<double>& g) {
    t->grad = g;
}

}  // namespace

TEST_CASE("beta1=beta2=0 first step reduces to p -= lr * g / (|g| + eps)") {
    auto p = param({1.0, -2.0, 0.5});
    AdamConfig cfg{0.1, 0.0, 0.0, 1e-8, 0.0};
    Adam opt({p}, cfg);
    set_grad(p, {0.3, -0.7, 2.0});
    opt.step();
    const std::vector<double> g = {0.3, -0.7, 2.0};
    const std::vector<double> start = {1.0, -2.0, 0.5};
    for (int i = 0; i < 3; ++i) {
        const double want = start[i] - 0.1 * g[i] / (std::fabs(g[i]) + 1e-8);
        CHECK(p->data[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("three steps match an elementwise reference implementation") {
    auto p = param({0.8, -1.3});
    AdamConfig cfg{0.05, 0.9, 0.999, 1e-8, 0.0};
    Adam opt({p}, cfg);
    const std::vector<std::vector<double>> grads = {
        {0.2, -0.4}, {-0.1, 0.3}, {0.5, 0.5}};

    // independent scalar oracle
    std::vector<double> ref = {0.8, -1.3};
    std::vector<double> m(2, 0.0), v(2, 0.0);
    for (int s = 1; s <= 3; ++s) {
        for (int i = 0; i < 2; ++i) {
            const double g = grads[s - 1][i];
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
            const double mhat = m[i] / (1 - std::pow(cfg.beta1, s));
            const double vhat = v[i] / (1 - std::pow(cfg.beta2, s));
            ref[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        set_grad(p, grads[s - 1]);
        opt.step();
        for (int i = 0; i < 2; ++i) {
            CHECK(p->data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
    CHECK(opt.step_count() == 3);
}

TEST_CASE("weight decay is decoupled from the adaptive update") {
    auto p1 = param({2.0});
    auto p2 = param({2.0});
    AdamConfig no_wd{0.1, 0.9, 0.999, 1e-8, 0.0};
    AdamConfig wd = no_wd;
    wd.weight_decay = 0.01;
    Adam a({p1}, no_wd), b({p2}, wd);
    set_grad(p1, {0.5});
    set_grad(p2, {0.5});
    a.step();
    b.step();
    // decoupled decay subtracts lr*wd*p on top of the adaptive term
    CHECK(p2->data[0] == doctest::Approx(p1->data[0] - 0.1 * 0.01 * 2.0).epsilon(1e-12));
}

TEST_CASE("zero_grad clears all parameter gradients") {
    auto p = param({1.0, 2.0});
    Adam opt({p}, {});
    set_grad(p, {3.0, 4.0});
    opt.zero_grad();
    CHECK(p->grad[0] == 0.0);
    CHECK(p->grad[1] == 0.0);
}
