#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "refinery/oracle.hpp"

using namespace refinery;

namespace {

double binomial(int n, int k) {
    double v = 1.0;
    for (int i = 0; i < k; ++i) v = v * (n - i) / (i + 1);
    return v;
}

}  // namespace

TEST_CASE("T=1 collapses to the pure parallel closed form") {
    for (int k : {2, 3, 5, 7}) {
        SimParams p;
        p.k = k;
        for (int m : {1, 2, 8, 16}) {
            const double dp = oracle_solve_rate(p, Budget{m, 1, m});
            const double closed = closed_form_parallel_solve_rate(p, m);
            CHECK(dp == Catch::Approx(closed).margin(1e-12));
        }
    }
}

TEST_CASE("q=1 r=0 collapses to a binomial tail over the initial wrong count") {
    SimParams p;
    p.k = 6;
    p.q = 1.0;
    p.r = 0.0;
    p.restart_threshold = 0.0;  // score is never strictly below zero
    const double g = p.gen_success();
    for (int rounds : {1, 2, 4, 6}) {
        // Stream solves iff at most rounds-1 bindings start wrong.
        double tail = 0.0;
        for (int w = 0; w <= std::min(rounds - 1, p.k); ++w)
            tail += binomial(p.k, w) * std::pow(1.0 - g, w) * std::pow(g, p.k - w);
        const double dp = oracle_stream_solve_prob(p, rounds);
        CHECK(dp == Catch::Approx(tail).margin(1e-12));
    }
}

TEST_CASE("solve probability is monotone in rounds") {
    SimParams p;  // defaults, k=5
    double prev = 0.0;
    for (int rounds = 1; rounds <= 16; ++rounds) {
        const double cur = oracle_stream_solve_prob(p, rounds);
        CHECK(cur >= prev - 1e-15);
        prev = cur;
    }
    CHECK(prev <= 1.0 + 1e-12);
}

TEST_CASE("solve rate is non-increasing in binding count at fixed budget") {
    double prev_rate = 1.1;
    for (int k = 1; k <= 8; ++k) {
        SimParams p;
        p.k = k;
        const double rate = oracle_solve_rate(p, Budget{8, 4, 2});
        CHECK(rate <= prev_rate + 1e-12);
        prev_rate = rate;
    }
    // g(k) itself is non-increasing.
    double prev_g = 1.1;
    for (int k = 1; k <= 10; ++k) {
        SimParams p;
        p.k = k;
        CHECK(p.gen_success() <= prev_g + 1e-15);
        prev_g = p.gen_success();
    }
}

TEST_CASE("iterative depth beats parallel breadth at default parameters") {
    for (int k : {4, 5, 6, 7}) {
        SimParams p;
        p.k = k;
        for (int budget : {8, 16}) {
            const double iter = oracle_solve_rate(p, Budget{budget, budget, 1});
            const double par = oracle_solve_rate(p, Budget{budget, 1, budget});
            INFO("k=" << k << " B=" << budget << " iter=" << iter << " par=" << par);
            CHECK(iter > par);
        }
    }
}

TEST_CASE("allocations at a fixed budget improve with iterative depth") {
    SimParams p;
    p.k = 6;
    double prev = -1.0;
    for (int rounds : {1, 2, 4, 8, 16}) {
        const double rate = oracle_solve_rate(p, Budget{16, rounds, 16 / rounds});
        INFO("T=" << rounds << " rate=" << rate);
        CHECK(rate > prev);
        prev = rate;
    }
}

TEST_CASE("oracle rejects unsupported configurations") {
    SimParams p;
    p.k = 13;
    CHECK_THROWS_AS(oracle_solve_rate(p, Budget{4, 2, 2}), OracleUnsupported);
    SimParams noisy;
    noisy.fn = 0.1;
    CHECK_THROWS_AS(oracle_solve_rate(noisy, Budget{4, 2, 2}), OracleUnsupported);
    SimParams fine;
    CHECK_THROWS_AS(oracle_solve_rate(fine, Budget{5, 2, 2}), ConfigError);
}

TEST_CASE("k=0 solves trivially") {
    SimParams p;
    p.k = 0;
    CHECK(oracle_solve_rate(p, Budget{4, 4, 1}) == 1.0);
}

TEST_CASE("action masks change the policy value") {
    SimParams p;
    p.k = 6;  // defaults keep r=0.05 so regressions and restarts occur
    Budget b{16, 8, 2};
    const double full = oracle_solve_rate(p, b);

    OraclePolicy no_backtrack;
    no_backtrack.allowed_actions = {Action::Continue, Action::Restart, Action::Stop};
    OraclePolicy no_restart;
    no_restart.allowed_actions = {Action::Continue, Action::Backtrack, Action::Stop};
    OraclePolicy neither;
    neither.allowed_actions = {Action::Continue, Action::Stop};

    const double wo_bt = oracle_solve_rate(p, b, no_backtrack);
    const double wo_rs = oracle_solve_rate(p, b, no_restart);
    const double wo_both = oracle_solve_rate(p, b, neither);
    INFO("full=" << full << " wo_backtrack=" << wo_bt << " wo_restart=" << wo_rs
                 << " wo_both=" << wo_both);
    CHECK(full >= wo_bt);
    CHECK(full >= wo_rs);
    CHECK(full >= wo_both);
}

TEST_CASE("probability mass is conserved") {
    SimParams p;
    p.k = 7;
    const double solve = oracle_stream_solve_prob(p, 12);
    CHECK(solve >= 0.0);
    CHECK(solve <= 1.0 + 1e-12);
}
